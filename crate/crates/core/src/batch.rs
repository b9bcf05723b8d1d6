use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A dense `[N, C, H, W]` batch of images stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub len: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageBatch {
    pub fn new(len: usize, channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != len * channels * height * width {
            return Err(Error::Shape(format!(
                "batch data has {} values, expected {len}x{channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            len,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(len: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            len,
            channels,
            height,
            width,
            data: vec![0.0; len * channels * height * width],
        }
    }

    pub fn item_size(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn item(&self, i: usize) -> &[f64] {
        let s = self.item_size();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.item_size();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn same_item_shape(&self, other: &ImageBatch) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[self.len, self.channels, self.height, self.width])
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let [n, c, h, w] = t.shape4();
        Self {
            len: n,
            channels: c,
            height: h,
            width: w,
            data: t.to_vec(),
        }
    }

    /// Items `indices` gathered into a new batch.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.item_size());
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        Self {
            len: indices.len(),
            data,
            ..*self
        }
    }

    pub fn concat(&self, other: &ImageBatch) -> Result<Self> {
        if !self.same_item_shape(other) {
            return Err(Error::Shape("cannot concatenate batches of different item shape".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            len: self.len + other.len,
            data,
            ..*self
        })
    }
}
