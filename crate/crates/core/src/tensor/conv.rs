use super::Tensor;

/// Sliding-window geometry of a square-kernel 2-D convolution over an
/// `[N, C, H, W]` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn image_shape(&self) -> Vec<usize> {
        vec![self.batch, self.channels, self.height, self.width]
    }

    fn cols_shape(&self) -> Vec<usize> {
        vec![
            self.batch * self.out_height() * self.out_width(),
            self.channels * self.kernel * self.kernel,
        ]
    }

    /// Visits `(col_index, image_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let row_len = self.channels * k * k;
        let (h, w) = (self.height as isize, self.width as isize);
        for n in 0..self.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((n * oh + oy) * ow + ox) * row_len;
                    let y0 = (oy * self.stride) as isize - self.pad as isize;
                    let x0 = (ox * self.stride) as isize - self.pad as isize;
                    for c in 0..self.channels {
                        let plane = (n * self.channels + c) * self.height * self.width;
                        for ky in 0..k {
                            let y = y0 + ky as isize;
                            if y < 0 || y >= h {
                                continue;
                            }
                            let col = row + (c * k + ky) * k;
                            let img = plane + y as usize * self.width;
                            for kx in 0..k {
                                let x = x0 + kx as isize;
                                if x < 0 || x >= w {
                                    continue;
                                }
                                f(col + kx, img + x as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// Unfolds image patches into rows: `[N*OH*OW, C*K*K]`, rows ordered by
    /// (n, oy, ox) and columns by (c, ky, kx). Out-of-bounds taps are zero.
    pub fn im2col(&self, geom: ConvGeometry) -> Tensor {
        assert_eq!(self.shape(), geom.image_shape().as_slice(), "im2col geometry mismatch");
        let src = self.data();
        let shape = geom.cols_shape();
        let mut out = vec![0.0; shape[0] * shape[1]];
        geom.for_each_tap(|c, i| out[c] = src[i]);
        Tensor::from_op(out, shape, vec![self.clone()], move |g, _, _| {
            vec![Some(g.col2im(geom))]
        })
    }

    /// Folds patch rows back into an image, summing overlaps; adjoint of
    /// [`Tensor::im2col`].
    pub fn col2im(&self, geom: ConvGeometry) -> Tensor {
        assert_eq!(self.shape(), geom.cols_shape().as_slice(), "col2im geometry mismatch");
        let src = self.data();
        let shape = geom.image_shape();
        let mut out = vec![0.0; shape.iter().product()];
        geom.for_each_tap(|c, i| out[i] += src[c]);
        Tensor::from_op(out, shape, vec![self.clone()], move |g, _, _| {
            vec![Some(g.im2col(geom))]
        })
    }
}
