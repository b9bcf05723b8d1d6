use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid Adam hyper-parameters {self:?}")))
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam step at (1-based) timestep `t`, in place.
pub fn adam_update(params: &mut [f64], grads: &[f64], moments: &mut Moments, t: u64, hyper: &AdamHyper) -> Result<()> {
    if params.len() != grads.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(Error::Shape("Adam buffers are not aligned with the parameters".into()));
    }
    if t == 0 {
        return Err(Error::Parameter("Adam timestep starts at 1".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("Adam gradients"));
    }
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl Adam {
    pub fn new(hyper: AdamHyper, params: &ParamStore) -> Self {
        Self {
            hyper,
            step: 0,
            moments: params.tensors().iter().map(|t| Moments::zeros(t.numel())).collect(),
        }
    }

    /// Applies one step; `grads[i]` of `None` counts as a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() || self.moments.len() != params.len() {
            return Err(Error::Shape("gradient list does not match the parameter store".into()));
        }
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(Error::numeric("Adam gradients"));
        }
        self.step += 1;
        for (i, g) in grads.iter().enumerate() {
            let mut values = params.tensors()[i].to_vec();
            let zeros;
            let g = match g {
                Some(g) => g.data(),
                None => {
                    zeros = vec![0.0; values.len()];
                    &zeros
                }
            };
            adam_update(&mut values, g, &mut self.moments[i], self.step, &self.hyper)?;
            params.set(i, values);
        }
        Ok(())
    }
}
