use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{ModelParams, PARAM_NAMES};
use crate::numkit::{GradTable, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, config: AdamConfig) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        let v = m.clone();
        Self { config, t: 0, m, v }
    }

    pub fn for_model(params: &ModelParams<T>, config: AdamConfig) -> Self {
        Self::new(params.tensors(), config)
    }

    /// One bias-corrected Adam update. Gradients are checked for NaN/inf
    /// before anything is modified; the error names the offending tensor.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], names: &[&str], lr: f64) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Contract(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).copied().unwrap_or("?");
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(TrainError::Contract(format!("shape mismatch for parameter {name}")));
            }
            if !g.is_finite() {
                return Err(TrainError::NonFinite { what: format!("gradient of {name}"), step: self.t + 1 });
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            for (mj, &gj) in m.iter_mut().zip(g) {
                *mj = T::cast_from(beta1 * mj.as_f64() + (1.0 - beta1) * gj.as_f64());
            }
            let v = self.v[i].data_mut();
            for (vj, &gj) in v.iter_mut().zip(g) {
                let gj = gj.as_f64();
                *vj = T::cast_from(beta2 * vj.as_f64() + (1.0 - beta2) * gj * gj);
            }
            let (m, v) = (self.m[i].data(), self.v[i].data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let m_hat = m[j].as_f64() / bc1;
                let v_hat = v[j].as_f64() / bc2;
                *w = T::cast_from(w.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to every model parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &GradTable<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), TrainError> {
    let grads: Vec<&Tensor<T>> = grads.iter().collect();
    let mut tensors = params.tensors_mut();
    state.step(&mut tensors, &grads, &PARAM_NAMES, lr)
}
