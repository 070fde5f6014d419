//! AdamW with decoupled weight decay, plus global-norm gradient clipping.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD};

use crate::tinylm::ParamSet;

/// Anything exposing its tensors in a stable order. Parameters, gradients and
/// optimizer moments all share one structure.
pub trait TensorCollection {
    fn tensor_views(&self) -> Vec<ArrayViewD<'_, f64>>;
    fn tensor_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;
}

impl TensorCollection for ParamSet {
    fn tensor_views(&self) -> Vec<ArrayViewD<'_, f64>> {
        self.views()
    }

    fn tensor_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        self.views_mut()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// AdamW over any tensor collection. Moment tensors mirror the parameter
/// shapes.
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, like: &impl TensorCollection) -> AdamW {
        let zeros: Vec<ArrayD<f64>> = like
            .tensor_views()
            .iter()
            .map(|t| ArrayD::zeros(t.raw_dim()))
            .collect();
        AdamW {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: decoupled weight decay plus bias-corrected Adam step.
    pub fn step(&mut self, params: &mut impl TensorCollection, grads: &impl TensorCollection) {
        self.step += 1;
        let c1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        let grad_views = grads.tensor_views();
        for (ti, mut p) in params.tensor_views_mut().into_iter().enumerate() {
            let g = &grad_views[ti];
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for ((pi, &gi), (mi, vi)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * gi;
                *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= self.cfg.learning_rate
                    * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * *pi);
            }
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`. Returns
/// the pre-clip norm.
pub fn clip_global_norm(grads: &mut impl TensorCollection, max_norm: f64) -> f64 {
    let norm = grads
        .tensor_views()
        .iter()
        .map(|t| t.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for mut t in grads.tensor_views_mut() {
            t.mapv_inplace(|x| x * factor);
        }
    }
    norm
}
