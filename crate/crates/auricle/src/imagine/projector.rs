//! The 2-layer MLP that maps encoder space to the model's hidden size — the
//! only trainable object in Stage 2.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::atomic_write;
use crate::tinylm::model::{gelu, gelu_grad};
use crate::tinylm::TensorData;
use crate::trainer::optim::TensorCollection;

pub const PROJECTOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub d_enc: usize,
    pub d_hidden: usize,
    pub d_model: usize,
    pub seed: u64,
}

impl ProjectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_enc == 0 || self.d_hidden == 0 || self.d_model == 0 {
            return Err(Error::Config("projector dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ProjectorParams {
    pub fn zeros(cfg: &ProjectorConfig) -> ProjectorParams {
        ProjectorParams {
            w1: Array2::zeros((cfg.d_enc, cfg.d_hidden)),
            b1: Array1::zeros(cfg.d_hidden),
            w2: Array2::zeros((cfg.d_hidden, cfg.d_model)),
            b2: Array1::zeros(cfg.d_model),
        }
    }

    pub fn tensor_names() -> [&'static str; 4] {
        ["w1", "b1", "w2", "b2"]
    }
}

impl TensorCollection for ProjectorParams {
    fn tensor_views(&self) -> Vec<ArrayViewD<'_, f64>> {
        vec![
            self.w1.view().into_dyn(),
            self.b1.view().into_dyn(),
            self.w2.view().into_dyn(),
            self.b2.view().into_dyn(),
        ]
    }

    fn tensor_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![
            self.w1.view_mut().into_dyn(),
            self.b1.view_mut().into_dyn(),
            self.w2.view_mut().into_dyn(),
            self.b2.view_mut().into_dyn(),
        ]
    }
}

/// linear(d_enc -> d_hidden), GELU, linear(d_hidden -> d_model).
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub cfg: ProjectorConfig,
    pub params: ProjectorParams,
}

/// Activations cached for the backward pass of one projection.
pub struct ProjectorCache {
    pub input: Array1<f64>,
    pub h1: Array1<f64>,
    pub g: Array1<f64>,
}

impl Projector {
    pub fn new(cfg: ProjectorConfig) -> Result<Projector> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let dist = Normal::new(0.0, 0.02).expect("valid normal");
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
        };
        let w1 = draw(cfg.d_enc, cfg.d_hidden);
        let w2 = draw(cfg.d_hidden, cfg.d_model);
        Ok(Projector {
            params: ProjectorParams {
                w1,
                b1: Array1::zeros(cfg.d_hidden),
                w2,
                b2: Array1::zeros(cfg.d_model),
            },
            cfg,
        })
    }

    pub fn forward(&self, input: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(input)?.0)
    }

    pub fn forward_cached(&self, input: &Array1<f64>) -> Result<(Array1<f64>, ProjectorCache)> {
        if input.len() != self.cfg.d_enc {
            return Err(Error::Config(format!(
                "projector input has dimension {}, expected {}",
                input.len(),
                self.cfg.d_enc
            )));
        }
        if !input.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric("projector input is not finite".into()));
        }
        let h1 = input.dot(&self.params.w1) + &self.params.b1;
        let g = h1.mapv(gelu);
        let out = g.dot(&self.params.w2) + &self.params.b2;
        Ok((
            out,
            ProjectorCache {
                input: input.clone(),
                h1,
                g,
            },
        ))
    }

    /// Accumulates gradients for one projection into `grads`.
    pub fn backward(
        &self,
        cache: &ProjectorCache,
        d_out: ArrayView1<'_, f64>,
        grads: &mut ProjectorParams,
    ) {
        grads.b2 += &d_out;
        for (i, &gi) in cache.g.iter().enumerate() {
            grads.w2.row_mut(i).zip_mut_with(&d_out, |w, d| *w += gi * d);
        }
        let d_g = self.params.w2.dot(&d_out);
        let d_h1 = &d_g * &cache.h1.mapv(gelu_grad);
        grads.b1 += &d_h1;
        for (i, &xi) in cache.input.iter().enumerate() {
            grads
                .w1
                .row_mut(i)
                .zip_mut_with(&d_h1.view(), |w, d| *w += xi * d);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let names = ProjectorParams::tensor_names();
        let tensors: BTreeMap<String, TensorData> = names
            .iter()
            .zip(self.params.tensor_views())
            .map(|(name, view)| (name.to_string(), TensorData::from_view(&view)))
            .collect();
        let file = ProjectorCheckpoint {
            format_version: PROJECTOR_VERSION,
            config: self.cfg.clone(),
            tensors,
        };
        atomic_write(path, &serde_json::to_vec(&file).expect("projector serialization"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Projector> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ProjectorCheckpoint = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        if file.format_version != PROJECTOR_VERSION {
            return Err(Error::Config(format!(
                "unsupported projector checkpoint version {}",
                file.format_version
            )));
        }
        let mut projector = Projector::new(file.config.clone())?;
        let names = ProjectorParams::tensor_names();
        let mut views = projector.params.tensor_views_mut();
        for (name, view) in names.iter().zip(views.iter_mut()) {
            let stored = file
                .tensors
                .get(*name)
                .ok_or_else(|| Error::Config(format!("projector checkpoint missing '{name}'")))?;
            if stored.shape != view.shape() {
                return Err(Error::Config(format!(
                    "projector tensor '{name}' has shape {:?}, expected {:?}",
                    stored.shape,
                    view.shape()
                )));
            }
            for (dst, src) in view.iter_mut().zip(stored.data.iter()) {
                *dst = *src;
            }
        }
        Ok(projector)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProjectorCheckpoint {
    format_version: u32,
    config: ProjectorConfig,
    tensors: BTreeMap<String, TensorData>,
}
