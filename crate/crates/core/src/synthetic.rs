//! Two-class multimodal Gaussian mixture in a low-dimensional latent plane,
//! lifted linearly into a higher-dimensional ambient space.
//!
//! Each class owns `modes_per_class` modes with means uniform in
//! `[-mean_half_width, mean_half_width]^latent_dim` and covariance
//! `R diag(s^2) R^T` (rotation angle uniform in `[0, pi)`, scales uniform in
//! `[scale_min, scale_max]`). The lift is a random matrix with orthonormal
//! columns, so latent geometry is preserved exactly.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::format::JsonlRecord;
use crate::error::{Error, Result};
use crate::mil_pooling::LabelVector;
use crate::model::{LabeledSample, MlpParams};
use crate::rng::{stream_rng, streams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub modes_per_class: usize,
    pub train_per_mode: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub ambient_dim: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub mean_half_width: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            modes_per_class: 8,
            train_per_mode: 1,
            n_unlabeled: 1000,
            n_test: 1000,
            ambient_dim: 100,
            latent_dim: 2,
            seed: 0,
            mean_half_width: 4.0,
            scale_min: 0.07,
            scale_max: 0.25,
        }
    }
}

impl SyntheticSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes_per_class == 0
            || self.train_per_mode == 0
            || self.n_unlabeled == 0
            || self.n_test == 0
            || self.latent_dim == 0
        {
            return Err(Error::InvalidParams("synthetic counts must be positive".into()));
        }
        if self.ambient_dim < self.latent_dim {
            return Err(Error::InvalidParams(format!(
                "ambient_dim {} is smaller than latent_dim {}",
                self.ambient_dim, self.latent_dim
            )));
        }
        if !(self.mean_half_width > 0.0 && self.scale_min > 0.0 && self.scale_max >= self.scale_min) {
            return Err(Error::InvalidParams("invalid mean or scale range".into()));
        }
        Ok(())
    }
}

/// One Gaussian mode in latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub class: usize,
    pub mean: Vec<f64>,
    /// Columns of the rotation, each scaled by its standard deviation:
    /// a draw is `mean + factor * z` with `z ~ N(0, I)`.
    pub factor: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl Mode {
    /// Log density up to the shared `-(d/2) ln(2 pi)` constant.
    pub fn log_density(&self, latent: &[f64]) -> f64 {
        // factor = R diag(s); whitened coordinate k is (R^T (x - mu))_k / s_k
        let diff: Vec<f64> = latent.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut quad = 0.0;
        let mut log_det = 0.0;
        for (k, s) in self.scales.iter().enumerate() {
            let proj: f64 = (0..diff.len()).map(|i| self.factor[i][k] / s * diff[i]).sum();
            let w = proj / s;
            quad += w * w;
            log_det += s.ln();
        }
        -0.5 * quad - log_det
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub ambient: Vec<f64>,
    pub latent: Vec<f64>,
    pub class: usize,
    pub mode: usize,
}

impl SyntheticSample {
    pub fn labeled<T: Scalar>(&self) -> LabeledSample<T> {
        LabeledSample {
            x: self.ambient.iter().map(|&v| T::lit(v)).collect(),
            y: LabelVector::new(vec![self.class == 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub modes: Vec<Mode>,
    /// Row-major `ambient_dim x latent_dim`, orthonormal columns.
    pub embedding_matrix: Vec<f64>,
    pub train: Vec<SyntheticSample>,
    pub unlabeled: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

fn gram_schmidt_columns(m: &mut [f64], rows: usize, cols: usize) {
    for c in 0..cols {
        for p in 0..c {
            let dot: f64 = (0..rows).map(|r| m[r * cols + c] * m[r * cols + p]).sum();
            for r in 0..rows {
                m[r * cols + c] -= dot * m[r * cols + p];
            }
        }
        let norm = (0..rows).map(|r| m[r * cols + c].powi(2)).sum::<f64>().sqrt();
        for r in 0..rows {
            m[r * cols + c] /= norm;
        }
    }
}

fn random_rotation<R: Rng>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    if d == 2 {
        let theta = rng.random_range(0.0..PI);
        let (s, c) = theta.sin_cos();
        return vec![vec![c, -s], vec![s, c]];
    }
    let mut m: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
    gram_schmidt_columns(&mut m, d, d);
    m.chunks(d).map(<[f64]>::to_vec).collect()
}

impl SyntheticDataset {
    /// Lifts a latent point into the ambient space.
    pub fn lift(&self, latent: &[f64]) -> Vec<f64> {
        let l = self.spec.latent_dim;
        self.embedding_matrix
            .chunks_exact(l)
            .map(|row| row.iter().zip(latent).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `E^T x`, the pseudo-inverse of the lift.
    pub fn project(&self, ambient: &[f64]) -> Vec<f64> {
        let l = self.spec.latent_dim;
        let mut out = vec![0.0; l];
        for (row, &a) in self.embedding_matrix.chunks_exact(l).zip(ambient) {
            for (o, &e) in out.iter_mut().zip(row) {
                *o += e * a;
            }
        }
        out
    }

    pub fn train_samples<T: Scalar>(&self) -> Vec<LabeledSample<T>> {
        self.train.iter().map(SyntheticSample::labeled).collect()
    }

    pub fn unlabeled_inputs<T: Scalar>(&self) -> Vec<Vec<T>> {
        self.unlabeled
            .iter()
            .map(|s| s.ambient.iter().map(|&v| T::lit(v)).collect())
            .collect()
    }

    /// Classifies by the single most likely ground-truth mode.
    pub fn nearest_mode_class(&self, latent: &[f64]) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for m in &self.modes {
            let ld = m.log_density(latent);
            if ld > best.0 {
                best = (ld, m.class);
            }
        }
        best.1
    }

    /// Test error (%) of [`Self::nearest_mode_class`].
    pub fn nearest_mode_error(&self) -> f64 {
        let wrong = self
            .test
            .iter()
            .filter(|s| self.nearest_mode_class(&s.latent) != s.class)
            .count();
        100.0 * wrong as f64 / self.test.len() as f64
    }

    /// JSONL export; `labels` is `[class]` except for unlabeled samples.
    pub fn export_records(samples: &[SyntheticSample], with_labels: bool) -> Vec<JsonlRecord<f64>> {
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| JsonlRecord {
                id: i as u64,
                vector: s.ambient.clone(),
                labels: with_labels.then(|| vec![s.class as u32]),
            })
            .collect()
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, streams::DATA);
    let d = spec.latent_dim;

    let mut modes = Vec::with_capacity(2 * spec.modes_per_class);
    for class in 0..2 {
        for _ in 0..spec.modes_per_class {
            let mean: Vec<f64> = (0..d)
                .map(|_| rng.random_range(-spec.mean_half_width..=spec.mean_half_width))
                .collect();
            let rot = random_rotation(d, &mut rng);
            let scales: Vec<f64> = (0..d)
                .map(|_| rng.random_range(spec.scale_min..=spec.scale_max))
                .collect();
            let factor = (0..d)
                .map(|i| (0..d).map(|k| rot[i][k] * scales[k]).collect())
                .collect();
            modes.push(Mode {
                class,
                mean,
                factor,
                scales,
            });
        }
    }

    let mut embedding_matrix: Vec<f64> = (0..spec.ambient_dim * d)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    gram_schmidt_columns(&mut embedding_matrix, spec.ambient_dim, d);

    let mut ds = SyntheticDataset {
        spec: spec.clone(),
        modes,
        embedding_matrix,
        train: Vec::new(),
        unlabeled: Vec::new(),
        test: Vec::new(),
    };

    let draw = |ds: &SyntheticDataset, mode: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let m = &ds.modes[mode];
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let latent: Vec<f64> = (0..d)
            .map(|i| m.mean[i] + (0..d).map(|k| m.factor[i][k] * z[k]).sum::<f64>())
            .collect();
        SyntheticSample {
            ambient: ds.lift(&latent),
            latent,
            class: m.class,
            mode,
        }
    };

    let mut train = Vec::new();
    for mode in 0..ds.modes.len() {
        for _ in 0..spec.train_per_mode {
            train.push(draw(&ds, mode, &mut rng));
        }
    }
    let pool = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        (0..n)
            .map(|i| {
                let class = i % 2;
                let mode = class * spec.modes_per_class + rng.random_range(0..spec.modes_per_class);
                draw(&ds, mode, rng)
            })
            .collect::<Vec<_>>()
    };
    let unlabeled = pool(spec.n_unlabeled, &mut rng);
    let test = pool(spec.n_test, &mut rng);
    ds.train = train;
    ds.unlabeled = unlabeled;
    ds.test = test;
    Ok(ds)
}

/// `p(y = 1 | x)` on a `resolution x resolution` lattice over latent
/// `[-6, 6]^2`, lifted into the ambient space. Row `i` holds latent
/// y-coordinate `-6 + 12 i / (resolution - 1)`, column `j` the x-coordinate.
pub fn contour_grid<T: Scalar>(
    model: &MlpParams<T>,
    dataset: &SyntheticDataset,
    resolution: usize,
) -> Result<Vec<Vec<f64>>> {
    if dataset.spec.latent_dim != 2 {
        return Err(Error::InvalidParams("contour grids need a 2-D latent space".into()));
    }
    if resolution < 2 {
        return Err(Error::InvalidParams("resolution must be >= 2".into()));
    }
    let coord = |i: usize| -6.0 + 12.0 * i as f64 / (resolution - 1) as f64;
    (0..resolution)
        .map(|i| {
            (0..resolution)
                .map(|j| {
                    let x: Vec<T> = dataset
                        .lift(&[coord(j), coord(i)])
                        .into_iter()
                        .map(T::lit)
                        .collect();
                    Ok(model.predict(&x)?[0].to_f64_lossless())
                })
                .collect()
        })
        .collect()
}

/// Lattice coordinate list matching [`contour_grid`].
pub fn contour_axis(resolution: usize) -> Vec<f64> {
    (0..resolution)
        .map(|i| -6.0 + 12.0 * i as f64 / (resolution.max(2) - 1) as f64)
        .collect()
}
