//! Input perturbations used as training regularizers: fast gradient sign
//! (FGSM), virtual adversarial directions (VAT), and retrieved unlabeled
//! neighbors carrying transferred labels.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::Corpus;
use crate::error::{Error, Result};
use crate::mil_pooling::LabelVector;
use crate::model::LabeledSample;
use crate::neighbor_search::{search, transfer_labels, RegularizedSample, SearchParams};
use crate::scalar::{l2_norm, Scalar};

/// A model with independent Bernoulli outputs that can report input
/// gradients of its cross-entropy loss.
pub trait Classifier<T: Scalar> {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// Per-output probability of the positive class.
    fn probabilities(&self, x: &[T]) -> Result<Vec<T>>;

    /// Summed sigmoid cross-entropy against `targets` in `[0, 1]` and its
    /// gradient with respect to `x`.
    fn loss_and_input_grad(&self, x: &[T], targets: &[T]) -> Result<(T, Vec<T>)>;
}

/// How the KL gradient of the power iteration is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlGradient {
    /// Cross-entropy input gradient against the clean distribution as soft
    /// target; equal to the KL gradient because the entropy term is constant.
    #[default]
    Analytic,
    /// Central differences over every input coordinate.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    /// l-inf budget for FGSM, l2 radius for VAT.
    pub epsilon: f64,
    /// Probe scale of the power iteration; `None` means `1e-6 * sqrt(D)`.
    pub xi: Option<f64>,
    pub power_iters: usize,
    pub kl_gradient: KlGradient,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.03,
            xi: None,
            power_iters: 1,
            kl_gradient: KlGradient::Analytic,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParams(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if let Some(xi) = self.xi {
            if !(xi > 0.0 && xi.is_finite()) {
                return Err(Error::InvalidParams(format!("xi must be > 0, got {xi}")));
            }
        }
        if self.power_iters == 0 {
            return Err(Error::InvalidParams("power_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn xi_for(&self, dim: usize) -> f64 {
        self.xi.unwrap_or(1e-6 * (dim as f64).sqrt())
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `x + eps * sign(grad_x L(x, y))`, with `sign(0) = 0`.
pub fn fgsm_perturb<T, M>(model: &M, x: &[T], y: &LabelVector, eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    M: Classifier<T> + ?Sized,
{
    let (_, grad) = model.loss_and_input_grad(x, &y.targets())?;
    fgsm_from_grad(x, &grad, eps)
}

/// FGSM step from an already computed input gradient.
pub fn fgsm_from_grad<T: Scalar>(x: &[T], grad: &[T], eps: T) -> Result<Vec<T>> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(x.iter().zip(grad).map(|(&xi, &g)| xi + eps * sign(g)).collect())
}

/// Summed KL divergence between independent Bernoulli distributions.
pub fn bernoulli_kl<T: Scalar>(p: &[T], q: &[T]) -> T {
    let term = |a: T, b: T| {
        if a > T::zero() {
            a * (a / b).ln()
        } else {
            T::zero()
        }
    };
    p.iter()
        .zip(q)
        .map(|(&a, &b)| term(a, b) + term(T::one() - a, T::one() - b))
        .sum()
}

fn kl_grad<T, M>(model: &M, x: &[T], p: &[T], r: &[T], mode: KlGradient, h: f64) -> Result<Vec<T>>
where
    T: Scalar,
    M: Classifier<T> + ?Sized,
{
    let at: Vec<T> = x.iter().zip(r).map(|(&a, &b)| a + b).collect();
    match mode {
        KlGradient::Analytic => Ok(model.loss_and_input_grad(&at, p)?.1),
        KlGradient::FiniteDifference => {
            let h = T::lit(h);
            let mut probe = at.clone();
            let mut g = Vec::with_capacity(at.len());
            for i in 0..at.len() {
                probe[i] = at[i] + h;
                let up = bernoulli_kl(p, &model.probabilities(&probe)?);
                probe[i] = at[i] - h;
                let down = bernoulli_kl(p, &model.probabilities(&probe)?);
                probe[i] = at[i];
                g.push((up - down) / (h + h));
            }
            Ok(g)
        }
    }
}

fn unit_direction<T: Scalar>(v: &[T]) -> Option<Vec<T>> {
    let n = l2_norm(v);
    if !(n > f64::MIN_POSITIVE) || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|&a| T::lit(a.to_f64_lossless() / n)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VatPerturbation<T> {
    pub perturbed: Vec<T>,
    /// Unit direction of the applied perturbation.
    pub direction: Vec<T>,
    /// The KL gradient vanished; the random start direction was used.
    pub degenerate: bool,
}

/// Moves `x` by `epsilon` along the power-iteration estimate of the
/// direction that most increases `KL[p(.|x) || p(.|x + r)]`.
pub fn vat_perturb<T, M, R>(
    model: &M,
    x: &[T],
    cfg: &PerturbationConfig,
    rng: &mut R,
) -> Result<VatPerturbation<T>>
where
    T: Scalar,
    M: Classifier<T> + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if x.len() != model.input_dim() {
        return Err(Error::Shape(format!(
            "input has dimension {}, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    let start: Vec<T> = (0..x.len())
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let d0 = unit_direction(&start).ok_or(Error::ZeroVector)?;
    let p = model.probabilities(x)?;
    let xi = cfg.xi_for(x.len());
    let mut d = d0.clone();
    let mut degenerate = false;
    for _ in 0..cfg.power_iters {
        let r: Vec<T> = d.iter().map(|&v| T::lit(xi) * v).collect();
        let g = kl_grad(model, x, &p, &r, cfg.kl_gradient, xi)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        match unit_direction(&g) {
            Some(next) => d = next,
            None => {
                degenerate = true;
                d = d0;
                break;
            }
        }
    }
    let eps = T::lit(cfg.epsilon);
    let perturbed = x.iter().zip(&d).map(|(&a, &b)| a + eps * b).collect();
    Ok(VatPerturbation {
        perturbed,
        direction: d,
        degenerate,
    })
}

/// Training set enlarged with retrieved regularizer samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented<T> {
    pub samples: Vec<LabeledSample<T>>,
    pub regularizers: Vec<RegularizedSample>,
}

/// Retrieves, for every labeled sample, its nearest unlabeled samples in the
/// embedding space and appends them with the donor's labels.
///
/// Record ids in `labeled_emb` index `labeled`; ids in `unlabeled_emb` index
/// `unlabeled_inputs`.
pub fn viser_augment<T: Scalar>(
    labeled: &[LabeledSample<T>],
    labeled_emb: &Corpus<T>,
    unlabeled_inputs: &[Vec<T>],
    unlabeled_emb: &Corpus<T>,
    params: &SearchParams,
    take: usize,
) -> Result<Augmented<T>> {
    let lookup = |id: u64, len: usize| -> Result<usize> {
        let i = id as usize;
        if i < len {
            Ok(i)
        } else {
            Err(Error::InvalidParams(format!("embedding id {id} has no sample (only {len})")))
        }
    };
    let mut table = BTreeMap::new();
    for r in labeled_emb.records() {
        table.insert(r.id, labeled[lookup(r.id, labeled.len())?].y.clone());
    }
    let neighbors = search(labeled_emb, unlabeled_emb, params)?;
    let regularizers = transfer_labels(&neighbors, &table, take)?;
    let mut samples = labeled.to_vec();
    for r in &regularizers {
        let x = unlabeled_inputs[lookup(r.features_source_id, unlabeled_inputs.len())?].clone();
        samples.push(LabeledSample {
            x,
            y: r.labels.clone(),
        });
    }
    Ok(Augmented {
        samples,
        regularizers,
    })
}
