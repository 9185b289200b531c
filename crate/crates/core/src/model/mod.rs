//! Two-hidden-layer ReLU perceptron with per-class sigmoid outputs.
//!
//! `h1 = relu(W1 x + b1)`, `h2 = relu(W2 h1 + b2)`, `logits = W3 h2 + b3`.
//! Weights are row-major `out x in`. Gradients are analytic; dropout uses
//! inverted scaling so inference needs no rescaling.

pub mod checkpoint;
mod train;

pub use train::{train, Method, TrainConfig, TrainCurve, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{normalize_slice, FeatureVector};
use crate::error::{Error, Result};
use crate::mil_pooling::LabelVector;
use crate::perturbation::Classifier;
use crate::scalar::{sigmoid, softplus, Scalar};

pub const DEFAULT_HIDDEN: usize = 100;

/// A training example: input features and binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample<T> {
    pub x: Vec<T>,
    pub y: LabelVector,
}

/// Network parameters. The same struct holds parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub input_dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub w3: Vec<T>,
    pub b3: Vec<T>,
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    pub logits: Vec<T>,
    pub penultimate: Vec<T>,
    h1: Vec<T>,
}

/// Inverted-dropout multipliers for both hidden layers (`0` or `1/(1-p)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    pub h1: Vec<T>,
    pub h2: Vec<T>,
}

impl<T: Scalar> DropoutMasks<T> {
    pub fn sample<R: Rng + ?Sized>(hidden: usize, p: f64, rng: &mut R) -> Self {
        let keep = T::lit(1.0 / (1.0 - p));
        let mut draw = || {
            (0..hidden)
                .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                .collect()
        };
        let h1 = draw();
        let h2 = draw();
        Self { h1, h2 }
    }
}

/// Parameter gradients plus the gradient with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: MlpParams<T>,
    pub input: Vec<T>,
    pub loss: T,
}

fn matvec<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut Vec<T>) {
    let cols = x.len();
    out.clear();
    for (row, &bias) in w.chunks_exact(cols).zip(b) {
        out.push(bias + dot(row, x));
    }
}

/// Dot product with eight independent partial sums (fixed order, so results
/// are deterministic), then a sequential tail.
#[inline(always)]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (ra, rb) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += ra[i] * rb[i];
        }
    }
    let mut acc = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
    for (&x, &y) in ta.iter().zip(tb) {
        acc += x * y;
    }
    acc
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(input_dim: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            input_dim,
            hidden,
            outputs,
            w1: vec![T::zero(); hidden * input_dim],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); hidden * hidden],
            b2: vec![T::zero(); hidden],
            w3: vec![T::zero(); outputs * hidden],
            b3: vec![T::zero(); outputs],
        }
    }

    /// Uniform Glorot initialization of the weights; biases start at zero.
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden, outputs);
        let mut fill = |w: &mut [T], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w {
                *v = T::lit(rng.random_range(-limit..=limit));
            }
        };
        fill(&mut p.w1, input_dim, hidden);
        fill(&mut p.w2, hidden, hidden);
        fill(&mut p.w3, hidden, outputs);
        p
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.input_dim, self.hidden, self.outputs)
    }

    pub fn tensors(&self) -> [&[T]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, n) = self.shape();
        let expected = [h * d, h, h * h, h, n * h, n];
        for (t, e) in self.tensors().iter().zip(expected) {
            if t.len() != e {
                return Err(Error::Shape(format!("tensor has {} values, expected {e}", t.len())));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Forward<T>> {
        self.forward_masked(x, None)
    }

    pub fn forward_masked(&self, x: &[T], masks: Option<&DropoutMasks<T>>) -> Result<Forward<T>> {
        self.check_input(x)?;
        let mut h1 = Vec::with_capacity(self.hidden);
        matvec(&self.w1, &self.b1, x, &mut h1);
        for v in &mut h1 {
            *v = v.max(T::zero());
        }
        if let Some(m) = masks {
            for (v, &k) in h1.iter_mut().zip(&m.h1) {
                *v *= k;
            }
        }
        let mut h2 = Vec::with_capacity(self.hidden);
        matvec(&self.w2, &self.b2, &h1, &mut h2);
        for v in &mut h2 {
            *v = v.max(T::zero());
        }
        if let Some(m) = masks {
            for (v, &k) in h2.iter_mut().zip(&m.h2) {
                *v *= k;
            }
        }
        let mut logits = Vec::with_capacity(self.outputs);
        matvec(&self.w3, &self.b3, &h2, &mut logits);
        Ok(Forward {
            logits,
            penultimate: h2,
            h1,
        })
    }

    /// Per-class probabilities `sigmoid(logits)`.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(x)?.logits.into_iter().map(sigmoid).collect())
    }

    /// L2-normalized penultimate activations. Fails with `ZeroVector` when
    /// every unit of the last hidden layer is inactive.
    pub fn penultimate(&self, x: &[T]) -> Result<FeatureVector<T>> {
        let h2 = self.forward(x)?.penultimate;
        FeatureVector::new(normalize_slice(&h2)?)
    }

    /// Summed sigmoid cross-entropy against `targets` (0/1 or soft) and its
    /// exact gradient with respect to every parameter and the input.
    pub fn backward(&self, x: &[T], targets: &[T]) -> Result<Gradients<T>> {
        self.backward_masked(x, targets, None)
    }

    pub fn backward_masked(
        &self,
        x: &[T],
        targets: &[T],
        masks: Option<&DropoutMasks<T>>,
    ) -> Result<Gradients<T>> {
        if targets.len() != self.outputs {
            return Err(Error::Shape(format!(
                "{} targets for {} outputs",
                targets.len(),
                self.outputs
            )));
        }
        let fwd = self.forward_masked(x, masks)?;
        let (loss, dlogits) = Self::output_loss(&fwd, targets);
        let mut g = self.backward_from_logits(x, &fwd, &dlogits, masks);
        g.loss = loss;
        Ok(g)
    }

    /// Backpropagates an arbitrary upstream gradient `dL/dlogits`.
    pub fn backward_from_logits(
        &self,
        x: &[T],
        fwd: &Forward<T>,
        dlogits: &[T],
        masks: Option<&DropoutMasks<T>>,
    ) -> Gradients<T> {
        let mut params = Self::zeros(self.input_dim, self.hidden, self.outputs);
        let input = self.accumulate_from_logits(x, fwd, dlogits, masks, &mut params);
        Gradients {
            params,
            input,
            loss: T::zero(),
        }
    }

    /// Adds the parameter gradient for `dlogits` into `acc` and returns the
    /// input gradient.
    pub fn accumulate_from_logits(
        &self,
        x: &[T],
        fwd: &Forward<T>,
        dlogits: &[T],
        masks: Option<&DropoutMasks<T>>,
        acc: &mut Self,
    ) -> Vec<T> {
        self.backprop(x, fwd, dlogits, masks, Some(acc))
    }

    /// Input gradient only; parameter gradients are not formed.
    pub fn input_grad_from_logits(&self, x: &[T], fwd: &Forward<T>, dlogits: &[T]) -> Vec<T> {
        self.backprop(x, fwd, dlogits, None, None)
    }

    fn backprop(
        &self,
        x: &[T],
        fwd: &Forward<T>,
        dlogits: &[T],
        masks: Option<&DropoutMasks<T>>,
        mut acc: Option<&mut Self>,
    ) -> Vec<T> {
        let (d, h, _) = self.shape();

        let mut dh2 = vec![T::zero(); h];
        for (o, &dz) in dlogits.iter().enumerate() {
            let row = &self.w3[o * h..(o + 1) * h];
            if let Some(acc) = acc.as_deref_mut() {
                acc.b3[o] += dz;
                let grow = &mut acc.w3[o * h..(o + 1) * h];
                for (g, &a) in grow.iter_mut().zip(&fwd.penultimate) {
                    *g += dz * a;
                }
            }
            for (g, &r) in dh2.iter_mut().zip(row) {
                *g += dz * r;
            }
        }
        // The stored activation is zero exactly when the unit is inactive or
        // dropped.
        for k in 0..h {
            if fwd.penultimate[k] <= T::zero() {
                dh2[k] = T::zero();
            } else if let Some(m) = masks {
                dh2[k] *= m.h2[k];
            }
        }

        let mut dh1 = vec![T::zero(); h];
        for (o, &dz) in dh2.iter().enumerate() {
            if dz == T::zero() {
                continue;
            }
            let row = &self.w2[o * h..(o + 1) * h];
            if let Some(acc) = acc.as_deref_mut() {
                acc.b2[o] += dz;
                let grow = &mut acc.w2[o * h..(o + 1) * h];
                for (g, &a) in grow.iter_mut().zip(&fwd.h1) {
                    *g += dz * a;
                }
            }
            for (g, &r) in dh1.iter_mut().zip(row) {
                *g += dz * r;
            }
        }
        for k in 0..h {
            if fwd.h1[k] <= T::zero() {
                dh1[k] = T::zero();
            } else if let Some(m) = masks {
                dh1[k] *= m.h1[k];
            }
        }

        let mut dx = vec![T::zero(); d];
        for (o, &dz) in dh1.iter().enumerate() {
            if dz == T::zero() {
                continue;
            }
            let row = &self.w1[o * d..(o + 1) * d];
            if let Some(acc) = acc.as_deref_mut() {
                acc.b1[o] += dz;
                let grow = &mut acc.w1[o * d..(o + 1) * d];
                for (g, &a) in grow.iter_mut().zip(x) {
                    *g += dz * a;
                }
            }
            for (g, &r) in dx.iter_mut().zip(row) {
                *g += dz * r;
            }
        }
        dx
    }

    /// Sigmoid cross-entropy loss and upstream gradient for one forward pass.
    pub fn output_loss(fwd: &Forward<T>, targets: &[T]) -> (T, Vec<T>) {
        let mut loss = T::zero();
        let d = fwd
            .logits
            .iter()
            .zip(targets)
            .map(|(&z, &t)| {
                loss += softplus(z) - t * z;
                sigmoid(z) - t
            })
            .collect();
        (loss, d)
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }
}

impl<T: Scalar> Classifier<T> for MlpParams<T> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.outputs
    }

    fn probabilities(&self, x: &[T]) -> Result<Vec<T>> {
        self.predict(x)
    }

    fn loss_and_input_grad(&self, x: &[T], targets: &[T]) -> Result<(T, Vec<T>)> {
        if targets.len() != self.outputs {
            return Err(Error::Shape(format!("{} targets for {} outputs", targets.len(), self.outputs)));
        }
        let fwd = self.forward(x)?;
        let (loss, dl) = Self::output_loss(&fwd, targets);
        Ok((loss, self.input_grad_from_logits(x, &fwd, &dl)))
    }
}

/// Convenience: targets of a labeled sample.
pub fn targets_of<T: Scalar>(y: &LabelVector) -> Vec<T> {
    y.targets()
}
