//! Noisy-OR multiple-instance pooling over spatial logit grids.
//!
//! For class `l` with per-location logits `f_j`, the bag probability is
//! `p = 1 - prod_j (1 - sigmoid(f_j))`. Writing `S = sum_j softplus(f_j)` gives
//! `1 - p = exp(-S)` exactly, so the loss and its gradient are evaluated from
//! `S` without ever forming the product:
//!
//! * `y = 0`: loss `S`, gradient `sigmoid(f_j)`
//! * `y = 1`: loss `-ln(1 - exp(-S))`, gradient `-sigmoid(f_j) / expm1(S)`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Smallest argument any logarithm in the loss may see.
pub const LOG_FLOOR: f64 = 1e-30;

/// Binary label vector `y in {0,1}^N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVector {
    bits: Vec<bool>,
}

impl LabelVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    /// Sets the given class indices in a length-`n` vector.
    pub fn from_indices(n: usize, active: &[u32]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &i in active {
            let slot = bits.get_mut(i as usize).ok_or_else(|| {
                Error::InvalidParams(format!("label index {i} out of range for {n} classes"))
            })?;
            *slot = true;
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, class: usize) -> bool {
        self.bits[class]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn active(&self) -> Vec<u32> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// The labels as 0/1 regression targets.
    pub fn targets<T: Scalar>(&self) -> Vec<T> {
        self.bits
            .iter()
            .map(|&b| if b { T::one() } else { T::zero() })
            .collect()
    }
}

/// An `H x W x N` tensor of per-location, per-class logits, stored row-major
/// with the class index fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitGrid<T> {
    height: usize,
    width: usize,
    classes: usize,
    logits: Vec<T>,
}

impl<T: Scalar> LogitGrid<T> {
    pub fn new(height: usize, width: usize, classes: usize, logits: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {height}x{width}x{classes}"
            )));
        }
        if logits.len() != height * width * classes {
            return Err(Error::Shape(format!(
                "{height}x{width}x{classes} grid needs {} logits, got {}",
                height * width * classes,
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            height,
            width,
            classes,
            logits,
        })
    }

    pub fn filled(height: usize, width: usize, classes: usize, value: T) -> Result<Self> {
        Self::new(height, width, classes, vec![value; height * width * classes])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, class: usize) -> usize {
        (row * self.width + col) * self.classes + class
    }

    pub fn get(&self, row: usize, col: usize, class: usize) -> T {
        self.logits[self.index(row, col, class)]
    }

    pub fn set(&mut self, row: usize, col: usize, class: usize, value: T) {
        let i = self.index(row, col, class);
        self.logits[i] = value;
    }

    /// Logits of one class, one per location in row-major order.
    pub fn class_logits(&self, class: usize) -> impl Iterator<Item = T> + '_ {
        self.logits.iter().skip(class).step_by(self.classes).copied()
    }

    fn softplus_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.classes];
        for loc in self.logits.chunks_exact(self.classes) {
            for (s, &f) in sums.iter_mut().zip(loc) {
                *s += softplus(f);
            }
        }
        sums
    }

    fn check_labels(&self, y: &LabelVector) -> Result<()> {
        if y.len() != self.classes {
            return Err(Error::Shape(format!(
                "label vector has {} entries, grid has {} classes",
                y.len(),
                self.classes
            )));
        }
        Ok(())
    }
}

/// Elementwise sigmoid of every logit, same layout as the grid.
pub fn location_probs<T: Scalar>(grid: &LogitGrid<T>) -> Vec<T> {
    grid.logits.iter().map(|&f| sigmoid(f)).collect()
}

/// Per-class Noisy-OR probability `1 - exp(-sum_j softplus(f_j))`.
pub fn noisy_or<T: Scalar>(grid: &LogitGrid<T>) -> Vec<T> {
    grid.softplus_sums()
        .into_iter()
        .map(|s| -(-s).exp_m1())
        .collect()
}

/// Per-class breakdown of the Noisy-OR cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub loss: T,
    pub per_class: Vec<T>,
    /// Classes whose log argument hit [`LOG_FLOOR`]; their gradient is zero.
    pub saturated: Vec<usize>,
}

fn neg_log_one_minus_exp<T: Scalar>(s: T) -> T {
    // -ln(1 - e^{-s}) for s > 0
    if s < T::lit(std::f64::consts::LN_2) {
        -(-(-s).exp_m1()).ln()
    } else {
        -(-(-s).exp()).ln_1p()
    }
}

struct ClassTerm<T> {
    value: T,
    saturated: bool,
}

fn class_term<T: Scalar>(s: T, positive: bool) -> ClassTerm<T> {
    let cap = -T::lit(LOG_FLOOR).ln();
    if positive {
        let p = -(-s).exp_m1();
        if p < T::lit(LOG_FLOOR) {
            ClassTerm {
                value: cap,
                saturated: true,
            }
        } else {
            ClassTerm {
                value: neg_log_one_minus_exp(s),
                saturated: false,
            }
        }
    } else if s > cap {
        ClassTerm {
            value: cap,
            saturated: true,
        }
    } else {
        ClassTerm {
            value: s,
            saturated: false,
        }
    }
}

pub fn mil_loss_report<T: Scalar>(grid: &LogitGrid<T>, y: &LabelVector) -> Result<LossReport<T>> {
    grid.check_labels(y)?;
    let mut per_class = Vec::with_capacity(grid.classes);
    let mut saturated = Vec::new();
    for (l, s) in grid.softplus_sums().into_iter().enumerate() {
        let t = class_term(s, y.get(l));
        if t.saturated {
            saturated.push(l);
        }
        per_class.push(t.value);
    }
    let loss = per_class.iter().copied().sum();
    Ok(LossReport {
        loss,
        per_class,
        saturated,
    })
}

/// Summed binary cross-entropy between `y` and the Noisy-OR probabilities.
pub fn mil_loss<T: Scalar>(grid: &LogitGrid<T>, y: &LabelVector) -> Result<T> {
    mil_loss_report(grid, y).map(|r| r.loss)
}

/// Gradient of [`mil_loss`] with respect to every logit.
pub fn mil_loss_grad<T: Scalar>(grid: &LogitGrid<T>, y: &LabelVector) -> Result<Vec<T>> {
    grid.check_labels(y)?;
    let sums = grid.softplus_sums();
    let scale: Vec<T> = sums
        .iter()
        .enumerate()
        .map(|(l, &s)| {
            let positive = y.get(l);
            if class_term(s, positive).saturated {
                T::zero()
            } else if positive {
                -T::one() / s.exp_m1()
            } else {
                T::one()
            }
        })
        .collect();
    let mut grad = Vec::with_capacity(grid.logits.len());
    for loc in grid.logits.chunks_exact(grid.classes) {
        for (&f, &k) in loc.iter().zip(&scale) {
            grad.push(sigmoid(f) * k);
        }
    }
    Ok(grad)
}

/// Location of the strongest response for `class`; ties go to the first
/// location in row-major order.
pub fn localize<T: Scalar>(grid: &LogitGrid<T>, class: usize) -> Result<(usize, usize)> {
    if class >= grid.classes {
        return Err(Error::InvalidParams(format!(
            "class {class} out of range for {} classes",
            grid.classes
        )));
    }
    let mut best = 0usize;
    let mut best_v = T::neg_infinity();
    for (j, v) in grid.class_logits(class).enumerate() {
        if v > best_v {
            best = j;
            best_v = v;
        }
    }
    Ok((best / grid.width, best % grid.width))
}
