//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use viser::embedding::{Corpus, EmbeddingRecord};
use viser::mil_pooling::{mil_loss, LabelVector, LogitGrid};
use viser::model::{DropoutMasks, MlpParams};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn central_difference(f: impl Fn(f64) -> f64, at: f64) -> f64 {
    (f(at + FD_STEP) - f(at - FD_STEP)) / (2.0 * FD_STEP)
}

// ---- Noisy-OR ---------------------------------------------------------

pub fn random_grid(rng: &mut ChaCha8Rng, max_h: usize, max_w: usize, max_c: usize, span: f64) -> LogitGrid<f64> {
    let h = rng.random_range(1..=max_h);
    let w = rng.random_range(1..=max_w);
    let c = rng.random_range(1..=max_c);
    let logits = (0..h * w * c).map(|_| rng.random_range(-span..=span)).collect();
    LogitGrid::new(h, w, c, logits).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> LabelVector {
    LabelVector::new((0..n).map(|_| rng.random::<bool>()).collect())
}

/// `1 - prod_j (1 - sigmoid(f_j))`, straight from the definition.
pub fn direct_noisy_or(grid: &LogitGrid<f64>) -> Vec<f64> {
    (0..grid.classes())
        .map(|l| {
            let mut prod = 1.0;
            for r in 0..grid.height() {
                for c in 0..grid.width() {
                    let p = 1.0 / (1.0 + (-grid.get(r, c, l)).exp());
                    prod *= 1.0 - p;
                }
            }
            1.0 - prod
        })
        .collect()
}

/// First location of the maximum by a plain scan over (row, col).
pub fn argmax_oracle(grid: &LogitGrid<f64>, class: usize) -> (usize, usize) {
    let mut best = (0, 0);
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            if grid.get(r, c, class) > grid.get(best.0, best.1, class) {
                best = (r, c);
            }
        }
    }
    best
}

// ---- MLP ----------------------------------------------------------------

pub fn random_mlp(rng: &mut ChaCha8Rng, d: usize, h: usize, n: usize) -> MlpParams<f64> {
    let mut p = MlpParams::glorot(d, h, n, rng);
    for b in [&mut p.b1, &mut p.b2, &mut p.b3] {
        for v in b.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    p
}

/// Pre-activations of both hidden layers, computed without the library.
pub fn preactivations(p: &MlpParams<f64>, x: &[f64], masks: Option<&DropoutMasks<f64>>) -> (Vec<f64>, Vec<f64>) {
    let layer = |w: &[f64], b: &[f64], input: &[f64]| -> Vec<f64> {
        b.iter()
            .enumerate()
            .map(|(o, &bias)| bias + (0..input.len()).map(|k| w[o * input.len() + k] * input[k]).sum::<f64>())
            .collect()
    };
    let z1 = layer(&p.w1, &p.b1, x);
    let mut a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
    if let Some(m) = masks {
        for (a, k) in a1.iter_mut().zip(&m.h1) {
            *a *= k;
        }
    }
    let z2 = layer(&p.w2, &p.b2, &a1);
    (z1, z2)
}

/// Reference forward pass: logits.
pub fn oracle_logits(p: &MlpParams<f64>, x: &[f64], masks: Option<&DropoutMasks<f64>>) -> Vec<f64> {
    let (_, z2) = preactivations(p, x, masks);
    let mut a2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();
    if let Some(m) = masks {
        for (a, k) in a2.iter_mut().zip(&m.h2) {
            *a *= k;
        }
    }
    (0..p.outputs)
        .map(|o| p.b3[o] + (0..p.hidden).map(|k| p.w3[o * p.hidden + k] * a2[k]).sum::<f64>())
        .collect()
}

/// Summed sigmoid cross-entropy, `ln(1 + e^z) - t z`, in a stable form.
pub fn oracle_loss(p: &MlpParams<f64>, x: &[f64], t: &[f64], masks: Option<&DropoutMasks<f64>>) -> f64 {
    oracle_logits(p, x, masks)
        .iter()
        .zip(t)
        .map(|(&z, &t)| z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z)
        .sum()
}

/// Smallest distance of any hidden pre-activation from the ReLU kink.
pub fn kink_margin(p: &MlpParams<f64>, x: &[f64], masks: Option<&DropoutMasks<f64>>) -> f64 {
    let (z1, z2) = preactivations(p, x, masks);
    z1.iter().chain(&z2).fold(f64::INFINITY, |m, z| m.min(z.abs()))
}

/// Central-difference gradient over all parameters (flattened in
/// `tensors()` order) and over the input.
pub fn model_fd(p: &MlpParams<f64>, x: &[f64], t: &[f64], masks: Option<&DropoutMasks<f64>>) -> (Vec<f64>, Vec<f64>) {
    let mut params_grad = Vec::with_capacity(p.num_params());
    for k in 0..6 {
        for j in 0..p.tensors()[k].len() {
            let g = central_difference(
                |v| {
                    let mut q = p.clone();
                    q.tensors_mut()[k][j] = v;
                    oracle_loss(&q, x, t, masks)
                },
                p.tensors()[k][j],
            );
            params_grad.push(g);
        }
    }
    let input_grad = (0..x.len())
        .map(|i| {
            central_difference(
                |v| {
                    let mut y = x.to_vec();
                    y[i] = v;
                    oracle_loss(p, &y, t, masks)
                },
                x[i],
            )
        })
        .collect();
    (params_grad, input_grad)
}

pub fn flatten_params(p: &MlpParams<f64>) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

/// Central-difference gradient of the MIL loss over every logit.
pub fn mil_fd(grid: &LogitGrid<f64>, y: &LabelVector) -> Vec<f64> {
    (0..grid.logits().len())
        .map(|i| {
            central_difference(
                |v| {
                    let mut l = grid.logits().to_vec();
                    l[i] = v;
                    let g = LogitGrid::new(grid.height(), grid.width(), grid.classes(), l).unwrap();
                    mil_loss(&g, y).unwrap()
                },
                grid.logits()[i],
            )
        })
        .collect()
}

/// A random MLP, input and target away from every ReLU kink.
pub struct Case {
    pub p: MlpParams<f64>,
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub masks: Option<DropoutMasks<f64>>,
}

pub fn random_case(rng: &mut rand_chacha::ChaCha8Rng, with_masks: bool) -> Case {
    loop {
        let d = rng.random_range(1..=8);
        let h = rng.random_range(1..=12);
        let n = rng.random_range(1..=4);
        let p = random_mlp(rng, d, h, n);
        let x = gaussian(rng, d);
        // Hard or soft targets.
        let t: Vec<f64> = if rng.random::<bool>() {
            (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect()
        } else {
            (0..n).map(|_| rng.random::<f64>()).collect()
        };
        let masks = with_masks.then(|| DropoutMasks::sample(h, 0.3, rng));
        // Central differences are meaningless across a ReLU kink.
        if kink_margin(&p, &x, masks.as_ref()) > 1e-3 {
            return Case { p, x, t, masks };
        }
    }
}

/// Relative errors of the parameter and input gradients.
pub fn check_model_case(c: &Case) -> (f64, f64) {
    let g = c.p.backward_masked(&c.x, &c.t, c.masks.as_ref()).unwrap();
    let (fd_params, fd_input) = model_fd(&c.p, &c.x, &c.t, c.masks.as_ref());
    (
        rel_err(&flatten_params(&g.params), &fd_params),
        rel_err(&g.input, &fd_input),
    )
}

// ---- Corpora ------------------------------------------------------------

pub fn random_corpus(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Corpus<f64> {
    let records = (0..n)
        .map(|i| loop {
            let v = gaussian(rng, dim);
            if v.iter().any(|&x| x != 0.0) {
                break EmbeddingRecord::new(i as u64, v).unwrap();
            }
        })
        .collect();
    Corpus::new(records).unwrap()
}

/// Cosine similarities of one labeled record to every unlabeled record,
/// sorted by (score desc, id asc), computed independently of the library.
pub fn brute_force_row(l: &EmbeddingRecord<f64>, unlabeled: &Corpus<f64>) -> Vec<(u64, f64)> {
    let mut row: Vec<(u64, f64)> = unlabeled
        .records()
        .iter()
        .map(|u| {
            let dot: f64 = l.values().iter().zip(u.values()).map(|(a, b)| a * b).sum();
            (u.id, dot)
        })
        .collect();
    row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    row
}
