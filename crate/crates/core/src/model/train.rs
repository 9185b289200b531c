use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DropoutMasks, LabeledSample, MlpParams};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::perturbation::{fgsm_from_grad, vat_perturb, PerturbationConfig};
use crate::scalar::{sigmoid, Scalar};


/// Training regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CrossEntropy,
    Dropout,
    /// Adversarial training with FGSM samples.
    At,
    /// Virtual adversarial training.
    Vat,
    /// Plain cross-entropy on a neighbor-augmented set; the augmentation
    /// itself happens before `train` is called.
    Viser,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::CrossEntropy,
        Method::Dropout,
        Method::At,
        Method::Vat,
        Method::Viser,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::CrossEntropy => "cross_entropy",
            Method::Dropout => "dropout",
            Method::At => "at",
            Method::Vat => "vat",
            Method::Viser => "viser",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cross_entropy" | "none" | "ce" => Some(Method::CrossEntropy),
            "dropout" => Some(Method::Dropout),
            "at" => Some(Method::At),
            "vat" => Some(Method::Vat),
            "viser" => Some(Method::Viser),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub decay_steps: Vec<usize>,
    pub iterations: usize,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub seed: u64,
    /// Weight of the perturbed-sample term relative to the clean term.
    pub perturbed_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            lr_decay_factor: 0.1,
            decay_steps: vec![3000, 4000],
            iterations: 5000,
            batch_size: 16,
            dropout_p: 0.5,
            seed: 0,
            perturbed_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must be in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return bad("iterations and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if !(self.perturbed_weight >= 0.0) {
            return bad("perturbed_weight must be >= 0".into());
        }
        let mut prev = None;
        for &s in &self.decay_steps {
            if prev.is_some_and(|p| s <= p) || s >= self.iterations {
                return bad(format!(
                    "decay_steps must be strictly increasing and below {}",
                    self.iterations
                ));
            }
            prev = Some(s);
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let decays = self.decay_steps.iter().filter(|&&s| s <= step).count();
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }
}

/// Mean clean loss sampled every `every` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    pub every: usize,
    pub loss: Vec<f64>,
    /// Steps at which the loss exceeded its value one monitoring window
    /// earlier.
    pub window_violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub params: MlpParams<T>,
    pub curve: TrainCurve,
}

const CURVE_EVERY: usize = 50;
const MONITOR_WINDOW: usize = 500;

/// Seeded mini-batch SGD with the batch-mean gradient.
///
/// Adversarial training descends `(clean + w * adversarial) / (1 + w)`;
/// virtual adversarial training descends `clean + w * KL`, with the clean
/// distribution held fixed inside the KL term. Both reduce to plain
/// cross-entropy bit for bit when `epsilon = 0`.
pub fn train<T: Scalar>(
    init: &MlpParams<T>,
    data: &[LabeledSample<T>],
    cfg: &TrainConfig,
    method: Method,
    pert: &PerturbationConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    pert.validate()?;
    init.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for s in data {
        if s.x.len() != init.input_dim || s.y.len() != init.outputs {
            return Err(Error::Shape(format!(
                "sample ({} features, {} labels) does not fit a {}->{} network",
                s.x.len(),
                s.y.len(),
                init.input_dim,
                init.outputs
            )));
        }
    }

    let mut batch_rng = stream_rng(cfg.seed, streams::BATCHES);
    let mut dropout_rng = stream_rng(cfg.seed, streams::DROPOUT);
    let mut vat_rng = stream_rng(cfg.seed, streams::VAT);
    let use_dropout = method == Method::Dropout && cfg.dropout_p > 0.0;
    let perturbs = matches!(method, Method::At | Method::Vat);
    let eps = T::lit(pert.epsilon);
    let w = T::lit(cfg.perturbed_weight);
    let (d, h, n) = init.shape();

    let mut params = init.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut curve = TrainCurve {
        every: CURVE_EVERY,
        loss: Vec::new(),
        window_violations: Vec::new(),
    };
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for step in 0..cfg.iterations {
        batch.clear();
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut batch_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let mut clean = MlpParams::zeros(d, h, n);
        let mut perturbed = if perturbs {
            Some(MlpParams::zeros(d, h, n))
        } else {
            None
        };
        let mut loss_sum = T::zero();
        for &i in &batch {
            let s = &data[i];
            let targets = s.y.targets::<T>();
            let masks = use_dropout.then(|| DropoutMasks::sample(h, cfg.dropout_p, &mut dropout_rng));
            let fwd = params.forward_masked(&s.x, masks.as_ref())?;
            let (loss, dl) = MlpParams::output_loss(&fwd, &targets);
            loss_sum += loss;
            let dx = params.accumulate_from_logits(&s.x, &fwd, &dl, masks.as_ref(), &mut clean);

            match (method, perturbed.as_mut()) {
                (Method::At, Some(acc)) => {
                    // No dropout under AT, so the clean pass already holds
                    // the gradient FGSM needs.
                    let x_adv = fgsm_from_grad(&s.x, &dx, eps)?;
                    let fwd = params.forward(&x_adv)?;
                    let (_, dl) = MlpParams::output_loss(&fwd, &targets);
                    params.accumulate_from_logits(&x_adv, &fwd, &dl, None, acc);
                }
                (Method::Vat, Some(acc)) => {
                    let p: Vec<T> = fwd.logits.iter().map(|&z| sigmoid(z)).collect();
                    let v = vat_perturb(&params, &s.x, pert, &mut vat_rng)?;
                    let fwd = params.forward(&v.perturbed)?;
                    let (_, dl) = MlpParams::output_loss(&fwd, &p);
                    params.accumulate_from_logits(&v.perturbed, &fwd, &dl, None, acc);
                }
                _ => {}
            }
        }

        let mean_loss = loss_sum.to_f64_lossless() / batch.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        if step % CURVE_EVERY == 0 {
            let lag = MONITOR_WINDOW / CURVE_EVERY;
            if curve.loss.len() >= lag && mean_loss > curve.loss[curve.loss.len() - lag] {
                curve.window_violations.push(step);
            }
            curve.loss.push(mean_loss);
        }

        let rate = T::lit(cfg.learning_rate_at(step) / batch.len() as f64);
        let denom = T::one() + w;
        for (k, (p, c)) in params
            .tensors_mut()
            .into_iter()
            .zip(clean.tensors())
            .enumerate()
        {
            let pt = perturbed.as_ref().map(|a| a.tensors()[k]);
            for (j, (pv, &cv)) in p.iter_mut().zip(c).enumerate() {
                let g = match (method, pt) {
                    (Method::At, Some(a)) => (cv + w * a[j]) / denom,
                    (Method::Vat, Some(a)) => cv + w * a[j],
                    _ => cv,
                };
                *pv -= rate * g;
            }
        }
        if !params.is_finite() {
            return Err(Error::Divergence { step });
        }
    }
    Ok(TrainOutcome { params, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil_pooling::LabelVector;

    fn two_points() -> Vec<LabeledSample<f64>> {
        vec![
            LabeledSample { x: vec![1.0, 0.5], y: LabelVector::new(vec![true]) },
            LabeledSample { x: vec![-1.0, -0.5], y: LabelVector::new(vec![false]) },
        ]
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            decay_steps: vec![],
            iterations: 200,
            batch_size: 2,
            ..Default::default()
        }
    }

    fn init(seed: u64) -> MlpParams<f64> {
        MlpParams::glorot(2, 16, 1, &mut stream_rng(seed, 0))
    }

    #[test]
    fn separable_pair_is_fit() {
        let data = two_points();
        let out = train(&init(0), &data, &quick_cfg(), Method::CrossEntropy, &Default::default()).unwrap();
        for s in &data {
            let p = out.params.predict(&s.x).unwrap()[0];
            assert_eq!(p > 0.5, s.y.get(0));
        }
    }

    #[test]
    fn same_seed_same_params() {
        let data = two_points();
        for m in Method::ALL {
            let a = train(&init(4), &data, &quick_cfg(), m, &Default::default()).unwrap();
            let b = train(&init(4), &data, &quick_cfg(), m, &Default::default()).unwrap();
            assert_eq!(a, b, "{m}");
        }
    }

    #[test]
    fn degenerate_regularizers_match_cross_entropy() {
        let data = two_points();
        let zero = PerturbationConfig { epsilon: 0.0, ..Default::default() };
        let base = train(&init(2), &data, &quick_cfg(), Method::CrossEntropy, &zero).unwrap();
        let no_drop = TrainConfig { dropout_p: 0.0, ..quick_cfg() };
        for (m, cfg) in [(Method::At, quick_cfg()), (Method::Vat, quick_cfg()), (Method::Dropout, no_drop)] {
            let out = train(&init(2), &data, &cfg, m, &zero).unwrap();
            assert_eq!(out.params, base.params, "{m}");
        }
    }

    #[test]
    fn schedule_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 0.01);
        assert!((cfg.learning_rate_at(3000) - 0.001).abs() < 1e-18);
        assert!((cfg.learning_rate_at(4999) - 0.0001).abs() < 1e-18);
        assert!(TrainConfig { decay_steps: vec![10, 5], ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { decay_steps: vec![5000], ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { dropout_p: 1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let data = two_points();
        let cfg = TrainConfig { learning_rate: 1e300, ..quick_cfg() };
        let err = train(&init(0), &data, &cfg, Method::CrossEntropy, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }
}
