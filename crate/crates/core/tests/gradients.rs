mod common;

use common::*;
use rand::Rng;
use viser::mil_pooling::{mil_loss_grad, mil_loss_report, LogitGrid};
use viser::model::MlpParams;

const CASES: usize = 120;
const TOL: f64 = 1e-5;

#[test]
fn mil_gradient_matches_central_differences() {
    let mut rng = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let grid = random_grid(&mut rng, 5, 5, 8, 4.0);
        let y = random_labels(&mut rng, grid.classes());
        assert!(mil_loss_report(&grid, &y).unwrap().saturated.is_empty());
        let e = rel_err(&mil_loss_grad(&grid, &y).unwrap(), &mil_fd(&grid, &y));
        worst = worst.max(e);
    }
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn mil_gradient_on_single_location_is_bce() {
    // One location: Noisy-OR reduces to the sigmoid itself.
    let mut rng = rng(12);
    for _ in 0..50 {
        let f: f64 = rng.random_range(-6.0..6.0);
        let grid = LogitGrid::new(1, 1, 1, vec![f]).unwrap();
        let s = 1.0 / (1.0 + (-f).exp());
        let pos = viser::mil_pooling::LabelVector::new(vec![true]);
        let neg = viser::mil_pooling::LabelVector::new(vec![false]);
        assert!((mil_loss_grad(&grid, &pos).unwrap()[0] - (s - 1.0)).abs() < 1e-12);
        assert!((mil_loss_grad(&grid, &neg).unwrap()[0] - s).abs() < 1e-12);
    }
}

#[test]
fn model_gradients_match_central_differences() {
    let mut rng = rng(21);
    let (mut wp, mut wi): (f64, f64) = (0.0, 0.0);
    for _ in 0..CASES {
        let (ep, ei) = check_model_case(&random_case(&mut rng, false));
        wp = wp.max(ep);
        wi = wi.max(ei);
    }
    assert!(wp < TOL, "parameter gradient worst relative error {wp:e}");
    assert!(wi < TOL, "input gradient worst relative error {wi:e}");
}

#[test]
fn model_gradients_with_dropout_masks_match_central_differences() {
    let mut rng = rng(22);
    for _ in 0..CASES {
        let (ep, ei) = check_model_case(&random_case(&mut rng, true));
        assert!(ep < TOL && ei < TOL, "{ep:e} {ei:e}");
    }
}

#[test]
fn forward_matches_reference_implementation() {
    let mut rng = rng(23);
    for _ in 0..CASES {
        let c = random_case(&mut rng, false);
        let got = c.p.forward(&c.x).unwrap().logits;
        let want = oracle_logits(&c.p, &c.x, None);
        assert!(rel_err(&got, &want) < 1e-13);
        let penult = c.p.forward(&c.x).unwrap().penultimate;
        assert_eq!(penult.len(), c.p.hidden);
        assert!(penult.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn dead_network_has_zero_input_gradient() {
    let mut p = MlpParams::<f64>::zeros(5, 100, 2);
    p.b1.iter_mut().for_each(|b| *b = -1.0);
    p.w3.iter_mut().for_each(|w| *w = 0.3);
    let g = p.backward(&[0.1, -0.2, 0.3, 0.0, 0.5], &[1.0, 0.0]).unwrap();
    assert_eq!(g.input, vec![0.0; 5]);
}

#[test]
fn duplicated_sample_doubles_accumulated_gradient() {
    let mut rng = rng(24);
    let c = random_case(&mut rng, false);
    let fwd = c.p.forward(&c.x).unwrap();
    let (_, dl) = MlpParams::output_loss(&fwd, &c.t);
    let (d, h, n) = c.p.shape();
    let mut once = MlpParams::zeros(d, h, n);
    c.p.accumulate_from_logits(&c.x, &fwd, &dl, None, &mut once);
    let mut twice = MlpParams::zeros(d, h, n);
    c.p.accumulate_from_logits(&c.x, &fwd, &dl, None, &mut twice);
    c.p.accumulate_from_logits(&c.x, &fwd, &dl, None, &mut twice);
    for (a, b) in flatten_params(&once).iter().zip(flatten_params(&twice)) {
        assert_eq!(2.0 * a, b);
    }
}
