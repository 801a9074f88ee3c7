mod common;

use attn_gan::losses::{self, GanLossForm, LossReport};
use attn_gan::TrainConfig;
use common::FD_TOL;

#[test]
fn fuse_matches_finite_differences() {
    let e = common::grad_fuse();
    assert!(e < FD_TOL, "{e}");
}

#[test]
fn adversarial_least_squares_matches_finite_differences() {
    let e = common::grad_adversarial(GanLossForm::LeastSquares);
    assert!(e < FD_TOL, "{e}");
}

#[test]
fn adversarial_log_form_matches_finite_differences() {
    let e = common::grad_adversarial(GanLossForm::NegLogLikelihood);
    assert!(e < FD_TOL, "{e}");
}

#[test]
fn cycle_and_pixel_match_finite_differences() {
    let (c, p) = (common::grad_cycle(), common::grad_pixel());
    assert!(c < FD_TOL && p < FD_TOL, "{c} {p}");
}

#[test]
fn tv_matches_finite_differences() {
    let e = common::grad_tv();
    assert!(e < FD_TOL, "{e}");
}

#[test]
fn full_objective_chain_matches_finite_differences() {
    let e = common::grad_full_objective();
    assert!(e < FD_TOL, "{e}");
}

#[test]
fn tv_equals_brute_force_oracle() {
    common::tv_exhaustive().unwrap();
}

#[test]
fn tv_hand_cases() {
    use attn_gan::Tensor;
    assert_eq!(losses::tv_loss(&Tensor::<f64>::full([1, 1, 3, 3], 0.4)), 0.0);
    assert_eq!(losses::tv_loss(&Tensor::from_vec([1, 1, 1, 2], vec![0.0, 1.0]).unwrap()), 1.0);
    let checker = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert_eq!(losses::tv_loss(&checker), 4.0);
}

#[test]
fn objective_hand_value_and_schedule() {
    common::objective_arithmetic().unwrap();
}

#[test]
fn objective_is_affine_with_stated_coefficients() {
    let cfg = TrainConfig::default();
    for r in [0.0, 0.01, 0.5, 1.0] {
        let k = losses::objective_coefficients(&cfg, r).unwrap();
        let base = losses::full_objective(&LossReport::default(), &cfg, r).unwrap();
        assert_eq!(base, 0.0);
        for i in 0..8 {
            let mut c = [0.0; 8];
            c[i] = 1.0;
            let v = losses::full_objective(&LossReport::from_components(c), &cfg, r).unwrap();
            assert!((v - k[i]).abs() < 1e-15, "r {r} component {i}: {v} vs {}", k[i]);
        }
    }
    let rep = LossReport::from_components([0.5; 8]);
    assert!(losses::full_objective(&rep, &cfg, 1.5).is_err());
    let one = losses::full_objective(&rep, &cfg, 1.0).unwrap();
    assert_eq!(one, 10.0 * 0.5 + 1.0 * 0.5);
    let zero = losses::full_objective(&rep, &cfg, 0.0).unwrap();
    assert!((zero - (0.5 * 2.0 + 1e-6 * 1.0)).abs() < 1e-15);
}

#[test]
fn scaling_all_weights_scales_objective() {
    let rep = LossReport::from_components([0.3, 0.7, 0.2, 0.9, 1.5, 0.4, 3.0, 2.0]);
    let cfg = TrainConfig::default();
    let base = losses::full_objective(&rep, &cfg, 0.3).unwrap();
    for c in [0.5, 2.0, 4.0] {
        let scaled = TrainConfig {
            lambda_gan: cfg.lambda_gan * c,
            lambda_cycle: cfg.lambda_cycle * c,
            lambda_pixel: cfg.lambda_pixel * c,
            lambda_tv: cfg.lambda_tv * c,
            ..cfg.clone()
        };
        let v = losses::full_objective(&rep, &scaled, 0.3).unwrap();
        assert!((v - c * base).abs() < 1e-12 * v.abs(), "{v} vs {}", c * base);
    }
}

#[test]
fn fusion_algebra_holds() {
    common::fusion_algebra().unwrap();
}
