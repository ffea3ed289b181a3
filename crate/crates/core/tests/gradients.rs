//! Finite-difference checks of every analytic gradient the optimizers use,
//! in f64 on miniature networks.

mod common;

use invloc::cyclegan::LossForm;

#[test]
fn cycle_loss_gradient_matches_finite_differences() {
    for (net, err) in common::cycle_gradient_error().into_iter().enumerate() {
        assert!(err < 1e-4, "network {net}: relative error {err}");
    }
}

#[test]
fn log_adversarial_gradients_match_finite_differences() {
    let (g, d) = common::adversarial_gradient_error(LossForm::Log);
    assert!(g < 1e-4 && d < 1e-4, "generator {g}, discriminator {d}");
}

#[test]
fn least_squares_adversarial_gradients_match_finite_differences() {
    let (g, d) = common::adversarial_gradient_error(LossForm::LeastSquares);
    assert!(g < 1e-4 && d < 1e-4, "generator {g}, discriminator {d}");
}

#[test]
fn pose_loss_gradient_matches_finite_differences() {
    let err = common::pose_loss_gradient_error();
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn pose_network_gradient_matches_finite_differences() {
    let err = common::pose_net_gradient_error();
    assert!(err < 1e-5, "relative error {err}");
}
