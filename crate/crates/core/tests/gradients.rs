mod common;

use common::gradcheck;

const TOL: f64 = 1e-4;
const CHAIN_TOL: f64 = 1e-3;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (name, err) in gradcheck::layer_errors(11) {
        assert!(err <= TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn composite_loss_matches_finite_differences() {
    let err = gradcheck::composite_error(12);
    assert!(err <= TOL, "relative error {err:e}");
}

#[test]
fn transformation_loss_matches_finite_differences() {
    let err = gradcheck::tran_error(13);
    assert!(err <= TOL, "relative error {err:e}");
}

#[test]
fn policy_loss_matches_finite_differences() {
    let err = gradcheck::policy_error(14);
    assert!(err <= TOL, "relative error {err:e}");
}

#[test]
fn full_chain_matches_finite_differences() {
    let err = gradcheck::full_chain_error(15);
    assert!(err <= CHAIN_TOL, "relative error {err:e}");
}
