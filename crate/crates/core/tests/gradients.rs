mod common;

use bulkalloc::loss::LossKind;

#[test]
fn rbol_gradient_matches_finite_differences() {
    let err = common::loss_gradient_error(LossKind::Rbol, 100, 1);
    assert!(err <= 1e-4, "relative error {err:e}");
}

#[test]
fn baseline_gradients_match_finite_differences() {
    for kind in [LossKind::Bce, LossKind::Mse, LossKind::Mae] {
        let err = common::loss_gradient_error(kind, 100, 2);
        assert!(err <= 1e-4, "{kind}: relative error {err:e}");
    }
}

#[test]
fn bptt_matches_finite_differences_for_every_loss() {
    for kind in LossKind::ALL {
        for seed in 0..3 {
            let err = common::network_gradient_error(kind, seed);
            assert!(err <= 1e-4, "{kind} seed {seed}: relative error {err:e}");
        }
    }
}
