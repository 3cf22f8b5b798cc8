mod common;

#[test]
fn gate_admission_and_labels_are_monotone() {
    let c = common::monotonicity(10_000);
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn soft_gate_converges_to_hard_count() {
    let c = common::soft_gate_limit(10_000);
    assert!(c.passed, "{}", c.detail);
}
