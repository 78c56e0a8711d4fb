mod common;

fn assert_passes(name: &str, report: &rangevq::autodiff::GradCheckReport) {
    assert_eq!(report.checked, common::GRAD_COORDS, "{name}");
    assert!(report.passed(), "{name}: max rel err {:.3e}, failures {:?}", report.max_rel_err, report.failures);
}

#[test]
fn masked_reconstruction() {
    let (name, r) = common::grad_rec();
    assert_passes(&name, &r);
}

#[test]
fn raydrop_cross_entropy() {
    let (name, r) = common::grad_raydrop();
    assert_passes(&name, &r);
}

#[test]
fn commitment_terms() {
    for (name, r) in common::grad_commit() {
        assert_passes(&name, &r);
    }
}

#[test]
fn weighted_total() {
    let (name, r) = common::grad_total_terms();
    assert_passes(&name, &r);
}

#[test]
fn full_model_with_straight_through() {
    let (name, r) = common::grad_model_total();
    assert_passes(&name, &r);
}

#[test]
fn transformer_nll() {
    let (name, r) = common::grad_transformer();
    assert_passes(&name, &r);
}
