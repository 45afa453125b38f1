use semsr_tensorad::gradcheck::{self, REL_TOL};
use semsr_tensorad::OpKind;

#[test]
fn every_differentiable_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for &kind in OpKind::DIFFERENTIABLE.iter() {
        let r = gradcheck::op_case(kind).run().unwrap();
        println!("{:<20} rel err {:.2e}", r.name, r.max_rel_err);
        if !r.passed {
            failures.push(r);
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn composite_layers_match_finite_differences() {
    for case in gradcheck::composite_cases() {
        let r = case.run().unwrap();
        println!("{:<36} rel err {:.2e}", r.name, r.max_rel_err);
        assert!(r.max_rel_err < REL_TOL, "{r:?}");
    }
}

#[test]
fn registry_covers_every_op() {
    let names: Vec<String> = gradcheck::registry().into_iter().map(|c| c.name).collect();
    for kind in OpKind::DIFFERENTIABLE {
        assert!(
            names.iter().any(|n| n == kind.name()),
            "{} missing",
            kind.name()
        );
    }
    assert!(names.iter().any(|n| n.starts_with("gradient_penalty")));
}
