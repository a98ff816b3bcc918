mod common;

fn assert_check(check: common::Check) {
    match check {
        Ok(summary) => println!("{summary}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn unit_weights_reduce_to_unweighted_estimators() {
    assert_check(common::unit_weight_reductions(1000, 3));
}

#[test]
fn pair_metrics_match_enumeration() {
    assert_check(common::pair_enumeration(300, 5));
}

#[test]
fn discrimination_ignores_monotone_transforms() {
    assert_check(common::monotone_invariance(300, 7));
}

#[test]
fn ipacw_is_at_least_one_and_nondecreasing() {
    assert_check(common::ipacw_monotone(800, 9));
}

#[test]
fn treatment_models_solve_score_equations() {
    assert_check(common::irls_score(800, 13));
}
