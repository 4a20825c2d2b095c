//! Finite-difference verification of the composite blocks and the whole
//! toy network, driven through the shared suite used by the CLI.

use crackseg_model::gradsuite::{check_blocks, check_model};

#[test]
fn block_gradients_match_finite_differences() {
    let reports = check_blocks(11).unwrap_or_else(|e| panic!("{e}"));
    assert_eq!(reports.len(), 4);
    for r in reports {
        println!("{}: worst rel err {:.3e}", r.name, r.max_rel_err);
        assert!(r.max_rel_err < 1e-3);
    }
}

#[test]
fn model_gradients_match_finite_differences() {
    let report = check_model(13).unwrap_or_else(|e| panic!("{e}"));
    println!("{}: worst rel err {:.3e}", report.name, report.max_rel_err);
    assert!(report.max_rel_err < 1e-3);
}
