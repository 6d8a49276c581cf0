mod common;

use common::suites;

#[test]
fn content_matches_loop_oracle() {
    suites::oracle_content_suite();
}

#[test]
fn style_terms_match_loop_oracle() {
    suites::oracle_style_suite();
}

#[test]
fn temporal_terms_match_loop_oracle() {
    suites::oracle_temporal_suite();
}

#[test]
fn rank_matrix_and_low_rank_match_oracle() {
    suites::oracle_rank_suite();
}

#[test]
fn jacobi_oracle_agrees_with_diagonal_case() {
    let m = vec![3.0, 0.0, 0.0, 0.0, 0.0, -4.0, 0.0, 0.0];
    assert!((common::oracle_nuclear_norm(2, 4, &m) - 7.0).abs() < 1e-12);
}
