//! Acceptance criteria, one test per criterion, each printing a PASS/FAIL
//! line to stderr (outside the test harness capture).

use std::io::Write;
use std::sync::OnceLock;

use sevastyanov::validation::{self, Suite, SuiteConfig};

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| Suite::new(SuiteConfig::default()).expect("default configuration is valid"))
}

fn criterion(number: usize, name: &str) {
    let r = suite().run(name).expect("known check");
    let details: Vec<String> = r.details.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
    writeln!(std::io::stderr(), "criterion {number}: {} [{}]", r.line(), details.join(", ")).expect("stderr");
    assert!(r.passed, "criterion {number} ({name}) failed: {r:?}");
}

#[test]
fn criterion_1_kendall_oracle() {
    criterion(1, validation::KENDALL_ORACLE);
}

#[test]
fn criterion_2_extinction() {
    criterion(2, validation::EXTINCTION);
}

#[test]
fn criterion_3_reduced_simple_consistency() {
    criterion(3, validation::REDUCED_SIMPLE);
}

#[test]
fn criterion_4_monte_carlo_vs_solver() {
    criterion(4, validation::MC_VS_SOLVER);
}

#[test]
fn criterion_5_direct_vs_pruned_genealogies() {
    criterion(5, validation::DIRECT_VS_PRUNED);
}

#[test]
fn criterion_6_branch_length_law() {
    criterion(6, validation::BRANCH_LENGTH_LAW);
}

#[test]
fn criterion_7_structural_suite() {
    criterion(7, validation::STRUCTURAL);
}

#[test]
fn criterion_8_density_and_topology() {
    criterion(8, validation::DENSITY_TOPOLOGY);
}

#[test]
fn criterion_9_offspring_law_sanity() {
    criterion(9, validation::NU_SANITY);
}
