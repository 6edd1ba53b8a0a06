//! The full gradient-check sweep: every core primitive plus the layer
//! catalog, reported as JSON.

use ferrograd_core::check::{run_all, CheckReport};
use ferrograd_core::registry::core_check_cases;
use ferrograd_nn::checks;

pub const GRADCHECK_TOL: f64 = 1e-6;

pub fn full_sweep() -> Vec<CheckReport> {
    let mut cases = core_check_cases();
    cases.extend(checks::all_cases());
    run_all(&cases, GRADCHECK_TOL)
}

pub fn report_json(reports: &[CheckReport]) -> serde_json::Value {
    let entries: Vec<serde_json::Value> = reports.iter().map(|r| r.to_json()).collect();
    serde_json::json!({
        "tolerance": GRADCHECK_TOL,
        "checked": reports.len(),
        "failures": reports.iter().filter(|r| !r.pass).count(),
        "reports": entries,
    })
}
