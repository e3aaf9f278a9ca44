use isodus::experiments::{run_experiment, ExperimentConfig, ExperimentRecord};
use serde_json::json;

fn run(config: serde_json::Value) -> Vec<ExperimentRecord> {
    let cfg = ExperimentConfig::from_json_value(config).unwrap();
    run_experiment(&cfg).unwrap().records
}

fn without_wall_time(mut records: Vec<ExperimentRecord>) -> Vec<ExperimentRecord> {
    for r in &mut records {
        r.wall_time_s = None;
    }
    records
}

#[test]
fn rerun_reproduces_records_except_wall_time() {
    let config = json!({ "experiment": "incoherence", "n_grid": [300, 3000], "repetitions": 2 });
    let a = without_wall_time(run(config.clone()));
    let b = without_wall_time(run(config));
    assert_eq!(a.len(), 8);
    assert_eq!(a, b);
}

#[test]
fn different_seed_changes_records() {
    let base = json!({ "experiment": "error-scaling", "n_grid": [500], "repetitions": 1 });
    let mut other = base.clone();
    other["seed"] = json!(99);
    assert_ne!(without_wall_time(run(base)), without_wall_time(run(other)));
}

fn nstar_at_p16(seed: u64) -> (usize, Vec<ExperimentRecord>) {
    let records = run(json!({
        "experiment": "nstar-scaling",
        "methods": ["isodus"],
        "p_grid": [16],
        "graphs": 1,
        "seed": seed,
    }));
    let summary = records.iter().find(|r| r.status == "nstar").expect("certified search");
    (summary.n_star.unwrap(), records)
}

/// The search stops only once a certified size sits within one downward step
/// of a failed size, and the reported n* is that certified size.
fn assert_bracketed(n_star: usize, records: &[ExperimentRecord]) {
    let trials = records.iter().filter(|r| r.success.is_some());
    let failed: Vec<usize> = trials.clone().filter(|r| r.success == Some(false)).map(|r| r.n).collect();
    let at_nstar: Vec<_> = trials.filter(|r| r.n == n_star).collect();
    assert_eq!(at_nstar.len(), 45);
    assert!(at_nstar.iter().all(|r| r.success == Some(true)));
    assert!(failed.iter().any(|&f| f < n_star && n_star - f <= 10), "n* {n_star}, failed sizes {failed:?}");
}

#[test]
fn nstar_p16_search_is_bracketed_and_reproducible_by_seed() {
    let (a, records) = nstar_at_p16(0);
    assert_bracketed(a, &records);
    let (again, records_again) = nstar_at_p16(0);
    assert_eq!(again, a);
    assert_eq!(without_wall_time(records), without_wall_time(records_again));
}

// Over protocol seeds 0..8 this gives n* between 8300 and 9760 (sd about
// 450): the 45-in-a-row rule locates n* only to a few percent, so agreement
// within one search step across seeds does not hold.
#[test]
#[ignore = "cross-seed spread of n* is statistical and exceeds 25 samples"]
fn nstar_p16_agrees_within_25_across_protocol_seeds() {
    let (a, _) = nstar_at_p16(0);
    let (b, _) = nstar_at_p16(1);
    assert!(a.abs_diff(b) <= 25, "n* {a} vs {b}");
}
