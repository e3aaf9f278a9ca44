//! Post-run checks. Everything here works from records parsed back out of the
//! CSV, never from the run loop's state.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ExperimentConfig, ExperimentKind, ExperimentRecord};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: Value,
    pub expected: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, measured: Value, expected: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            measured,
            expected: expected.into(),
        }
    }
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Ordinary least squares of `y` on `x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let m = x.len();
    if m < 2 || y.len() != m {
        return None;
    }
    let mf = m as f64;
    let mx = x.iter().sum::<f64>() / mf;
    let my = y.iter().sum::<f64>() / mf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_stderr = if m > 2 { (sse / (mf - 2.0) / sxx).sqrt() } else { 0.0 };
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(LineFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        points: m,
    })
}

/// Log-log fit of positive pairs; non-positive values are skipped.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    fit_line(&lx, &ly)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    Some(if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    (values.len() > 1).then(|| (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt())
}

/// Sort key for float grid values.
fn key(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

fn is_fit(r: &ExperimentRecord) -> bool {
    matches!(r.status.as_str(), "ok" | "not-converged" | "failed")
}

/// `series[method][n] = values`.
fn by_method_and_n(
    records: &[ExperimentRecord],
    value: impl Fn(&ExperimentRecord) -> Option<f64>,
) -> BTreeMap<String, BTreeMap<usize, Vec<f64>>> {
    let mut out: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records {
        if let Some(v) = value(r) {
            out.entry(r.method.clone()).or_default().entry(r.n).or_default().push(v);
        }
    }
    out
}

fn medians(series: &BTreeMap<usize, Vec<f64>>) -> (Vec<f64>, Vec<f64>) {
    series
        .iter()
        .filter_map(|(n, v)| median(v).map(|m| (*n as f64, m)))
        .unzip()
}

pub fn evaluate(cfg: &ExperimentConfig, records: &[ExperimentRecord]) -> (Vec<Check>, Value) {
    let mut checks = common_checks(cfg, records);
    let summary = match cfg.experiment {
        ExperimentKind::SweepMrd => sweep_mrd(cfg, records, &mut checks),
        ExperimentKind::ErrorScaling | ExperimentKind::Multibody4d => error_scaling(cfg, records, &mut checks),
        ExperimentKind::Incoherence => incoherence(cfg, records, &mut checks),
        ExperimentKind::NstarScaling => nstar(cfg, records, &mut checks),
        ExperimentKind::RuntimeVsN => runtime_vs_n(cfg, records, &mut checks),
        ExperimentKind::RuntimeVsL => runtime_vs_l(cfg, records, &mut checks),
        ExperimentKind::SweepLambda => sweep_lambda(records),
        ExperimentKind::MethodAgreement => agreement(cfg, records, &mut checks),
    };
    (checks, summary)
}

fn common_checks(cfg: &ExperimentConfig, records: &[ExperimentRecord]) -> Vec<Check> {
    let mut checks = Vec::new();
    let numeric = |r: &ExperimentRecord| {
        [
            r.kappa,
            r.lambda,
            r.nu,
            r.delta,
            r.eps_mean,
            r.eps_max,
            r.threshold,
            r.wall_time_s,
            r.certified_max,
            r.value,
        ]
    };
    let nonfinite = records
        .iter()
        .filter(|r| numeric(r).iter().flatten().any(|v| !v.is_finite()))
        .count();
    checks.push(Check::new(
        "numeric-fields-finite",
        nonfinite == 0 && !records.is_empty(),
        json!({ "records": records.len(), "non_finite": nonfinite }),
        "every numeric field finite",
    ));

    let below: Vec<&ExperimentRecord> = records
        .iter()
        .filter(|r| matches!((r.eps_max, r.threshold), (Some(e), Some(t)) if e < t))
        .collect();
    let violations = below.iter().filter(|r| r.recovered != Some(true)).count();
    checks.push(Check::new(
        "recovery-below-threshold",
        violations == 0,
        json!({ "records_below_threshold": below.len(), "violations": violations }),
        "max-error < κ/2 implies exact recovery by thresholding at κ/2",
    ));

    let tol = cfg.checks.certificate_tol;
    let certified: Vec<f64> = records.iter().filter_map(|r| r.certified_max).collect();
    let worst = certified.iter().copied().fold(0.0, f64::max);
    checks.push(Check::new(
        "optimality-certificates",
        worst <= tol,
        json!({ "certified_fits": certified.len(), "worst": worst }),
        format!("re-verified optimality <= {tol:e} for every converged fit"),
    ));
    checks
}

fn sweep_mrd(cfg: &ExperimentConfig, records: &[ExperimentRecord], checks: &mut Vec<Check>) -> Value {
    let tol = cfg.checks;
    // (delta, nu) → (eps values, any failure)
    let mut cells: BTreeMap<(i64, i64), (f64, f64, Vec<f64>, bool)> = BTreeMap::new();
    for r in records.iter().filter(|r| is_fit(r)) {
        let (Some(nu), Some(delta)) = (r.nu, r.delta) else { continue };
        let cell = cells.entry((key(delta), key(nu))).or_insert((delta, nu, Vec::new(), false));
        match r.eps_mean {
            Some(e) if r.status == "ok" => cell.2.push(e),
            _ => cell.3 = true,
        }
    }
    let expected = cfg.nu_grid.len() * cfg.delta_grid.len() * cfg.repetitions;
    checks.push(Check::new(
        "record-count",
        records.len() == expected,
        json!(records.len()),
        format!("{expected} = grid × repetitions"),
    ));
    let table: Vec<(f64, f64, Option<f64>, bool)> = cells
        .values()
        .map(|(d, nu, eps, failed)| (*d, *nu, if *failed { None } else { mean(eps) }, *failed))
        .collect();
    let min = table.iter().filter_map(|c| c.2).fold(f64::INFINITY, f64::min);
    let valley: Vec<&(f64, f64, Option<f64>, bool)> =
        table.iter().filter(|c| c.0 >= tol.valley_min_delta - 1e-12).collect();
    let worst_valley = valley
        .iter()
        .map(|c| c.2.map_or(f64::INFINITY, |e| e / min))
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "valley-within-factor",
        !valley.is_empty() && worst_valley <= tol.valley_ratio,
        json!({ "worst_ratio": finite_or_null(worst_valley), "cells": valley.len(), "grid_min": min }),
        format!("every cell with δ ≥ {} finite and ≤ {}× the grid minimum", tol.valley_min_delta, tol.valley_ratio),
    ));
    let small: Vec<&(f64, f64, Option<f64>, bool)> =
        table.iter().filter(|c| c.0 <= tol.blowup_max_delta + 1e-12).collect();
    let worst_small = small
        .iter()
        .map(|c| c.2.map_or(f64::INFINITY, |e| e / min))
        .fold(0.0, f64::max);
    let failed_small = small.iter().filter(|c| c.3).count();
    checks.push(Check::new(
        "small-delta-blowup",
        failed_small > 0 || worst_small > tol.blowup_ratio,
        json!({ "failed_cells": failed_small, "worst_ratio": finite_or_null(worst_small), "cells": small.len() }),
        format!(
            "some cell with δ ≤ {} fails or exceeds {}× the grid minimum",
            tol.blowup_max_delta, tol.blowup_ratio
        ),
    ));
    json!({
        "grid_min_eps": min,
        "cells": table
            .iter()
            .map(|(d, nu, e, f)| json!({ "delta": d, "nu": nu, "eps_mean": e, "failed": f }))
            .collect::<Vec<_>>(),
    })
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn slope_summary(fit: Option<LineFit>, n: &[f64], m: &[f64]) -> Value {
    json!({ "fit": fit, "n": n, "median": m })
}

fn error_scaling(cfg: &ExperimentConfig, records: &[ExperimentRecord], checks: &mut Vec<Check>) -> Value {
    let tol = cfg.checks;
    let fits: Vec<&ExperimentRecord> = records.iter().filter(|r| is_fit(r)).collect();
    let ok = fits.iter().filter(|r| r.status == "ok").count();
    checks.push(Check::new(
        "fits-converged",
        ok == fits.len(),
        json!({ "converged": ok, "fits": fits.len() }),
        "every fit converged",
    ));
    let series = by_method_and_n(records, |r| if r.status == "ok" { r.eps_mean } else { None });
    let mut summary = serde_json::Map::new();
    let mut slopes = Vec::new();
    for (method, per_n) in &series {
        let (n, m) = medians(per_n);
        let fit = fit_loglog(&n, &m);
        let slope = fit.map_or(f64::NAN, |f| f.slope);
        checks.push(Check::new(
            format!("eps-slope-{method}"),
            (slope - tol.slope_target).abs() <= tol.slope_tol,
            json!({ "slope": finite_or_null(slope), "stderr": fit.map(|f| f.slope_stderr) }),
            format!("log-log slope of median ε vs n = {} ± {}", tol.slope_target, tol.slope_tol),
        ));
        slopes.push(slope);
        summary.insert(method.clone(), slope_summary(fit, &n, &m));
    }
    if slopes.len() >= 2 {
        let gap = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - slopes.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check::new(
            "method-slope-gap",
            gap <= tol.method_slope_gap,
            json!(finite_or_null(gap)),
            format!("slopes of all methods within {}", tol.method_slope_gap),
        ));
    }
    Value::Object(summary)
}

fn incoherence(_cfg: &ExperimentConfig, records: &[ExperimentRecord], checks: &mut Vec<Check>) -> Value {
    let series = by_method_and_n(records, |r| r.eps_max);
    let threshold = records.iter().find_map(|r| r.threshold);
    let mut summary = serde_json::Map::new();
    for (method, per_n) in &series {
        let (n, m) = medians(per_n);
        let decreasing = m.windows(2).all(|w| w[1] < w[0]);
        checks.push(Check::new(
            format!("max-error-decreasing-{method}"),
            decreasing && m.len() >= 2,
            json!({ "n": n, "median_max_error": m }),
            "median max-error strictly decreasing over the n grid",
        ));
        let first_below = threshold.and_then(|t| n.iter().zip(&m).find(|(_, e)| **e < t).map(|(n, _)| *n));
        let recovered_at: BTreeMap<usize, f64> = records
            .iter()
            .filter(|r| &r.method == method)
            .fold(BTreeMap::<usize, (usize, usize)>::new(), |mut acc, r| {
                let e = acc.entry(r.n).or_default();
                e.0 += usize::from(r.recovered == Some(true));
                e.1 += 1;
                acc
            })
            .into_iter()
            .map(|(n, (k, t))| (n, k as f64 / t as f64))
            .collect();
        summary.insert(
            method.clone(),
            json!({ "n": n, "median_max_error": m, "first_n_below_threshold": first_below,
                    "recovery_rate": recovered_at }),
        );
    }
    let methods: Vec<&String> = series.keys().collect();
    let schema_same = methods.len() <= 1 || {
        let ns: Vec<Vec<usize>> = series.values().map(|s| s.keys().copied().collect()).collect();
        ns.windows(2).all(|w| w[0] == w[1])
    };
    checks.push(Check::new(
        "same-grid-across-methods",
        schema_same,
        json!(methods),
        "every method evaluated on the same n grid",
    ));
    summary.insert("threshold".into(), json!(threshold));
    Value::Object(summary)
}

fn nstar(cfg: &ExperimentConfig, records: &[ExperimentRecord], checks: &mut Vec<Check>) -> Value {
    let searches: Vec<&ExperimentRecord> = records
        .iter()
        .filter(|r| r.status == "nstar" || r.status == "search-failure")
        .collect();
    let failures = searches.iter().filter(|r| r.status == "search-failure").count();
    checks.push(Check::new(
        "searches-certified",
        failures == 0 && !searches.is_empty(),
        json!({ "searches": searches.len(), "failures": failures }),
        "every search ends at a certified level",
    ));
    let mut per_method: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in &searches {
        if let Some(ns) = r.n_star {
            per_method.entry(r.method.clone()).or_default().entry(r.p).or_default().push(ns as f64);
        }
    }
    let mut summary = serde_json::Map::new();
    for (method, per_p) in &per_method {
        let (p, avg): (Vec<f64>, Vec<f64>) = per_p
            .iter()
            .map(|(p, v)| (*p as f64, mean(v).unwrap_or(f64::NAN)))
            .unzip();
        let logp: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        let fit = fit_line(&logp, &avg);
        let (a, r2) = fit.map_or((f64::NAN, f64::NAN), |f| (f.slope, f.r_squared));
        checks.push(Check::new(
            format!("nstar-log-p-{method}"),
            a > 0.0 && r2 > cfg.checks.nstar_r2_min,
            json!({ "a": finite_or_null(a), "r_squared": finite_or_null(r2) }),
            format!("n* = a log p + b with a > 0 and R² > {}", cfg.checks.nstar_r2_min),
        ));
        let residuals: Vec<f64> = fit
            .map(|f| logp.iter().zip(&avg).map(|(x, y)| y - f.intercept - f.slope * x).collect())
            .unwrap_or_default();
        summary.insert(
            method.clone(),
            json!({ "p": p, "mean_n_star": avg, "per_graph": per_p, "fit": fit, "residuals": residuals }),
        );
    }
    Value::Object(summary)
}

/// Wall time of a converged timed fit.
fn timing(r: &ExperimentRecord) -> Option<f64> {
    if r.status == "timing" {
        r.wall_time_s
    } else {
        None
    }
}

fn timing_medians(records: &[ExperimentRecord]) -> BTreeMap<String, BTreeMap<usize, f64>> {
    by_method_and_n(records, timing)
        .into_iter()
        .map(|(m, s)| (m, s.into_iter().filter_map(|(n, v)| median(&v).map(|x| (n, x))).collect()))
        .collect()
}

fn runtime_vs_n(cfg: &ExperimentConfig, records: &[ExperimentRecord], checks: &mut Vec<Check>) -> Value {
    let tol = cfg.checks;
    let med = timing_medians(records);
    let empty = BTreeMap::new();
    let is = med.get("isodus").unwrap_or(&empty);
    let pl = med.get("pl").unwrap_or(&empty);
    let ratios: BTreeMap<usize, f64> = cfg
        .n_grid
        .iter()
        .filter_map(|n| Some((*n, pl.get(n)? / is.get(n)?)))
        .collect();
    if pl.len() > 0 {
        let min_ratio = ratios.values().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check::new(
            "pl-isodus-time-ratio",
            ratios.len() == cfg.n_grid.len() && min_ratio > tol.runtime_ratio_min,
            json!(ratios),
            format!("PL/ISODUS median wall time > {} at every n", tol.runtime_ratio_min),
        ));
    }
    let slope_grid = if cfg.timing_n_grid.is_empty() { &cfg.n_grid } else { &cfg.timing_n_grid };
    let (n, t): (Vec<f64>, Vec<f64>) = slope_grid
        .iter()
        .filter_map(|n| is.get(n).map(|t| (*n as f64, *t)))
        .unzip();
    let fit = fit_loglog(&n, &t);
    let slope = fit.map_or(f64::NAN, |f| f.slope);
    checks.push(Check::new(
        "isodus-time-slope",
        (slope - tol.runtime_slope_target).abs() <= tol.runtime_slope_tol,
        json!({ "slope": finite_or_null(slope), "stderr": fit.map(|f| f.slope_stderr) }),
        format!("log-log slope of ISODUS time vs n = {} ± {}", tol.runtime_slope_target, tol.runtime_slope_tol),
    ));
    json!({ "median_time_s": med, "ratio": ratios, "isodus_slope": slope_summary(fit, &n, &t) })
}

/// The ratio is formed per draw (degree, repetition) from median timed
/// runs, over draws where both methods converged, then summarized by its
/// median over draws.
fn runtime_vs_l(_cfg: &ExperimentConfig, records: &[ExperimentRecord], checks: &mut Vec<Check>) -> Value {
    let mut draws: BTreeMap<u32, BTreeMap<usize, BTreeMap<String, Vec<f64>>>> = BTreeMap::new();
    let mut excluded: BTreeMap<u32, BTreeMap<usize, Vec<String>>> = BTreeMap::new();
    for r in records {
        let Some(l) = r.degree else { continue };
        let per_draw = draws.entry(l).or_default().entry(r.trial).or_default();
        let times = per_draw.entry(r.method.clone()).or_default();
        match timing(r) {
            Some(t) => times.push(t),
            None => excluded
                .entry(l)
                .or_default()
                .entry(r.trial)
                .or_default()
                .push(format!("{} {}", r.method, r.status)),
        }
    }
    let mut ratios: BTreeMap<u32, f64> = BTreeMap::new();
    let mut summary: BTreeMap<u32, Value> = BTreeMap::new();
    for (l, per_draw) in &draws {
        let per: Vec<f64> = per_draw
            .values()
            .filter_map(|m| Some(median(m.get("pl")?)? / median(m.get("isodus")?)?))
            .collect();
        if let Some(r) = median(&per) {
            ratios.insert(*l, r);
        }
        let median_time = |method: &str| {
            let t: Vec<f64> = per_draw.values().filter_map(|m| median(m.get(method)?)).collect();
            median(&t)
        };
        summary.insert(
            *l,
            json!({
                "ratio_median": median(&per),
                "ratios": per,
                "draws": per_draw.len(),
                "draws_used": per.len(),
                "median_time_s": { "isodus": median_time("isodus"), "pl": median_time("pl") },
                "excluded": excluded.get(l),
            }),
        );
    }
    let values: Vec<f64> = ratios.values().copied().collect();
    checks.push(Check::new(
        "time-ratio-increases-with-degree",
        values.len() == draws.len() && values.len() >= 2 && values.windows(2).all(|w| w[1] > w[0]),
        json!(ratios),
        "median over draws of the PL/ISODUS time ratio strictly increasing in L",
    ));
    json!({ "ratio": ratios, "per_degree": summary })
}

fn sweep_lambda(records: &[ExperimentRecord]) -> Value {
    let mut by: BTreeMap<String, BTreeMap<i64, (f64, Vec<f64>, usize, usize)>> = BTreeMap::new();
    for r in records.iter().filter(|r| is_fit(r)) {
        let Some(l) = r.lambda else { continue };
        let e = by.entry(r.method.clone()).or_default().entry(key(l)).or_insert((l, Vec::new(), 0, 0));
        if let Some(v) = r.eps_mean {
            e.1.push(v);
        }
        e.2 += usize::from(r.recovered == Some(true));
        e.3 += 1;
    }
    let mut summary = serde_json::Map::new();
    for (method, per_l) in by {
        let rows: Vec<Value> = per_l
            .values()
            .map(|(l, eps, rec, tot)| {
                json!({ "lambda": l, "mean_eps": mean(eps), "recovery_rate": *rec as f64 / *tot as f64 })
            })
            .collect();
        let best = per_l
            .values()
            .filter_map(|(l, eps, _, _)| mean(eps).map(|m| (*l, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, _)| l);
        summary.insert(method, json!({ "best_lambda": best, "grid": rows }));
    }
    Value::Object(summary)
}

fn agreement(cfg: &ExperimentConfig, records: &[ExperimentRecord], checks: &mut Vec<Check>) -> Value {
    // term → method → (full-sample value, bootstrap values)
    let mut by: BTreeMap<String, BTreeMap<String, (Option<f64>, Vec<f64>)>> = BTreeMap::new();
    for r in records {
        let (Some(term), Some(v)) = (&r.term, r.value) else { continue };
        let e = by.entry(term.clone()).or_default().entry(r.method.clone()).or_default();
        if r.trial == 0 {
            e.0 = Some(v);
        } else {
            e.1.push(v);
        }
    }
    let k = cfg.checks.agreement_sigmas;
    let mut rows = Vec::new();
    let mut all = !by.is_empty();
    for (term, methods) in &by {
        let est: Vec<(String, f64, f64)> = methods
            .iter()
            .filter_map(|(m, (v, boot))| Some((m.clone(), (*v)?, std_dev(boot)?)))
            .collect();
        let overlap = est.len() == 2 && {
            let (a, b) = (&est[0], &est[1]);
            (a.1 - b.1).abs() <= k * (a.2 + b.2)
        };
        all &= overlap;
        rows.push(json!({ "term": term, "overlap": overlap,
            "estimates": est.iter().map(|(m, v, s)| json!({ "method": m, "value": v, "stderr": s })).collect::<Vec<_>>() }));
    }
    checks.push(Check::new(
        "bootstrap-intervals-overlap",
        all,
        json!(rows),
        format!("±{k} bootstrap std-err intervals of the two methods overlap for every coefficient"),
    ));
    json!({ "terms": rows })
}
