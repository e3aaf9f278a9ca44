//! Consensus of node-wise estimates, error metrics, structure thresholding and
//! the sequential search for the sample complexity `n*`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnergyModel, MultiIndex};
use crate::solver::NodeFit;

/// One value per monomial after combining the estimates of every node the
/// monomial touches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SymmetrizedEstimate {
    pub terms: BTreeMap<MultiIndex, f64>,
    /// `(node, estimate)` pairs that went into each term.
    pub raw: BTreeMap<MultiIndex, Vec<(usize, f64)>>,
}

/// Geometric mean of magnitudes with the sign of the sum.
pub fn consensus(values: &[f64]) -> f64 {
    match values {
        [] => 0.0,
        [v] => *v,
        _ if values.iter().all(|v| *v == values[0]) => values[0],
        _ => {
            let sum: f64 = values.iter().sum();
            if sum == 0.0 || values.contains(&0.0) {
                return 0.0;
            }
            let magnitude = if let [a, b] = values {
                (a.abs() * b.abs()).sqrt()
            } else {
                (values.iter().map(|v| v.abs().ln()).sum::<f64>() / values.len() as f64).exp()
            };
            magnitude.copysign(sum)
        }
    }
}

pub fn symmetrize(fits: &[NodeFit]) -> SymmetrizedEstimate {
    let mut raw: BTreeMap<MultiIndex, Vec<(usize, f64)>> = BTreeMap::new();
    for fit in fits {
        for (k, &t) in fit.basis.iter().zip(&fit.result.theta) {
            raw.entry(k.clone()).or_default().push((fit.node, t));
        }
    }
    let terms = raw
        .iter()
        .map(|(k, v)| {
            let values: Vec<f64> = v.iter().map(|(_, t)| *t).collect();
            (k.clone(), consensus(&values))
        })
        .collect();
    SymmetrizedEstimate { terms, raw }
}

impl SymmetrizedEstimate {
    pub fn get(&self, k: &MultiIndex) -> f64 {
        self.terms.get(k).copied().unwrap_or(0.0)
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        Self {
            terms: terms.into_iter().collect(),
            raw: BTreeMap::new(),
        }
    }

    /// Estimate as a model (zero coefficients dropped).
    pub fn to_model(&self, p: usize) -> Result<EnergyModel> {
        let s = self.terms.keys().map(|k| k.order()).max().unwrap_or(1);
        let mut m = EnergyModel::new(p, s)?;
        for (k, &t) in &self.terms {
            m.set(k.clone(), t)?;
        }
        Ok(m)
    }
}

fn errors_over<'a>(
    estimate: &'a SymmetrizedEstimate,
    truth: &'a EnergyModel,
    basis: &'a [MultiIndex],
) -> impl Iterator<Item = f64> + 'a {
    basis.iter().map(|k| (estimate.get(k) - truth.coefficient(k)).abs())
}

/// `(1/|basis|) Σ_k |θ̂_k - θ_k|`, absent terms counted as zero.
pub fn mean_abs_error(estimate: &SymmetrizedEstimate, truth: &EnergyModel, basis: &[MultiIndex]) -> f64 {
    if basis.is_empty() {
        return 0.0;
    }
    errors_over(estimate, truth, basis).sum::<f64>() / basis.len() as f64
}

pub fn max_abs_error(estimate: &SymmetrizedEstimate, truth: &EnergyModel, basis: &[MultiIndex]) -> f64 {
    errors_over(estimate, truth, basis).fold(0.0, f64::max)
}

/// Variable sets of interaction terms with `|θ̂| > tau`.
pub fn threshold_structure(estimate: &SymmetrizedEstimate, tau: f64) -> BTreeSet<Vec<usize>> {
    estimate
        .terms
        .iter()
        .filter(|(k, t)| k.arity() >= 2 && t.abs() > tau)
        .map(|(k, _)| k.vars().collect())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NStarConfig {
    /// Consecutive successful trials required to certify a level.
    pub streak: usize,
    pub step_up: usize,
    pub step_down: usize,
    pub threshold: f64,
    pub start: usize,
    pub floor: usize,
    pub ceiling: usize,
}

impl Default for NStarConfig {
    fn default() -> Self {
        Self {
            streak: 45,
            step_up: 25,
            step_down: 10,
            threshold: 0.125,
            start: 100,
            floor: 10,
            ceiling: 100_000,
        }
    }
}

impl NStarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.streak == 0
            || self.step_up == 0
            || self.step_down == 0
            || !(self.threshold > 0.0)
            || self.floor == 0
            || self.floor > self.start
            || self.start > self.ceiling
        {
            return Err(Error::InvalidParameter(format!("invalid n* search settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LevelOutcome {
    pub n: usize,
    /// Trials run before the first failure (or the full streak).
    pub trials: usize,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NStarOutcome {
    pub n_star: usize,
    pub levels: Vec<LevelOutcome>,
}

/// Runs trials at level `n` until the first failure. Trials are evaluated in
/// parallel batches but accounted in index order, so the outcome does not
/// depend on the thread count.
fn run_level<F>(n: usize, streak: usize, oracle: &F) -> Result<LevelOutcome>
where
    F: Fn(usize, usize) -> Result<bool> + Sync,
{
    let batch = rayon::current_num_threads().max(1);
    let mut t = 0;
    while t < streak {
        let end = (t + batch).min(streak);
        let results: Vec<Result<bool>> = (t..end).into_par_iter().map(|trial| oracle(n, trial)).collect();
        for (offset, r) in results.into_iter().enumerate() {
            if !r? {
                return Ok(LevelOutcome {
                    n,
                    trials: t + offset + 1,
                    certified: false,
                });
            }
        }
        t = end;
    }
    Ok(LevelOutcome {
        n,
        trials: streak,
        certified: true,
    })
}

/// Sequential search: a failed level raises `n` by `step_up`, a certified one
/// lowers it by `step_down`. The search stops at the floor, or once a
/// certified level and a failed level below it are within `step_down` of each
/// other; the smallest certified level is reported.
pub fn nstar_search<F>(cfg: &NStarConfig, oracle: F) -> Result<NStarOutcome>
where
    F: Fn(usize, usize) -> Result<bool> + Sync,
{
    cfg.validate()?;
    let mut n = cfg.start;
    let mut best: Option<usize> = None;
    let mut failed: BTreeSet<usize> = BTreeSet::new();
    let mut levels = Vec::new();
    loop {
        let outcome = run_level(n, cfg.streak, &oracle)?;
        levels.push(outcome);
        if outcome.certified {
            let b = best.map_or(n, |b| b.min(n));
            best = Some(b);
            let bracketed = failed.range(..b).next_back().is_some_and(|&f| b - f <= cfg.step_down);
            if n <= cfg.floor || bracketed {
                return Ok(NStarOutcome { n_star: b, levels });
            }
            n = n.saturating_sub(cfg.step_down).max(cfg.floor);
        } else {
            failed.insert(n);
            if let Some(b) = best {
                if b > n && b - n <= cfg.step_down {
                    return Ok(NStarOutcome { n_star: b, levels });
                }
            }
            n += cfg.step_up;
            // Never revisit a certified level from below: it is already known.
            if let Some(b) = best {
                if n >= b {
                    return Ok(NStarOutcome { n_star: b, levels });
                }
            }
            if n > cfg.ceiling {
                return Err(Error::SearchFailure { ceiling: cfg.ceiling });
            }
        }
    }
}

/// Coarse-then-fine search for large `n*`. A first pass with steps scaled by
/// `factor` locates the transition; the second pass runs the configured steps
/// starting from the coarse result. Trial outcomes are cached by `(n, trial)`,
/// so levels visited by both passes are not recomputed. The levels of both
/// passes are returned in visiting order.
pub fn nstar_search_two_stage<F>(cfg: &NStarConfig, factor: usize, oracle: F) -> Result<NStarOutcome>
where
    F: Fn(usize, usize) -> Result<bool> + Sync,
{
    cfg.validate()?;
    if factor <= 1 {
        return nstar_search(cfg, oracle);
    }
    let cache: Mutex<HashMap<(usize, usize), bool>> = Mutex::new(HashMap::new());
    let cached = |n: usize, trial: usize| -> Result<bool> {
        if let Some(&v) = cache.lock().expect("cache lock").get(&(n, trial)) {
            return Ok(v);
        }
        let v = oracle(n, trial)?;
        cache.lock().expect("cache lock").insert((n, trial), v);
        Ok(v)
    };
    let coarse_cfg = NStarConfig {
        step_up: cfg.step_up * factor,
        step_down: cfg.step_down * factor,
        ..*cfg
    };
    let coarse = nstar_search(&coarse_cfg, &cached)?;
    let fine_cfg = NStarConfig {
        start: coarse.n_star,
        ..*cfg
    };
    let fine = nstar_search(&fine_cfg, &cached)?;
    let mut levels = coarse.levels;
    levels.extend(fine.levels);
    Ok(NStarOutcome {
        n_star: fine.n_star,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(pairs: &[(MultiIndex, f64)]) -> SymmetrizedEstimate {
        SymmetrizedEstimate::from_terms(pairs.iter().cloned())
    }

    #[test]
    fn consensus_examples() {
        assert!((consensus(&[0.2, 0.3]) - 0.06f64.sqrt()).abs() < 1e-15);
        assert!((consensus(&[-0.2, -0.3]) + 0.244_949).abs() < 1e-6);
        assert_eq!(consensus(&[0.1; 4]), 0.1);
        assert_eq!(consensus(&[0.7]), 0.7);
        assert_eq!(consensus(&[0.2, -0.2]), 0.0);
        assert!(consensus(&[0.3, -0.1]) > 0.0);
    }

    #[test]
    fn error_metrics() {
        let truth = EnergyModel::from_terms(2, [(MultiIndex::pair(0, 1), 1.0)]).unwrap();
        let basis = vec![MultiIndex::pair(0, 1), MultiIndex::power(0, 2)];
        let e = est(&[(MultiIndex::pair(0, 1), 0.9)]);
        assert!((mean_abs_error(&e, &truth, &basis) - 0.05).abs() < 1e-15);
        assert!((max_abs_error(&e, &truth, &basis) - 0.1).abs() < 1e-15);
        let exact = est(&[(MultiIndex::pair(0, 1), 1.0)]);
        assert_eq!(mean_abs_error(&exact, &truth, &basis), 0.0);
    }

    #[test]
    fn thresholding_is_strict() {
        let e = est(&[
            (MultiIndex::pair(0, 1), 0.24),
            (MultiIndex::pair(1, 2), 0.01),
            (MultiIndex::pair(0, 2), -0.125),
            (MultiIndex::power(0, 2), 5.0),
        ]);
        let s = threshold_structure(&e, 0.125);
        assert_eq!(s, BTreeSet::from([vec![0, 1]]));
        assert!(threshold_structure(&e, 1.0).is_empty());
    }

    fn small_cfg(start: usize, floor: usize) -> NStarConfig {
        NStarConfig {
            start,
            floor,
            ceiling: 10_000,
            ..NStarConfig::default()
        }
    }

    #[test]
    fn threshold_oracle() {
        let out = nstar_search(&small_cfg(480, 10), |n, _| Ok(n >= 500)).unwrap();
        assert!((500..=525).contains(&out.n_star), "{}", out.n_star);
    }

    #[test]
    fn always_true_reaches_floor() {
        let out = nstar_search(&small_cfg(100, 50), |_, _| Ok(true)).unwrap();
        assert_eq!(out.n_star, 50);
        assert_eq!(out.levels.len(), 6);
    }

    #[test]
    fn ceiling_is_a_failure() {
        let cfg = NStarConfig {
            ceiling: 200,
            ..small_cfg(100, 10)
        };
        assert!(matches!(nstar_search(&cfg, |_, _| Ok(false)), Err(Error::SearchFailure { .. })));
    }

    #[test]
    fn failure_at_late_trial_counts() {
        // fails only on trial 44 below 300
        let out = nstar_search(&small_cfg(320, 10), |n, t| Ok(n >= 300 || t != 44)).unwrap();
        assert!((300..=310).contains(&out.n_star));
        assert!(out.levels.iter().any(|l| !l.certified && l.trials == 45));
    }

    #[test]
    fn two_stage_matches_threshold_and_reuses_trials() {
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let cfg = small_cfg(1000, 10);
        let out = nstar_search_two_stage(&cfg, 10, |n, _| {
            calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            Ok(n >= 5003)
        })
        .unwrap();
        assert!((5003..=5003 + 25).contains(&out.n_star), "{}", out.n_star);
        let distinct: BTreeSet<(usize, bool)> = out.levels.iter().map(|l| (l.n, l.certified)).collect();
        let expected: usize = distinct.iter().map(|&(_, c)| if c { 45 } else { 1 }).sum();
        assert_eq!(calls.into_inner(), expected);
    }

    proptest! {
        #[test]
        fn easier_oracle_never_raises_nstar(
            thresholds in proptest::collection::vec(20usize..800, 45),
            relief in proptest::collection::vec(0usize..200, 45),
            start in 50usize..600,
        ) {
            let hard = |n: usize, t: usize| Ok(n >= thresholds[t]);
            let easy = |n: usize, t: usize| Ok(n + relief[t] >= thresholds[t]);
            let cfg = small_cfg(start, 10);
            let a = nstar_search(&cfg, hard).unwrap().n_star;
            let b = nstar_search(&cfg, easy).unwrap().n_star;
            prop_assert!(b <= a, "easy {b} > hard {a}");
        }
    }
}
