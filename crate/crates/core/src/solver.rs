//! Limited-memory quasi-Newton minimization with an optional ℓ1 term
//! (orthant-wise descent), plus node-wise fitting.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BasisSpec, LocalView, MultiIndex};
use crate::mrd::{CenteredLocalEnergy, MrdHyper, MrdParams};
use crate::objectives::{l1_weight, Diagnostics, IsodusObjective, LocalObjective, Method, PlConfig, PlObjective};
use crate::sampling::SampleSet;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Accepted non-descent per step, relative to `max(1, |F|)`.
const DESCENT_SLACK: f64 = 1e-14;
/// Bound on `|∇ log S|` at a stopping point of unpenalized ISODUS. At a true
/// minimizer it vanishes along with `∇S`; when `S` instead decays towards zero
/// along a ray it stays of the order of the features, and only `S` shrank
/// enough to meet the gradient tolerance.
const COLLAPSE_LOG_GRADIENT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Effective ℓ1 coefficient; zero disables the penalty.
    pub l1_weight: f64,
    pub history: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 5000,
            l1_weight: 0.0,
            history: 10,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || self.max_iters == 0 || !(self.l1_weight >= 0.0) || self.history == 0 {
            return Err(Error::InvalidParameter(format!("invalid solver settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIters,
    LineSearchFailure,
    /// The objective collapsed towards its infimum along a ray, so there is
    /// no finite minimizer (unpenalized ISODUS dominated by a few samples).
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveResult {
    pub theta: Vec<f64>,
    /// Smooth part plus the ℓ1 term.
    pub objective: f64,
    /// Minimum-norm subgradient, sup norm.
    pub optimality: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
    /// Composite objective after each accepted step, starting at `x0`.
    pub trace: Vec<f64>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// Minimum-norm element of `∇f(x) + ∂(Σ w_j |x_j|)`.
pub fn pseudo_gradient(x: &[f64], grad: &[f64], weights: &[f64], out: &mut [f64]) {
    for j in 0..x.len() {
        let (g, w) = (grad[j], weights[j]);
        out[j] = if w == 0.0 {
            g
        } else if x[j] > 0.0 {
            g + w
        } else if x[j] < 0.0 {
            g - w
        } else if g + w < 0.0 {
            g + w
        } else if g - w > 0.0 {
            g - w
        } else {
            0.0
        };
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l1_term(x: &[f64], weights: &[f64]) -> f64 {
    x.iter().zip(weights).map(|(v, w)| w * v.abs()).sum()
}

/// Minimizes `f(x) + l1_weight · Σ_{j penalized} |x_j|`.
///
/// `f` writes the gradient into its second argument and returns the value.
/// Errors for which [`Error::is_recoverable_in_line_search`] holds are treated
/// as `+∞` during the line search.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &SolveConfig, penalized: Option<&[bool]>) -> Result<SolveResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    cfg.validate()?;
    let dim = x0.len();
    let weights: Vec<f64> = match penalized {
        Some(mask) => {
            if mask.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: mask.len(),
                });
            }
            mask.iter().map(|&m| if m { cfg.l1_weight } else { 0.0 }).collect()
        }
        None => vec![cfg.l1_weight; dim],
    };

    let mut x = x0.to_vec();
    let mut grad = vec![0.0; dim];
    let smooth = match f(&x, &mut grad) {
        Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => v,
        Ok(_) => return Err(Error::NonFiniteStart),
        Err(e) if e.is_recoverable_in_line_search() => return Err(Error::NonFiniteStart),
        Err(e) => return Err(e),
    };
    let mut value = smooth + l1_term(&x, &weights);
    let mut evaluations = 1;
    let mut pg = vec![0.0; dim];
    pseudo_gradient(&x, &grad, &weights, &mut pg);

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut trace = vec![value];
    let mut dir = vec![0.0; dim];
    let mut alpha_buf = vec![0.0; cfg.history];
    let mut x_new = vec![0.0; dim];
    let mut grad_new = vec![0.0; dim];
    let mut iterations = 0;
    let mut status = Status::MaxIters;

    while iterations < cfg.max_iters {
        if sup_norm(&pg) <= cfg.grad_tol {
            status = Status::Converged;
            break;
        }
        iterations += 1;

        let mut accepted = None;
        // Quasi-Newton direction first, then steepest descent with fresh memory.
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
            }
            two_loop(&pg, &memory, &mut alpha_buf, &mut dir);
            for j in 0..dim {
                if weights[j] > 0.0 && dir[j] * pg[j] >= 0.0 {
                    dir[j] = 0.0;
                }
            }
            let orthant: Vec<f64> = (0..dim)
                .map(|j| if x[j] != 0.0 { x[j].signum() } else { -pg[j].signum() })
                .collect();
            let mut step = if memory.is_empty() {
                (1.0 / sup_norm(&dir).max(1e-300)).min(1.0)
            } else {
                1.0
            };
            for _ in 0..=MAX_HALVINGS {
                for j in 0..dim {
                    let v = x[j] + step * dir[j];
                    x_new[j] = if weights[j] > 0.0 && v * orthant[j] <= 0.0 { 0.0 } else { v };
                }
                evaluations += 1;
                let candidate = match f(&x_new, &mut grad_new) {
                    Ok(v) if v.is_finite() && grad_new.iter().all(|g| g.is_finite()) => {
                        Some(v + l1_term(&x_new, &weights))
                    }
                    Ok(_) => None,
                    Err(e) if e.is_recoverable_in_line_search() => None,
                    Err(e) => return Err(e),
                };
                if let Some(v_new) = candidate {
                    let decrease: f64 = (0..dim).map(|j| pg[j] * (x_new[j] - x[j])).sum();
                    let slack = DESCENT_SLACK * value.abs().max(1.0);
                    if v_new <= value + ARMIJO_C * decrease || (v_new <= value + slack && decrease < 0.0 && step < 1e-6) {
                        accepted = Some(v_new);
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some(v_new) = accepted else {
            status = Status::LineSearchFailure;
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if memory.len() == cfg.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut grad, &mut grad_new);
        value = v_new;
        trace.push(value);
        pseudo_gradient(&x, &grad, &weights, &mut pg);
    }
    if status == Status::MaxIters && sup_norm(&pg) <= cfg.grad_tol {
        status = Status::Converged;
    }

    Ok(SolveResult {
        optimality: sup_norm(&pg),
        theta: x,
        objective: value,
        iterations,
        evaluations,
        status,
        trace,
    })
}

/// `dir = -H pg` with the limited-memory inverse Hessian estimate.
fn two_loop(pg: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, alpha: &mut [f64], dir: &mut [f64]) {
    dir.copy_from_slice(pg);
    for (i, (s, y, rho)) in memory.iter().enumerate().rev() {
        let a = rho * dot(s, dir);
        alpha[i] = a;
        for (d, yv) in dir.iter_mut().zip(y) {
            *d -= a * yv;
        }
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        dir.iter_mut().for_each(|d| *d *= gamma);
    }
    for (i, (s, y, rho)) in memory.iter().enumerate() {
        let b = rho * dot(y, dir);
        for (d, sv) in dir.iter_mut().zip(s) {
            *d += (alpha[i] - b) * sv;
        }
    }
    dir.iter_mut().for_each(|d| *d = -*d);
}

/// Recomputes the minimum-norm subgradient at `theta` from a fresh gradient
/// evaluation.
pub fn certify<F>(mut f: F, theta: &[f64], l1_weight: f64, penalized: Option<&[bool]>) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; theta.len()];
    f(theta, &mut grad)?;
    let weights: Vec<f64> = (0..theta.len())
        .map(|j| match penalized {
            Some(mask) if !mask[j] => 0.0,
            _ => l1_weight,
        })
        .collect();
    let mut best = 0.0f64;
    for j in 0..theta.len() {
        let (g, w) = (grad[j], weights[j]);
        let v = if theta[j] != 0.0 {
            (g + w * theta[j].signum()).abs()
        } else {
            // distance from -g to [-w, w]
            (g.abs() - w).max(0.0)
        };
        best = best.max(v);
    }
    Ok(best)
}

/// Everything needed to fit one node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub method: Method,
    pub basis: BasisSpec,
    pub mrd: MrdHyper,
    /// Penalty multiplier; the effective weight is `λ √(log p / n)`.
    pub lambda: f64,
    /// Leave single-variable terms out of the ℓ1 penalty.
    pub exempt_single_node: bool,
    /// Keep the normalizing prefactor of the regularizing density in ISODUS.
    pub normalized_weight: bool,
    pub solve: SolveConfig,
    pub pl: PlConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::Isodus,
            basis: BasisSpec::pairwise_quadratic(),
            mrd: MrdHyper::default(),
            lambda: 0.0,
            exempt_single_node: false,
            normalized_weight: true,
            solve: SolveConfig::default(),
            pl: PlConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeFit {
    pub node: usize,
    pub basis: Vec<MultiIndex>,
    pub result: SolveResult,
    pub l1_weight: f64,
    pub penalized: Vec<bool>,
    /// Optimality re-measured independently after the solve.
    pub certified_optimality: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// Objective for one node under the chosen method.
///
/// Unpenalized ISODUS objectives are divided by the largest sample weight, so
/// the gradient tolerance stays meaningful when the samples sit far out in the
/// tails of `R_i`; the minimizer is unchanged. Penalized ones keep their scale,
/// since it sets the meaning of λ, and fail if every weight underflows.
pub enum NodeObjective {
    Isodus(IsodusObjective),
    Pl(PlObjective),
}

impl NodeObjective {
    pub fn new(method: Method, view: &LocalView, samples: &SampleSet, cfg: &FitConfig, s: u32) -> Result<Self> {
        Ok(match method {
            Method::Isodus => {
                let params = MrdParams::from_hyper(cfg.mrd, s)?;
                let cle = CenteredLocalEnergy::new(view.clone(), params)?;
                let obj = IsodusObjective::with_weight(&cle, samples, cfg.normalized_weight)?;
                let top = obj.max_log_weight();
                NodeObjective::Isodus(if cfg.lambda == 0.0 && top.is_finite() {
                    obj.rescaled(top)
                } else if top < f64::MIN_POSITIVE.ln() {
                    return Err(Error::WeightUnderflow(top));
                } else {
                    obj
                })
            }
            Method::Pl => NodeObjective::Pl(PlObjective::new(view, samples, cfg.pl)?),
        })
    }

    pub fn as_objective(&self) -> &dyn LocalObjective {
        match self {
            NodeObjective::Isodus(o) => o,
            NodeObjective::Pl(o) => o,
        }
    }
}

/// Starting point: zero for ISODUS; for PL, the node's pure quadratic term is
/// set to `1 / (2 var(x_i))` (or the lowest pure even power to one) so the
/// conditional is integrable. When the basis has higher pure even powers, the
/// highest one also gets a small positive coefficient: otherwise the start sits
/// on the edge of the integrable region and a first step that touches any odd
/// or cross term leaves it.
pub fn initial_point(method: Method, view: &LocalView, samples: &SampleSet) -> Result<Vec<f64>> {
    let mut theta = vec![0.0; view.len()];
    if method == Method::Isodus {
        return Ok(theta);
    }
    let node = view.node();
    let pure_even: Vec<(usize, u32)> = view
        .basis()
        .iter()
        .enumerate()
        .filter(|(_, k)| k.arity() == 1 && k.order() % 2 == 0)
        .map(|(j, k)| (j, k.order()))
        .collect();
    let (Some(&(j, lo)), Some(&(top, hi))) = (
        pure_even.iter().min_by_key(|(_, o)| *o),
        pure_even.iter().max_by_key(|(_, o)| *o),
    ) else {
        return Err(Error::InvalidParameter(format!(
            "pseudo-likelihood for x{node} needs a pure even power of x{node} in the basis"
        )));
    };
    let col = samples.column(node);
    theta[j] = if lo == 2 {
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        if var > 0.0 {
            0.5 / var
        } else {
            1.0
        }
    } else {
        1.0
    };
    if hi > lo {
        let moment = col.iter().map(|v| v.powi(hi as i32)).sum::<f64>() / col.len() as f64;
        theta[top] = if moment > 0.0 { 1e-2 / moment } else { 1e-2 };
    }
    Ok(theta)
}

/// Fits node `node` over an explicit candidate basis.
pub fn fit_node_with_basis(
    samples: &SampleSet,
    node: usize,
    basis: Vec<MultiIndex>,
    s: u32,
    cfg: &FitConfig,
) -> Result<NodeFit> {
    let view = LocalView::from_basis(node, samples.p(), basis)?;
    let objective = NodeObjective::new(cfg.method, &view, samples, cfg, s)?;
    let obj = objective.as_objective();
    let weight = l1_weight(cfg.lambda, samples.p(), samples.n());
    let penalized: Vec<bool> = view
        .basis()
        .iter()
        .map(|k| !(cfg.exempt_single_node && k.arity() == 1))
        .collect();
    let solve = SolveConfig {
        l1_weight: weight,
        ..cfg.solve
    };
    let x0 = initial_point(cfg.method, &view, samples)?;
    let mut diagnostics = Diagnostics::default();
    let mut result = minimize(
        |theta, grad| obj.eval_into(theta, grad, &mut diagnostics),
        &x0,
        &solve,
        Some(&penalized),
    )?;
    if cfg.method == Method::Isodus && cfg.lambda == 0.0 && result.optimality > COLLAPSE_LOG_GRADIENT * result.objective {
        result.status = Status::Unbounded;
    }
    let certified_optimality = if result.converged() {
        Some(certify(
            |theta, grad| obj.eval_into(theta, grad, &mut Diagnostics::default()),
            &result.theta,
            weight,
            Some(&penalized),
        )?)
    } else {
        None
    };
    Ok(NodeFit {
        node,
        basis: view.basis().to_vec(),
        result,
        l1_weight: weight,
        penalized,
        certified_optimality,
        diagnostics,
    })
}

/// Fits node `node` over the candidate class `cfg.basis`.
pub fn fit_node(samples: &SampleSet, node: usize, cfg: &FitConfig) -> Result<NodeFit> {
    let basis = cfg.basis.node_basis(samples.p(), node);
    fit_node_with_basis(samples, node, basis, cfg.basis.max_order, cfg)
}

/// Independent fits of every node, in parallel, returned in node order.
pub fn fit_all(samples: &SampleSet, cfg: &FitConfig) -> Result<Vec<NodeFit>> {
    (0..samples.p())
        .into_par_iter()
        .map(|i| fit_node(samples, i, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gaussian_model;
    use crate::sampling::sample_gaussian;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn quadratic(c: Vec<f64>) -> impl FnMut(&[f64], &mut [f64]) -> Result<f64> {
        move |x, g| {
            let mut v = 0.0;
            for j in 0..x.len() {
                g[j] = x[j] - c[j];
                v += 0.5 * g[j] * g[j];
            }
            Ok(v)
        }
    }

    #[test]
    fn quadratic_minimum() {
        let r = minimize(quadratic(vec![1.0, -2.0]), &[0.0, 0.0], &SolveConfig::default(), None).unwrap();
        assert!(r.converged());
        assert!((r.theta[0] - 1.0).abs() < 1e-8 && (r.theta[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn isodus_on_identical_samples_is_unbounded() {
        let s = SampleSet::from_rows(1, vec![1.0; 5], 0).unwrap();
        let cfg = FitConfig {
            basis: BasisSpec::new(2, 4, 1),
            ..FitConfig::default()
        };
        let f = fit_all(&s, &cfg).unwrap();
        assert_eq!(f[0].result.status, Status::Unbounded);
        assert!(f[0].certified_optimality.is_none());
    }

    #[test]
    fn distant_well_is_flagged_not_stopped_at_zero() {
        // A degree-6 energy with its mass near x = -2, where every weight R(x)
        // is below exp(-40). Unscaled, the first gradient is already under
        // tolerance and the fit reports convergence at zero; rescaled, the
        // solver moves and finds the objective has no finite minimizer.
        let model = crate::sampling::random_polynomial_1d(6, crate::sampling::derive_seed(2024, &[6, 4, 0])).unwrap();
        let grid = crate::sampling::build_grid(&model, 5000).unwrap();
        let s = grid.sample(100, crate::sampling::derive_seed(2024, &[6, 4, 1])).unwrap();
        let hi = s.column(0).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi < -1.4, "max sample {hi}");
        let cfg = FitConfig {
            basis: BasisSpec::new(2, 6, 1),
            ..FitConfig::default()
        };
        let f = fit_all(&s, &cfg).unwrap();
        assert_eq!(f[0].result.status, Status::Unbounded);
        assert!(f[0].result.iterations > 5);

        let penalized = FitConfig { lambda: 1.0, ..cfg };
        let farther = SampleSet::from_rows(1, vec![30.0, -30.0, 31.0, -31.0], 0).unwrap();
        assert!(matches!(fit_all(&farther, &penalized), Err(Error::WeightUnderflow(_))));
    }

    #[test]
    fn pl_quartic_small_samples_converge() {
        // A start with only the quadratic set failed its first line search on
        // some of these draws.
        let grid = crate::sampling::build_grid(&crate::fixtures::quartic_1d(), 5000).unwrap();
        let cfg = FitConfig {
            method: Method::Pl,
            basis: BasisSpec::new(2, 4, 1),
            ..FitConfig::default()
        };
        for seed in 0..20 {
            let s = grid.sample(100, seed).unwrap();
            let f = fit_all(&s, &cfg).unwrap();
            assert!(f[0].result.converged(), "seed {seed}: {:?}", f[0].result.status);
        }
    }

    #[test]
    fn soft_threshold() {
        let cfg = SolveConfig {
            l1_weight: 1.0,
            ..SolveConfig::default()
        };
        let r = minimize(quadratic(vec![3.0]), &[0.0], &cfg, None).unwrap();
        assert!(r.converged());
        assert!((r.theta[0] - 2.0).abs() < 1e-8);
        let r = minimize(quadratic(vec![0.5, -3.0]), &[0.0, 0.0], &cfg, None).unwrap();
        assert_eq!(r.theta[0], 0.0);
        assert!((r.theta[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn large_penalty_gives_exact_zero() {
        let s = sample_gaussian(&DMatrix::identity(3, 3), &[0.0; 3], 500, 1).unwrap();
        let view = LocalView::from_basis(0, 3, BasisSpec::pairwise_quadratic().node_basis(3, 0)).unwrap();
        let cle = CenteredLocalEnergy::new(view, MrdParams::new(2.0, 2.0, 2).unwrap()).unwrap();
        let obj = IsodusObjective::new(&cle, &s).unwrap();
        let g0 = obj.evaluate(&[0.0; 3]).unwrap().gradient;
        let cfg = SolveConfig {
            l1_weight: sup_norm(&g0) * 1.01,
            ..SolveConfig::default()
        };
        let r = minimize(|t, g| obj.eval_into(t, g, &mut Diagnostics::default()), &[0.0; 3], &cfg, None).unwrap();
        assert!(r.converged());
        assert_eq!(r.theta, vec![0.0; 3]);
    }

    #[test]
    fn overflow_is_backtracked() {
        // exp(10 x) - x with a huge first step
        let f = |x: &[f64], g: &mut [f64]| {
            let e = 10.0 * x[0];
            if e > 700.0 {
                return Err(Error::ObjectiveOverflow { sample: 0, exponent: e });
            }
            g[0] = 10.0 * e.exp() - 1.0;
            Ok(e.exp() - x[0])
        };
        let r = minimize(f, &[-200.0], &SolveConfig::default(), None).unwrap();
        assert!(r.converged());
        assert!((r.theta[0] - (0.1f64).ln() / 10.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64], _: &mut [f64]| Ok(f64::NAN);
        assert!(matches!(minimize(f, &[0.0], &SolveConfig::default(), None), Err(Error::NonFiniteStart)));
    }

    #[test]
    fn ggm_fit_and_certificate() {
        let prec = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
        let s = sample_gaussian(&prec, &[0.0, 0.0], 20_000, 5).unwrap();
        for method in [Method::Isodus, Method::Pl] {
            let cfg = FitConfig {
                method,
                ..FitConfig::default()
            };
            let fits = fit_all(&s, &cfg).unwrap();
            for fit in &fits {
                assert!(fit.result.converged(), "{method} {:?}", fit.result.status);
                assert!(fit.certified_optimality.unwrap() <= 1e-8);
                let edge = fit.basis.iter().position(|k| k.arity() == 2).unwrap();
                assert!((fit.result.theta[edge] - 0.25).abs() < 0.05, "{}", fit.result.theta[edge]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn monotone_descent(
            c in proptest::collection::vec(-3.0f64..3.0, 4),
            w in 0.0f64..1.0,
        ) {
            // ill-conditioned quadratic
            let scales = [1.0, 10.0, 100.0, 0.1];
            let f = |x: &[f64], g: &mut [f64]| {
                let mut v = 0.0;
                for j in 0..4 {
                    let d = x[j] - c[j];
                    g[j] = scales[j] * d;
                    v += 0.5 * scales[j] * d * d;
                }
                Ok(v)
            };
            let cfg = SolveConfig { l1_weight: w, ..SolveConfig::default() };
            let r = minimize(f, &[0.0; 4], &cfg, None).unwrap();
            prop_assert!(r.converged());
            for pair in r.trace.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-14 * pair[0].abs().max(1.0));
            }
            for j in 0..4 {
                let expect = if (scales[j] * c[j]).abs() <= w { 0.0 } else { c[j] - w * c[j].signum() / scales[j] };
                prop_assert!((r.theta[j] - expect).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut prec = DMatrix::identity(3, 3);
        prec[(0, 1)] = 0.3;
        prec[(1, 0)] = 0.3;
        prec[(1, 2)] = -0.2;
        prec[(2, 1)] = -0.2;
        let model = gaussian_model(&prec, &[0.0; 3]).unwrap();
        let s = sample_gaussian(&model.to_precision().unwrap(), &[0.0; 3], 3000, 9).unwrap();
        let perm = [2, 0, 1];
        let sp = s.permuted(&perm);
        let cfg = FitConfig::default();
        for node in 0..3 {
            let a = fit_node(&s, node, &cfg).unwrap();
            let b = fit_node(&sp, perm[node], &cfg).unwrap();
            for (k, t) in a.basis.iter().zip(&a.result.theta) {
                let kp = k.permuted(&perm);
                let j = b.basis.iter().position(|q| *q == kp).unwrap();
                assert!((b.result.theta[j] - t).abs() < 1e-10);
            }
        }
    }
}
