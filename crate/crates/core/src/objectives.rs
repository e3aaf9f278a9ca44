//! Node-wise objectives: interaction screening (ISODUS) and pseudo-likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnergyModel, LocalView};
use crate::mrd::CenteredLocalEnergy;
use crate::quadrature::{Domain, Integrator, QuadratureConfig};
use crate::sampling::SampleSet;

/// Samples per parallel work unit. Partial sums are combined in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 2048;

/// Largest exponent accepted before an evaluation is declared an overflow.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Isodus,
    Pl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Isodus => "isodus",
            Method::Pl => "pl",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isodus" | "is" => Ok(Method::Isodus),
            "pl" | "pseudo-likelihood" => Ok(Method::Pl),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

/// Counters reported alongside an evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub quadratures: usize,
    pub closed_forms: usize,
    pub subdivisions: usize,
    pub integrand_evaluations: usize,
}

impl Diagnostics {
    fn merge(&mut self, other: &Diagnostics) {
        self.quadratures += other.quadratures;
        self.closed_forms += other.closed_forms;
        self.subdivisions += other.subdivisions;
        self.integrand_evaluations += other.integrand_evaluations;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// A smooth objective over a node's parameter vector.
pub trait LocalObjective: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the value.
    fn eval_into(&self, theta: &[f64], grad: &mut [f64], diag: &mut Diagnostics) -> Result<f64>;

    fn evaluate(&self, theta: &[f64]) -> Result<ObjectiveEvaluation> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let mut gradient = vec![0.0; self.dim()];
        let mut diagnostics = Diagnostics::default();
        let value = self.eval_into(theta, &mut gradient, &mut diagnostics)?;
        Ok(ObjectiveEvaluation {
            value,
            gradient,
            diagnostics,
        })
    }
}

/// `⟨ exp(-E_i^g(x)) R_i(x_i) ⟩` with the centered features precomputed.
#[derive(Clone, Debug)]
pub struct IsodusObjective {
    k: usize,
    n: usize,
    /// `n × k` centered features, row-major.
    features: Vec<f64>,
    /// `log R_i(x_i)` per sample.
    log_weight: Vec<f64>,
}

impl IsodusObjective {
    pub fn new(cle: &CenteredLocalEnergy, samples: &SampleSet) -> Result<Self> {
        Self::with_weight(cle, samples, true)
    }

    /// `normalized = false` drops the constant prefactor of `R_i`, weighting
    /// samples by `exp(-ν|x_i|^{s+δ})` alone. The unpenalized minimizer is the
    /// same; the relative size of an ℓ1 term changes.
    pub fn with_weight(cle: &CenteredLocalEnergy, samples: &SampleSet, normalized: bool) -> Result<Self> {
        if samples.p() != cle.view().p() {
            return Err(Error::Dimension {
                expected: cle.view().p(),
                got: samples.p(),
            });
        }
        let k = cle.len();
        let node = cle.node();
        let params = *cle.params();
        let shift = if normalized { 0.0 } else { params.log_normalizer() };
        let mut features = vec![0.0; samples.n() * k];
        let mut log_weight = Vec::with_capacity(samples.n());
        for (row, x) in features.chunks_exact_mut(k.max(1)).zip(samples.rows()) {
            if k > 0 {
                cle.features(x, row);
            }
            log_weight.push(params.log_density(x[node]) - shift);
        }
        Ok(Self {
            k,
            n: samples.n(),
            features,
            log_weight,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest `log R_i(x_i)` over the samples.
    pub fn max_log_weight(&self) -> f64 {
        self.log_weight.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Multiplies the objective by `exp(-log_scale)`.
    pub fn rescaled(mut self, log_scale: f64) -> Self {
        self.log_weight.iter_mut().for_each(|w| *w -= log_scale);
        self
    }

    /// Features of sample `s`.
    pub fn features(&self, s: usize) -> &[f64] {
        &self.features[s * self.k..(s + 1) * self.k]
    }

    fn chunk_sum(&self, theta: &[f64], start: usize, end: usize, grad: &mut [f64]) -> Result<f64> {
        let mut value = 0.0;
        for s in start..end {
            let g = self.features(s);
            let exponent = g.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + self.log_weight[s];
            if !(exponent <= MAX_EXPONENT) {
                return Err(Error::ObjectiveOverflow { sample: s, exponent });
            }
            let w = exponent.exp();
            value += w;
            for (o, gi) in grad.iter_mut().zip(g) {
                *o += w * gi;
            }
        }
        Ok(value)
    }
}

impl LocalObjective for IsodusObjective {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval_into(&self, theta: &[f64], grad: &mut [f64], _diag: &mut Diagnostics) -> Result<f64> {
        let chunks = self.n.div_ceil(CHUNK);
        let partials: Vec<Result<(f64, Vec<f64>)>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut g = vec![0.0; self.k];
                let v = self.chunk_sum(theta, c * CHUNK, ((c + 1) * CHUNK).min(self.n), &mut g)?;
                Ok((v, g))
            })
            .collect();
        let mut value = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for part in partials {
            let (v, g) = part?;
            value += v;
            for (o, x) in grad.iter_mut().zip(&g) {
                *o += x;
            }
        }
        let inv = 1.0 / self.n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok(value * inv)
    }
}

/// ISODUS value and gradient at a single point (no averaging).
pub fn isodus_pointwise(cle: &CenteredLocalEnergy, theta: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
    cle.features(x, grad);
    let exponent = grad.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
        + cle.params().log_density(x[cle.node()]);
    let w = exponent.exp();
    grad.iter_mut().for_each(|g| *g *= w);
    w
}

pub fn isodus_objective(cle: &CenteredLocalEnergy, theta: &[f64], samples: &SampleSet) -> Result<ObjectiveEvaluation> {
    IsodusObjective::new(cle, samples)?.evaluate(theta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlConfig {
    pub quadrature: QuadratureConfig,
    /// Use the completed-square normalizer when the conditional is Gaussian.
    pub closed_form_gaussian: bool,
    /// Integrate once per distinct conditional instead of once per sample.
    pub reuse_shared_conditionals: bool,
}

impl Default for PlConfig {
    fn default() -> Self {
        Self {
            quadrature: QuadratureConfig::default(),
            closed_form_gaussian: true,
            reuse_shared_conditionals: false,
        }
    }
}

/// Log-normalizer and raw moments `E[x^m]`, `m = 0..=need`, of the density
/// proportional to `exp(Σ_m a_m x^m)`.
#[derive(Clone, Debug, Default)]
pub(crate) struct ConditionalMoments {
    pub log_z: f64,
    pub moments: Vec<f64>,
}

#[inline]
fn horner(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

#[inline]
fn horner_derivatives(a: &[f64], x: f64) -> (f64, f64, f64) {
    // value, first and second derivative
    let (mut p, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for &c in a.iter().rev() {
        d2 = d2 * x + 2.0 * d1;
        d1 = d1 * x + p;
        p = p * x + c;
    }
    (p, d1, d2)
}

fn leading_degree(a: &[f64]) -> usize {
    a.iter().rposition(|&c| c != 0.0).unwrap_or(0)
}

/// Location of the global maximum of an integrable polynomial exponent.
fn polynomial_mode(a: &[f64], deg: usize) -> f64 {
    // Critical points lie inside the Cauchy bound of the derivative.
    let lead = deg as f64 * a[deg];
    let radius = 1.0
        + (1..deg)
            .map(|m| (m as f64 * a[m] / lead).abs())
            .fold(0.0, f64::max);
    const POINTS: usize = 65;
    let span = radius.asinh();
    let at = |j: usize| (span * (2.0 * j as f64 / (POINTS - 1) as f64 - 1.0)).sinh();
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for j in 0..POINTS {
        let v = horner(a, at(j));
        if v > best_val {
            best_val = v;
            best = j;
        }
    }
    let (mut lo, mut hi) = (at(best.saturating_sub(1)), at((best + 1).min(POINTS - 1)));
    let mut x = at(best);
    // Safeguarded Newton on a'(x) = 0 inside the bracket.
    if horner_derivatives(a, lo).1 < 0.0 || horner_derivatives(a, hi).1 > 0.0 {
        return x;
    }
    for _ in 0..100 {
        let (_, d1, d2) = horner_derivatives(a, x);
        if d1 == 0.0 {
            break;
        }
        if d1 > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - d1 / d2;
        let next = if d2 < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-14 * (1.0 + x.abs()) {
            x = next;
            break;
        }
        x = next;
    }
    x
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Normalizer and moments of `exp(Σ a_m x^m)`. `a[0]` is ignored.
pub(crate) fn conditional_moments(
    a: &[f64],
    need: usize,
    closed_form: bool,
    integrator: &mut Integrator,
    scratch: &mut Vec<f64>,
    diag: &mut Diagnostics,
) -> Result<ConditionalMoments> {
    let deg = leading_degree(a);
    if deg == 0 || deg % 2 == 1 || a[deg] > 0.0 {
        return Err(Error::NotIntegrable(format!(
            "conditional exponent has leading degree {deg} with coefficient {}",
            a.get(deg).copied().unwrap_or(0.0)
        )));
    }
    if !a.iter().all(|c| c.is_finite()) {
        return Err(Error::NotIntegrable("non-finite conditional coefficient".into()));
    }
    let mut moments = vec![0.0; need + 1];
    moments[0] = 1.0;

    if closed_form && deg == 2 {
        let (a1, a2) = (a[1], a[2]);
        let mean = -a1 / (2.0 * a2);
        let var = -1.0 / (2.0 * a2);
        for m in 1..=need {
            let prev2 = if m >= 2 { moments[m - 2] } else { 0.0 };
            moments[m] = mean * moments[m - 1] + (m - 1) as f64 * var * prev2;
        }
        diag.closed_forms += 1;
        return Ok(ConditionalMoments {
            log_z: 0.5 * (std::f64::consts::PI / -a2).ln() - a1 * a1 / (4.0 * a2),
            moments,
        });
    }

    let mode = polynomial_mode(a, deg);
    let (peak, _, curvature) = horner_derivatives(a, mode);
    let tail_width = (-a[deg]).powf(-1.0 / deg as f64);
    let width = if curvature < 0.0 {
        (1.0 / (-curvature).sqrt()).min(tail_width)
    } else {
        tail_width
    };

    let mut overflow = f64::NEG_INFINITY;
    let mut u_moments = vec![0.0; need + 1];
    scratch.clear();
    scratch.resize(need + 1, 0.0);
    let stats = integrator.integrate(
        |u, out| {
            let e = horner(a, mode + width * u) - peak;
            if e > 600.0 {
                overflow = overflow.max(e);
            }
            let mut w = e.min(600.0).exp();
            for o in out.iter_mut() {
                *o = w;
                w *= u;
            }
        },
        need + 1,
        Domain::Real,
        &mut u_moments,
    )?;
    diag.quadratures += 1;
    diag.subdivisions += stats.subdivisions;
    diag.integrand_evaluations += stats.evaluations;
    if overflow.is_finite() {
        return Err(Error::ObjectiveOverflow {
            sample: usize::MAX,
            exponent: overflow,
        });
    }
    let z_u = u_moments[0];
    if !(z_u > 0.0) || !z_u.is_finite() {
        return Err(Error::QuadratureAccuracy {
            subdivisions: stats.subdivisions,
            error: stats.error,
        });
    }
    for j in 0..=need {
        scratch[j] = u_moments[j] / z_u;
    }
    // E[x^m] with x = mode + width·u.
    let mut wpow = vec![1.0; need + 1];
    for j in 1..=need {
        wpow[j] = wpow[j - 1] * width;
    }
    for m in 1..=need {
        moments[m] = (0..=m)
            .map(|j| binomial(m, j) * mode.powi((m - j) as i32) * wpow[j] * scratch[j])
            .sum();
    }
    Ok(ConditionalMoments {
        log_z: peak + width.ln() + z_u.ln(),
        moments,
    })
}

/// `Z_i(x_{\i}) = ∫ exp(E_i(x_i ‖ x_{\i})) dx_i`; the entry `x[i]` is ignored.
pub fn local_partition(view: &LocalView, theta: &[f64], x: &[f64], qcfg: &QuadratureConfig) -> Result<f64> {
    let node = view.node();
    if x.len() != view.p() || theta.len() != view.len() {
        return Err(Error::Dimension {
            expected: view.len(),
            got: theta.len(),
        });
    }
    let need = view.max_node_power() as usize;
    let mut a = vec![0.0; need + 1];
    for (k, t) in view.basis().iter().zip(theta) {
        a[k.multiplicity(node) as usize] -= t * k.eval_without(node, x);
    }
    let mut integrator = Integrator::new(*qcfg);
    let c = conditional_moments(&a, 0, false, &mut integrator, &mut Vec::new(), &mut Diagnostics::default())?;
    Ok(c.log_z.exp())
}

/// `⟨ -E_i(x) + log Z_i(x_{\i}) ⟩` with one normalizer per sample.
#[derive(Clone, Debug)]
pub struct PlObjective {
    k: usize,
    n: usize,
    /// Power of the node variable in each basis term.
    powers: Vec<usize>,
    max_power: usize,
    /// `⟨f_k⟩` over the samples.
    mean_features: Vec<f64>,
    /// `groups × k` values of `f_k / x_i^{m_k}`.
    reduced: Vec<f64>,
    /// Number of samples in each group and the first sample of each group.
    counts: Vec<f64>,
    first_sample: Vec<usize>,
    cfg: PlConfig,
}

impl PlObjective {
    pub fn new(view: &LocalView, samples: &SampleSet, cfg: PlConfig) -> Result<Self> {
        if samples.p() != view.p() {
            return Err(Error::Dimension {
                expected: view.p(),
                got: samples.p(),
            });
        }
        cfg.quadrature.validate()?;
        let node = view.node();
        let k = view.len();
        let powers: Vec<usize> = view.basis().iter().map(|t| t.multiplicity(node) as usize).collect();
        let max_power = powers.iter().copied().max().unwrap_or(0);
        let mut mean_features = vec![0.0; k];
        let mut reduced = Vec::with_capacity(samples.n() * k);
        let mut counts = Vec::new();
        let mut first_sample = Vec::new();
        let mut seen: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
        let mut row = vec![0.0; k];
        for (s, x) in samples.rows().enumerate() {
            for ((r, t), f) in row.iter_mut().zip(view.basis()).zip(mean_features.iter_mut()) {
                *r = t.eval_without(node, x);
                *f += *r * x[node].powi(t.multiplicity(node) as i32);
            }
            if cfg.reuse_shared_conditionals {
                let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
                if let Some(&g) = seen.get(&key) {
                    counts[g] += 1.0;
                    continue;
                }
                seen.insert(key, counts.len());
            }
            reduced.extend_from_slice(&row);
            counts.push(1.0);
            first_sample.push(s);
        }
        let n = samples.n();
        mean_features.iter_mut().for_each(|f| *f /= n as f64);
        Ok(Self {
            k,
            n,
            powers,
            max_power,
            mean_features,
            reduced,
            counts,
            first_sample,
            cfg,
        })
    }

    pub fn groups(&self) -> usize {
        self.counts.len()
    }

    fn chunk_sum(
        &self,
        theta: &[f64],
        start: usize,
        end: usize,
        grad: &mut [f64],
        integrator: &mut Integrator,
        diag: &mut Diagnostics,
    ) -> Result<f64> {
        let mut a = vec![0.0; self.max_power + 1];
        let mut scratch = Vec::new();
        let mut value = 0.0;
        for g in start..end {
            let r = &self.reduced[g * self.k..(g + 1) * self.k];
            a.iter_mut().for_each(|c| *c = 0.0);
            for ((&m, t), rv) in self.powers.iter().zip(theta).zip(r) {
                a[m] -= t * rv;
            }
            let cm = conditional_moments(
                &a,
                self.max_power,
                self.cfg.closed_form_gaussian,
                integrator,
                &mut scratch,
                diag,
            )
            .map_err(|e| match e {
                Error::ObjectiveOverflow { exponent, .. } => Error::ObjectiveOverflow {
                    sample: self.first_sample[g],
                    exponent,
                },
                Error::NotIntegrable(msg) => {
                    Error::NotIntegrable(format!("sample {}: {msg}", self.first_sample[g]))
                }
                other => other,
            })?;
            let w = self.counts[g];
            value += w * cm.log_z;
            for ((o, &m), rv) in grad.iter_mut().zip(&self.powers).zip(r) {
                *o -= w * rv * cm.moments[m];
            }
        }
        Ok(value)
    }
}

impl LocalObjective for PlObjective {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval_into(&self, theta: &[f64], grad: &mut [f64], diag: &mut Diagnostics) -> Result<f64> {
        let groups = self.groups();
        let chunk = (CHUNK / 8).max(1);
        let chunks = groups.div_ceil(chunk);
        let qcfg = self.cfg.quadrature;
        let partials: Vec<Result<(f64, Vec<f64>, Diagnostics)>> = (0..chunks)
            .into_par_iter()
            .map_init(
                || Integrator::new(qcfg),
                |integrator, c| {
                    let mut g = vec![0.0; self.k];
                    let mut d = Diagnostics::default();
                    let v = self.chunk_sum(theta, c * chunk, ((c + 1) * chunk).min(groups), &mut g, integrator, &mut d)?;
                    Ok((v, g, d))
                },
            )
            .collect();
        let mut log_z = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for part in partials {
            let (v, g, d) = part?;
            log_z += v;
            diag.merge(&d);
            for (o, x) in grad.iter_mut().zip(&g) {
                *o += x;
            }
        }
        let inv = 1.0 / self.n as f64;
        for (o, f) in grad.iter_mut().zip(&self.mean_features) {
            *o = f + *o * inv;
        }
        let linear: f64 = theta.iter().zip(&self.mean_features).map(|(t, f)| t * f).sum();
        Ok(linear + log_z * inv)
    }
}

pub fn pl_objective(view: &LocalView, theta: &[f64], samples: &SampleSet, cfg: PlConfig) -> Result<ObjectiveEvaluation> {
    PlObjective::new(view, samples, cfg)?.evaluate(theta)
}

/// PL value and gradient at a single point.
pub fn pl_pointwise(view: &LocalView, theta: &[f64], x: &[f64], cfg: &PlConfig, grad: &mut [f64]) -> Result<f64> {
    let samples = SampleSet::from_rows(x.len(), x.to_vec(), 0)?;
    let obj = PlObjective::new(view, &samples, *cfg)?;
    obj.eval_into(theta, grad, &mut Diagnostics::default())
}

/// `λ √(log p / n)`, the per-unit weight of the ℓ1 term.
pub fn l1_weight(lambda: f64, p: usize, n: usize) -> f64 {
    if lambda == 0.0 || p <= 1 {
        return 0.0;
    }
    lambda * ((p as f64).ln() / n as f64).sqrt()
}

/// `base + λ √(log p / n) Σ_k |θ_k|`, skipping entries where `penalized` is false.
pub fn regularized_objective(base: f64, lambda: f64, p: usize, n: usize, theta: &[f64], penalized: Option<&[bool]>) -> f64 {
    let w = l1_weight(lambda, p, n);
    if w == 0.0 {
        return base;
    }
    let l1: f64 = match penalized {
        Some(mask) => theta.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t.abs()).sum(),
        None => theta.iter().map(|t| t.abs()).sum(),
    };
    base + w * l1
}

/// Expectation of a vector-valued function under `μ ∝ exp(E)` for one- and
/// two-variable models, by (iterated) adaptive quadrature.
pub fn population_expectation<F>(model: &EnergyModel, dim: usize, qcfg: &QuadratureConfig, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let mut out = vec![0.0; dim + 1];
    let mut failure: Option<Error> = None;
    match model.p() {
        1 => {
            let mut buf = vec![0.0; dim];
            let mut integrator = Integrator::new(*qcfg);
            integrator.integrate(
                |x, o| {
                    let w = model.eval_energy(&[x]).map(f64::exp).unwrap_or(0.0);
                    o[0] = w;
                    if w == 0.0 {
                        o[1..].iter_mut().for_each(|v| *v = 0.0);
                        return;
                    }
                    if let Err(e) = f(&[x], &mut buf) {
                        failure.get_or_insert(e);
                    }
                    for (v, b) in o[1..].iter_mut().zip(&buf) {
                        *v = w * b;
                    }
                },
                dim + 1,
                Domain::Real,
                &mut out,
            )?;
        }
        2 => {
            let mut buf = vec![0.0; dim];
            let mut inner = Integrator::new(*qcfg);
            let mut inner_out = vec![0.0; dim + 1];
            let mut outer = Integrator::new(*qcfg);
            outer.integrate(
                |x0, o| {
                    let res = inner.integrate(
                        |x1, io| {
                            let x = [x0, x1];
                            let w = model.eval_energy(&x).map(f64::exp).unwrap_or(0.0);
                            io[0] = w;
                            if w == 0.0 {
                                io[1..].iter_mut().for_each(|v| *v = 0.0);
                                return;
                            }
                            if let Err(e) = f(&x, &mut buf) {
                                failure.get_or_insert(e);
                            }
                            for (v, b) in io[1..].iter_mut().zip(&buf) {
                                *v = w * b;
                            }
                        },
                        dim + 1,
                        Domain::Real,
                        &mut inner_out,
                    );
                    if let Err(e) = res {
                        failure.get_or_insert(e);
                    }
                    o.copy_from_slice(&inner_out);
                },
                dim + 1,
                Domain::Real,
                &mut out,
            )?;
        }
        p => {
            return Err(Error::InvalidParameter(format!(
                "population expectations need one or two variables, got {p}"
            )))
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let z = out[0];
    Ok(out[1..].iter().map(|v| v / z).collect())
}

/// Gradient of the population ISODUS objective `E_μ[g_k exp(-E_i^g) R_i]`.
pub fn isodus_population_gradient(
    model: &EnergyModel,
    cle: &CenteredLocalEnergy,
    theta: &[f64],
    qcfg: &QuadratureConfig,
) -> Result<Vec<f64>> {
    population_expectation(model, cle.len(), qcfg, |x, out| {
        isodus_pointwise(cle, theta, x, out);
        Ok(())
    })
}

/// Gradient of the population PL objective `E_μ[f_k - E_cond f_k]`.
pub fn pl_population_gradient(
    model: &EnergyModel,
    view: &LocalView,
    theta: &[f64],
    cfg: &PlConfig,
    qcfg: &QuadratureConfig,
) -> Result<Vec<f64>> {
    population_expectation(model, view.len(), qcfg, |x, out| {
        pl_pointwise(view, theta, x, cfg, out).map(|_| ())
    })
}
