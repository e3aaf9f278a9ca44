use rand::Rng;
use rayon::prelude::*;

use super::{rng_from_seed, SampleSet};
use crate::error::{Error, Result};
use crate::model::EnergyModel;

const INITIAL_HALF_WIDTH: f64 = 3.0;
const MAX_DOUBLINGS: usize = 16;
const COARSE_BINS_2D: usize = 401;

/// Discretized density on a 1D or 2D box, sampled by inverse CDF.
///
/// In 2D the first coordinate indexes rows: a row is drawn from the marginal
/// and the column from that row's conditional CDF.
#[derive(Clone, Debug)]
pub struct GridDistribution {
    bounds: Vec<(f64, f64)>,
    bins: Vec<usize>,
    /// 1D: bin probabilities. 2D: row (marginal) probabilities.
    pmf: Vec<f64>,
    /// Cumulative of `pmf`, last entry exactly one.
    cdf: Vec<f64>,
    /// 2D only: per-row conditional CDFs, `bins[1]` entries per row.
    row_cdf: Vec<f64>,
}

impl GridDistribution {
    /// 1D grid from nonnegative bin weights.
    pub fn from_weights_1d(lo: f64, hi: f64, weights: Vec<f64>) -> Result<Self> {
        if !(hi > lo) || weights.is_empty() {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        let (pmf, cdf) = normalize(weights)?;
        Ok(Self {
            bounds: vec![(lo, hi)],
            bins: vec![pmf.len()],
            pmf,
            cdf,
            row_cdf: Vec::new(),
        })
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn width(&self, dim: usize) -> f64 {
        (self.bounds[dim].1 - self.bounds[dim].0) / self.bins[dim] as f64
    }

    pub fn center(&self, dim: usize, idx: usize) -> f64 {
        self.bounds[dim].0 + (idx as f64 + 0.5) * self.width(dim)
    }

    /// Bin probabilities in 1D; row marginal in 2D.
    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Marginal probabilities of dimension `dim`.
    pub fn marginal(&self, dim: usize) -> Vec<f64> {
        match (self.dims(), dim) {
            (1, 0) | (2, 0) => self.pmf.clone(),
            (2, 1) => {
                let cols = self.bins[1];
                let mut out = vec![0.0; cols];
                for (r, &w) in self.pmf.iter().enumerate() {
                    let row = &self.row_cdf[r * cols..(r + 1) * cols];
                    let mut prev = 0.0;
                    for (o, &c) in out.iter_mut().zip(row) {
                        *o += w * (c - prev);
                        prev = c;
                    }
                }
                out
            }
            _ => panic!("dimension {dim} out of range"),
        }
    }

    /// Conditional CDF of the column coordinate in row `r` (2D only).
    pub fn row_cdf(&self, r: usize) -> &[f64] {
        let cols = self.bins[1];
        &self.row_cdf[r * cols..(r + 1) * cols]
    }

    /// `Σ pmf · center^k` along one dimension.
    pub fn moment(&self, dim: usize, k: i32) -> f64 {
        self.marginal(dim)
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.center(dim, i).powi(k))
            .sum()
    }

    /// Draws one point into `out` (length `dims`), bin centre plus uniform jitter.
    pub fn draw<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let r = pick(&self.cdf, rng.random::<f64>());
        out[0] = self.bounds[0].0 + (r as f64 + rng.random::<f64>()) * self.width(0);
        if self.dims() == 2 {
            let c = pick(self.row_cdf(r), rng.random::<f64>());
            out[1] = self.bounds[1].0 + (c as f64 + rng.random::<f64>()) * self.width(1);
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        sample_grid(self, n, seed)
    }
}

pub fn sample_grid(grid: &GridDistribution, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let d = grid.dims();
    let mut rng = rng_from_seed(seed);
    let mut data = vec![0.0; n * d];
    for row in data.chunks_exact_mut(d) {
        grid.draw(&mut rng, row);
    }
    SampleSet::from_rows(d, data, seed)
}

#[inline]
fn pick(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn normalize(weights: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter("grid weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("grid weights sum to zero".into()));
    }
    let pmf: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
    let cdf = cumulative(&pmf);
    Ok((pmf, cdf))
}

fn cumulative(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = pmf
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    // Pin the tail so inverse-CDF lookups never fall off the end.
    let last = *cdf.last().unwrap();
    for c in cdf.iter_mut() {
        *c = (*c / last).min(1.0);
    }
    *cdf.last_mut().unwrap() = 1.0;
    cdf
}

/// Energy as a polynomial in the last coordinate with coefficients depending
/// on the first: `E = Σ_m a_m(x0) x1^m`.
struct SlicePolynomial {
    // (power of x0, power of x1, -θ)
    terms: Vec<(i32, usize, f64)>,
    degree: usize,
}

impl SlicePolynomial {
    /// `row` indexes the conditioning variable, `col` the polynomial variable.
    fn new(model: &EnergyModel, row: Option<usize>, col: usize) -> Self {
        let terms: Vec<_> = model
            .terms()
            .iter()
            .map(|(k, &t)| {
                let m0 = row.map_or(0, |r| k.multiplicity(r) as i32);
                let m1 = k.multiplicity(col) as usize;
                (m0, m1, -t)
            })
            .collect();
        let degree = terms.iter().map(|t| t.1).max().unwrap_or(0);
        Self { terms, degree }
    }

    fn coefficients(&self, x0: f64, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.degree + 1, 0.0);
        for &(m0, m1, c) in &self.terms {
            out[m1] += c * x0.powi(m0);
        }
    }
}

#[inline]
fn horner(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Discretizes `exp(E)` for a model with one or two variables.
///
/// Bounds start at `[-3, 3]` per dimension and each side is doubled until the
/// unnormalized density on the boundary drops below `1e-12` of the peak.
pub fn build_grid(model: &EnergyModel, bins: usize) -> Result<GridDistribution> {
    if bins < 2 {
        return Err(Error::InvalidParameter("need at least two bins per dimension".into()));
    }
    match model.p() {
        1 => build_1d(model, bins),
        2 => build_2d(model, bins),
        p => Err(Error::InvalidParameter(format!(
            "grid sampling supports one or two variables, got {p}"
        ))),
    }
}

fn log_tolerance() -> f64 {
    1e-12f64.ln()
}

fn build_1d(model: &EnergyModel, bins: usize) -> Result<GridDistribution> {
    let poly = SlicePolynomial::new(model, None, 0);
    let mut coef = Vec::new();
    poly.coefficients(0.0, &mut coef);
    let energy = |x: f64| horner(&coef, x);

    let (mut lo, mut hi) = (-INITIAL_HALF_WIDTH, INITIAL_HALF_WIDTH);
    let mut previous_edge = f64::NEG_INFINITY;
    for _ in 0..=MAX_DOUBLINGS {
        let width = (hi - lo) / bins as f64;
        let peak = (0..bins)
            .map(|i| energy(lo + (i as f64 + 0.5) * width))
            .chain([energy(lo), energy(hi)])
            .fold(f64::NEG_INFINITY, f64::max);
        let (e_lo, e_hi) = (energy(lo), energy(hi));
        let lo_ok = e_lo - peak < log_tolerance();
        let hi_ok = e_hi - peak < log_tolerance();
        if lo_ok && hi_ok {
            let weights = (0..bins)
                .map(|i| (energy(lo + (i as f64 + 0.5) * width) - peak).exp())
                .collect();
            return GridDistribution::from_weights_1d(lo, hi, weights);
        }
        let edge = e_lo.max(e_hi);
        if edge > previous_edge && previous_edge.is_finite() && edge >= peak {
            return Err(Error::NotIntegrable(
                "density grows as the grid bounds expand".into(),
            ));
        }
        previous_edge = edge;
        if !lo_ok {
            lo *= 2.0;
        }
        if !hi_ok {
            hi *= 2.0;
        }
    }
    Err(Error::NotIntegrable(format!(
        "density still above 1e-12 of its peak at [{lo}, {hi}]"
    )))
}

fn build_2d(model: &EnergyModel, bins: usize) -> Result<GridDistribution> {
    let poly = SlicePolynomial::new(model, Some(0), 1);
    let mut bounds = [(-INITIAL_HALF_WIDTH, INITIAL_HALF_WIDTH); 2];

    // Settle the box on a coarse grid first.
    let mut settled = false;
    let mut previous_edge = f64::NEG_INFINITY;
    for _ in 0..=MAX_DOUBLINGS {
        let (peak, edges) = coarse_scan(&poly, &bounds);
        let ok: Vec<bool> = edges.iter().map(|e| e - peak < log_tolerance()).collect();
        if ok.iter().all(|&b| b) {
            settled = true;
            break;
        }
        let edge = edges.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if edge > previous_edge && previous_edge.is_finite() && edge >= peak {
            return Err(Error::NotIntegrable(
                "density grows as the grid bounds expand".into(),
            ));
        }
        previous_edge = edge;
        // edges: [x0 = lo, x0 = hi, x1 = lo, x1 = hi]
        if !ok[0] {
            bounds[0].0 *= 2.0;
        }
        if !ok[1] {
            bounds[0].1 *= 2.0;
        }
        if !ok[2] {
            bounds[1].0 *= 2.0;
        }
        if !ok[3] {
            bounds[1].1 *= 2.0;
        }
    }
    if !settled {
        return Err(Error::NotIntegrable(format!(
            "density still above 1e-12 of its peak on {bounds:?}"
        )));
    }

    let (rows, cols) = (bins, bins);
    let w0 = (bounds[0].1 - bounds[0].0) / rows as f64;
    let w1 = (bounds[1].1 - bounds[1].0) / cols as f64;
    let mut row_cdf = vec![0.0; rows * cols];
    // Each row: log of its largest value and the unnormalized row mass
    // relative to that value.
    let row_stats: Vec<(f64, f64)> = row_cdf
        .par_chunks_mut(cols)
        .enumerate()
        .map(|(r, out)| {
            let x0 = bounds[0].0 + (r as f64 + 0.5) * w0;
            let mut coef = Vec::new();
            poly.coefficients(x0, &mut coef);
            let mut row_max = f64::NEG_INFINITY;
            for (c, o) in out.iter_mut().enumerate() {
                let e = horner(&coef, bounds[1].0 + (c as f64 + 0.5) * w1);
                *o = e;
                row_max = row_max.max(e);
            }
            let mut acc = 0.0;
            for o in out.iter_mut() {
                acc += (*o - row_max).exp();
                *o = acc;
            }
            for o in out.iter_mut() {
                *o = (*o / acc).min(1.0);
            }
            out[cols - 1] = 1.0;
            (row_max, acc)
        })
        .collect();

    let global_max = row_stats.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row_stats
        .iter()
        .map(|&(m, mass)| mass * (m - global_max).exp())
        .collect();
    let (pmf, cdf) = normalize(weights)?;
    Ok(GridDistribution {
        bounds: bounds.to_vec(),
        bins: vec![rows, cols],
        pmf,
        cdf,
        row_cdf,
    })
}

/// Peak log-density on a coarse grid and the largest log-density along each
/// of the four box edges.
fn coarse_scan(poly: &SlicePolynomial, bounds: &[(f64, f64); 2]) -> (f64, [f64; 4]) {
    let n = COARSE_BINS_2D;
    let at = |b: (f64, f64), i: usize| b.0 + (b.1 - b.0) * i as f64 / (n - 1) as f64;
    let mut coef = Vec::new();
    let mut peak = f64::NEG_INFINITY;
    let mut edges = [f64::NEG_INFINITY; 4];
    for i in 0..n {
        let x0 = at(bounds[0], i);
        poly.coefficients(x0, &mut coef);
        for j in 0..n {
            let e = horner(&coef, at(bounds[1], j));
            peak = peak.max(e);
            if i == 0 {
                edges[0] = edges[0].max(e);
            }
            if i == n - 1 {
                edges[1] = edges[1].max(e);
            }
            if j == 0 {
                edges[2] = edges[2].max(e);
            }
            if j == n - 1 {
                edges[3] = edges[3].max(e);
            }
        }
    }
    (peak, edges)
}
