use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::rng_from_seed;
use crate::error::{Error, Result};
use crate::model::{gaussian_model, EnergyModel, MultiIndex};

const MAX_PAIRING_ATTEMPTS: usize = 10_000;

/// Symmetric positive-definite matrix `Q diag(λ) Qᵀ` with a random orthogonal
/// `Q` and eigenvalues uniform on `[0.5, 2]`.
pub fn random_psd_precision(p: usize, seed: u64) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::InvalidParameter("p must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    // Fix column signs so Q is Haar distributed.
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let eig: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..=2.0)).collect();
    let mut m = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let v: f64 = (0..p).map(|k| q[(a, k)] * eig[k] * q[(b, k)]).sum();
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    Ok(m)
}

/// Edges of a uniformly drawn `d`-regular simple graph, configuration model
/// with rejection.
pub fn random_regular_graph(p: usize, d: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if d >= p || (p * d) % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "no {d}-regular simple graph on {p} nodes"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut stubs: Vec<usize> = (0..p).flat_map(|i| std::iter::repeat_n(i, d)).collect();
    'attempt: for _ in 0..MAX_PAIRING_ATTEMPTS {
        stubs.shuffle(&mut rng);
        let mut edges = BTreeSet::new();
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b || !edges.insert((a, b)) {
                continue 'attempt;
            }
        }
        return Ok(edges.into_iter().collect());
    }
    Err(Error::InvalidParameter(format!(
        "failed to draw a simple {d}-regular graph on {p} nodes"
    )))
}

/// Zero-mean Gaussian model with unit diagonal precision and coupling `kappa`
/// on the edges of a random `d`-regular graph.
pub fn random_regular_ggm(p: usize, d: usize, kappa: f64, seed: u64) -> Result<EnergyModel> {
    let edges = random_regular_graph(p, d, seed)?;
    let mut prec = DMatrix::identity(p, p);
    for (a, b) in edges {
        prec[(a, b)] = kappa;
        prec[(b, a)] = kappa;
    }
    gaussian_model(&prec, &vec![0.0; p])
}

/// `E(x) = -Σ_{l=2}^{L} α_l x^l` with `α_l ~ U[0, 1]` and `α_L ≥ 0.1`.
pub fn random_polynomial_1d(degree: u32, seed: u64) -> Result<EnergyModel> {
    if degree < 2 || degree % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "degree must be even and at least 2, got {degree}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut terms = Vec::new();
    for l in 2..=degree {
        let mut a: f64 = rng.random();
        if l == degree {
            while a < 0.1 {
                a = rng.random();
            }
        }
        terms.push((MultiIndex::power(0, l), a));
    }
    EnergyModel::from_terms(1, terms)
}
