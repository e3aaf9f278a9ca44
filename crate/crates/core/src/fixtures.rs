//! Ground-truth models used by the experiments and tests.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::model::{gaussian_model, EnergyModel, MultiIndex};

fn term(factors: &[(usize, u32)]) -> MultiIndex {
    MultiIndex::new(factors.to_vec()).expect("fixture indices are valid")
}

/// `E(x) = -x² - 0.5x³ - 2x⁴`.
pub fn quartic_1d() -> EnergyModel {
    EnergyModel::from_terms(
        1,
        [
            (term(&[(0, 2)]), 1.0),
            (term(&[(0, 3)]), 0.5),
            (term(&[(0, 4)]), 2.0),
        ],
    )
    .expect("valid fixture")
}

/// Fourth-order coefficients of the two-variable block, before relabeling.
const QUARTIC_2D_TERMS: [(&[(usize, u32)], f64); 12] = [
    (&[(0, 2)], 1.0),
    (&[(1, 2)], 1.0),
    (&[(0, 1), (1, 1)], 0.5),
    (&[(0, 3)], 0.3),
    (&[(0, 2), (1, 1)], -0.4),
    (&[(0, 1), (1, 2)], 0.3),
    (&[(1, 3)], -0.2),
    (&[(0, 4)], 1.0),
    (&[(1, 4)], 0.8),
    (&[(0, 2), (1, 2)], 0.6),
    (&[(0, 3), (1, 1)], 0.3),
    (&[(0, 1), (1, 3)], -0.2),
];

/// Two-variable model with all monomials up to order four, including the
/// four-body terms `x0²x1²`, `x0³x1`, `x0x1³`. The quartic part is positive
/// definite, so `exp(E)` is integrable.
pub fn quartic_2d() -> EnergyModel {
    EnergyModel::from_terms(2, QUARTIC_2D_TERMS.iter().map(|(f, t)| (term(f), *t)))
        .expect("valid fixture")
}

/// Product of two independent copies of [`quartic_2d`] over `(x0, x1)` and
/// `(x2, x3)`.
pub fn pseudo_4d() -> EnergyModel {
    let block = quartic_2d();
    let mut out = EnergyModel::new(4, 4).expect("valid");
    for offset in [0, 2] {
        for (k, &t) in block.terms() {
            out.set(k.permuted(&[offset, offset + 1]), t).expect("in range");
        }
    }
    out
}

/// Column assignment matching [`pseudo_4d`]: block 0 → (0, 1), block 1 → (2, 3).
pub fn pseudo_4d_assignment() -> Vec<Vec<usize>> {
    vec![vec![0, 1], vec![2, 3]]
}

/// Four-node diamond covariance: unit variances, correlation `rho` on the
/// pairs (0,1), (0,2), (1,3), (2,3), zero between 1 and 2, and `2ρ²` between
/// 0 and 3. The precision vanishes exactly at (0,3).
pub fn diamond_covariance(rho: f64) -> DMatrix<f64> {
    let r2 = 2.0 * rho * rho;
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, rho, rho, r2, //
            rho, 1.0, 0.0, rho, //
            rho, 0.0, 1.0, rho, //
            r2, rho, rho, 1.0,
        ],
    )
}

/// Zero-mean Gaussian model whose precision is the inverse of `covariance`.
/// Entries below `1e-12` in magnitude are set to exact zeros.
pub fn gaussian_from_covariance(covariance: &DMatrix<f64>) -> Result<EnergyModel> {
    let p = covariance.nrows();
    let chol = covariance
        .clone()
        .cholesky()
        .ok_or(crate::error::Error::NotPositiveDefinite)?;
    let mut prec = chol.inverse();
    for a in 0..p {
        for b in 0..p {
            if prec[(a, b)].abs() < 1e-12 {
                prec[(a, b)] = 0.0;
            }
        }
    }
    let prec = (&prec + prec.transpose()) * 0.5;
    gaussian_model(&prec, &vec![0.0; p])
}

pub fn diamond(rho: f64) -> Result<EnergyModel> {
    gaussian_from_covariance(&diamond_covariance(rho))
}
