//! Multiplicative regularizing distribution (MRD) and centered local energies.
//!
//! The MRD is `R(x) = (a / (2 Γ(1/a))) ν^{1/a} exp(-ν |x|^a)` with `a = s + δ`.
//! Its even moments give the centering coefficients in closed form, so every
//! centered basis function `g_ik` is itself a short polynomial.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LocalView, MultiIndex};
use crate::special::ln_gamma;

/// User-facing MRD hyperparameters; the order `s` comes from the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrdHyper {
    pub nu: f64,
    pub delta: f64,
}

impl Default for MrdHyper {
    fn default() -> Self {
        Self { nu: 2.0, delta: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MrdParams {
    nu: f64,
    delta: f64,
    s: u32,
    exponent: f64,
    log_norm: f64,
}

impl MrdParams {
    pub fn new(nu: f64, delta: f64, s: u32) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "MRD delta must be positive, got {delta}"
            )));
        }
        Self::new_allow_zero_delta(nu, delta, s)
    }

    /// Accepts `delta = 0`, which leaves some moments of the objective
    /// infinite. Only meant for diagnostics.
    pub fn new_allow_zero_delta(nu: f64, delta: f64, s: u32) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("MRD nu must be positive, got {nu}")));
        }
        if !(delta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "MRD delta must be non-negative, got {delta}"
            )));
        }
        if s == 0 {
            return Err(Error::InvalidParameter("MRD order s must be positive".into()));
        }
        let exponent = s as f64 + delta;
        let log_norm = (0.5 * exponent).ln() - ln_gamma(1.0 / exponent) + nu.ln() / exponent;
        Ok(Self {
            nu,
            delta,
            s,
            exponent,
            log_norm,
        })
    }

    pub fn from_hyper(hyper: MrdHyper, s: u32) -> Result<Self> {
        Self::new(hyper.nu, hyper.delta, s)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    /// `s + δ`
    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    #[inline]
    pub fn log_density(&self, x: f64) -> f64 {
        self.log_norm - self.nu * x.abs().powf(self.exponent)
    }

    /// `log` of the normalizing prefactor of the density.
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// `c^(l) = ∫ x^l R(x) dx = ν^{-l/a} Γ((l+1)/a) / Γ(1/a)` for even `l ≥ 2`.
    pub fn centering_coefficient(&self, l: u32) -> Result<f64> {
        if l < 2 || l % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "centering coefficients are defined for even powers >= 2, got {l}"
            )));
        }
        let a = self.exponent;
        let ratio = (ln_gamma((l as f64 + 1.0) / a) - ln_gamma(1.0 / a)).exp();
        Ok(self.nu.powf(-(l as f64) / a) * ratio)
    }
}

pub fn mrd_density(params: &MrdParams, x: f64) -> f64 {
    params.density(x)
}

pub fn centering_coefficient(params: &MrdParams, l: u32) -> Result<f64> {
    params.centering_coefficient(l)
}

/// `g_ik = f_k - c^(l) f_k / x_i^l` when `x_i` appears with even power `l`,
/// otherwise `g_ik = f_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteredTerm {
    term: MultiIndex,
    node: usize,
    node_power: u32,
    /// `f_k / x_i^l`; `None` stands for the constant 1.
    reduced: Option<MultiIndex>,
    correction: f64,
}

impl CenteredTerm {
    pub fn term(&self) -> &MultiIndex {
        &self.term
    }

    pub fn node_power(&self) -> u32 {
        self.node_power
    }

    pub fn reduced(&self) -> Option<&MultiIndex> {
        self.reduced.as_ref()
    }

    /// Centering coefficient subtracted from the reduced monomial (zero for odd powers).
    pub fn correction(&self) -> f64 {
        self.correction
    }

    pub fn is_odd(&self) -> bool {
        self.node_power % 2 == 1
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let rest = self.term.eval_without(self.node, x);
        if self.correction == 0.0 {
            x[self.node].powi(self.node_power as i32) * rest
        } else {
            (x[self.node].powi(self.node_power as i32) - self.correction) * rest
        }
    }
}

pub fn center_term(params: &MrdParams, node: usize, k: &MultiIndex) -> Result<CenteredTerm> {
    let power = k.multiplicity(node);
    if power == 0 {
        return Err(Error::InvalidMultiIndex(format!("{k} does not contain x{node}")));
    }
    let correction = if power % 2 == 0 {
        params.centering_coefficient(power)?
    } else {
        0.0
    };
    Ok(CenteredTerm {
        term: k.clone(),
        node,
        node_power: power,
        reduced: k.without(node),
        correction,
    })
}

/// Centered partial energy `E_i^g(x) = -Σ_{k ∈ K_i} θ_k g_ik(x_k)` over a
/// node's basis.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteredLocalEnergy {
    view: LocalView,
    params: MrdParams,
    terms: Vec<CenteredTerm>,
}

impl CenteredLocalEnergy {
    pub fn new(view: LocalView, params: MrdParams) -> Result<Self> {
        let terms = view
            .basis()
            .iter()
            .map(|k| center_term(&params, view.node(), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { view, params, terms })
    }

    /// Replaces the centering coefficient used for even power `l`.
    pub fn with_centering_override(mut self, l: u32, value: f64) -> Self {
        for t in &mut self.terms {
            if t.node_power == l && l % 2 == 0 {
                t.correction = value;
            }
        }
        self
    }

    pub fn view(&self) -> &LocalView {
        &self.view
    }

    pub fn params(&self) -> &MrdParams {
        &self.params
    }

    pub fn node(&self) -> usize {
        self.view.node()
    }

    pub fn terms(&self) -> &[CenteredTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Writes `g_ik(x)` for each basis term into `out`.
    #[inline]
    pub fn features(&self, x: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.eval(x);
        }
    }

    pub fn eval(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        if theta.len() != self.terms.len() {
            return Err(Error::Dimension {
                expected: self.terms.len(),
                got: theta.len(),
            });
        }
        if x.len() != self.view.p() {
            return Err(Error::Dimension {
                expected: self.view.p(),
                got: x.len(),
            });
        }
        Ok(-self.terms.iter().zip(theta).map(|(t, th)| th * t.eval(x)).sum::<f64>())
    }
}

pub fn centered_energy(cle: &CenteredLocalEnergy, theta: &[f64], x: &[f64]) -> Result<f64> {
    cle.eval(theta, x)
}

/// Quadratic form deciding whether the m-th moment of the objective exists
/// for the two-variable Gaussian `exp(-x² - θ* x y - y²)` at node x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentDiagnostic {
    pub matrix: Matrix2<f64>,
    pub determinant: f64,
    /// Whether the m-th moment is finite.
    pub finite: bool,
    /// For `δ > 0`: radius `r ≥ 1` beyond which `|x|^{2+δ} ≥ r^δ x²` makes
    /// the form positive definite.
    pub radius: Option<f64>,
}

pub fn moment_finiteness_matrix(
    m: u32,
    theta_true: f64,
    theta: f64,
    nu: f64,
    delta: f64,
) -> Result<MomentDiagnostic> {
    if m < 1 {
        return Err(Error::InvalidParameter("moment order must be at least 1".into()));
    }
    if !(delta >= 0.0) || !(nu > 0.0) {
        return Err(Error::InvalidParameter("need nu > 0 and delta >= 0".into()));
    }
    let mf = m as f64;
    let diag = mf * nu + mf - 1.0;
    let off = (mf * theta - theta_true) / 2.0;
    let matrix = Matrix2::new(diag, off, off, 1.0);
    let determinant = diag - off * off;
    if delta == 0.0 {
        return Ok(MomentDiagnostic {
            matrix,
            determinant,
            finite: determinant > 0.0,
            radius: None,
        });
    }
    // mν r^δ + m - 1 > off² once r is large enough.
    let needed = (off * off - mf + 1.0) / (mf * nu);
    let radius = if needed <= 1.0 {
        1.0
    } else {
        needed.powf(1.0 / delta) * (1.0 + 1e-12)
    };
    Ok(MomentDiagnostic {
        matrix,
        determinant,
        finite: true,
        radius: Some(radius),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, Domain, QuadratureConfig};
    use crate::special::gamma;

    fn tight() -> QuadratureConfig {
        QuadratureConfig {
            rel_tol: 1e-14,
            abs_tol: 1e-300,
            max_subdivisions: 4000,
        }
    }

    /// ∫ f(x) R(x) dx, split at zero where |x|^{s+δ} is not smooth.
    fn mrd_expectation(params: &MrdParams, f: impl Fn(f64) -> f64) -> f64 {
        let lo = integrate(|x| f(x) * params.density(x), Domain::UpTo(0.0), &tight()).unwrap();
        let hi = integrate(|x| f(x) * params.density(x), Domain::From(0.0), &tight()).unwrap();
        lo.value + hi.value
    }

    #[test]
    fn density_is_normalized_and_even() {
        for &(nu, delta) in &[(2.0, 2.0), (0.5, 0.5), (4.0, 1.3)] {
            let p = MrdParams::new(nu, delta, 2).unwrap();
            assert!((mrd_expectation(&p, |_| 1.0) - 1.0).abs() < 1e-10);
            for &x in &[0.1, 0.7, 1.9] {
                assert_eq!(p.density(x), p.density(-x));
            }
        }
    }

    #[test]
    fn density_at_origin_matches_gamma_closed_form() {
        let p = MrdParams::new(2.0, 2.0, 2).unwrap();
        // Γ(1/4) to 20 significant digits
        let gamma_quarter = 3.625_609_908_221_908_311_9;
        let want = 4.0 / (2.0 * gamma_quarter) * 2f64.powf(0.25);
        assert!((p.density(0.0) - want).abs() < 1e-14 * want);
    }

    #[test]
    fn centering_coefficients_match_quadrature() {
        let p = MrdParams::new(2.0, 2.0, 2).unwrap();
        let c2 = p.centering_coefficient(2).unwrap();
        let c4 = p.centering_coefficient(4).unwrap();
        let q2 = mrd_expectation(&p, |x| x * x);
        let q4 = mrd_expectation(&p, |x| x.powi(4));
        assert!((c2 - q2).abs() < 1e-10);
        assert!((c4 - q4).abs() < 1e-10);
        // ν = 2 squeezes the MRD below unit scale, so the fourth moment is
        // the smaller one: c2 ≈ 0.2390, c4 ≈ 0.1250.
        assert!(c4 < c2 && c2 < 1.0);
        assert!((c2 - 0.238_994_398_743).abs() < 1e-11);
        assert!((c4 - 0.125).abs() < 1e-9);
    }

    #[test]
    fn odd_or_small_powers_rejected() {
        let p = MrdParams::new(2.0, 2.0, 2).unwrap();
        assert!(p.centering_coefficient(3).is_err());
        assert!(p.centering_coefficient(0).is_err());
        assert!(MrdParams::new(2.0, 0.0, 2).is_err());
        assert!(MrdParams::new(0.0, 1.0, 2).is_err());
        assert!(MrdParams::new_allow_zero_delta(1.0, 0.0, 2).is_ok());
    }

    #[test]
    fn scaling_law_in_nu() {
        for &delta in &[0.5, 2.0, 3.5] {
            let unit = MrdParams::new(1.0, delta, 4).unwrap();
            for &nu in &[0.3, 2.0, 7.5] {
                let p = MrdParams::new(nu, delta, 4).unwrap();
                for l in [2, 4, 6] {
                    let want = nu.powf(-(l as f64) / (4.0 + delta)) * unit.centering_coefficient(l).unwrap();
                    let got = p.centering_coefficient(l).unwrap();
                    assert!(((got - want) / want).abs() < 1e-14);
                }
            }
        }
        // Gamma ratio cross-check through the direct Γ evaluation.
        let p = MrdParams::new(1.0, 2.0, 2).unwrap();
        let want = gamma(0.75) / gamma(0.25);
        assert!((p.centering_coefficient(2).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn center_term_examples() {
        let p = MrdParams::new(2.0, 2.0, 4).unwrap();
        let c2 = p.centering_coefficient(2).unwrap();
        let c4 = p.centering_coefficient(4).unwrap();
        let x = [0.7, -1.3, 2.1, 0.4];

        let odd = center_term(&p, 0, &MultiIndex::pair(0, 1)).unwrap();
        assert_eq!(odd.correction(), 0.0);
        assert_eq!(odd.eval(&x), 0.7 * -1.3);

        let k = MultiIndex::from_vars(&[0, 0, 1, 2]).unwrap();
        let g = center_term(&p, 0, &k).unwrap();
        let want = 0.49 * -1.3 * 2.1 - c2 * (-1.3 * 2.1);
        assert!((g.eval(&x) - want).abs() < 1e-14);
        assert_eq!(g.reduced(), Some(&MultiIndex::pair(1, 2)));

        let quartic = center_term(&p, 0, &MultiIndex::power(0, 4)).unwrap();
        assert!((quartic.eval(&x) - (0.7f64.powi(4) - c4)).abs() < 1e-15);
        assert_eq!(quartic.reduced(), None);

        assert!(center_term(&p, 3, &MultiIndex::pair(0, 1)).is_err());
    }

    #[test]
    fn centered_energy_examples() {
        let p = MrdParams::new(2.0, 2.0, 2).unwrap();
        let view = LocalView::from_basis(0, 1, vec![MultiIndex::power(0, 2)]).unwrap();
        let cle = CenteredLocalEnergy::new(view, p).unwrap();
        assert_eq!(cle.eval(&[0.0], &[1.7]).unwrap(), 0.0);
        let root = p.centering_coefficient(2).unwrap().sqrt();
        assert!(cle.eval(&[1.0], &[root]).unwrap().abs() < 1e-15);
        assert!(cle.eval(&[1.0, 2.0], &[root]).is_err());
    }

    #[test]
    fn appendix_quadratic_form() {
        let d = moment_finiteness_matrix(20, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(d.determinant, -51.25);
        assert!(!d.finite);
        let d1 = moment_finiteness_matrix(1, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(d1.determinant, 1.0);
        assert!(d1.finite);
        let mut sign_change = None;
        let mut prev = f64::INFINITY;
        for m in 1..=50 {
            let det = moment_finiteness_matrix(m, 1.0, 1.0, 1.0, 0.0).unwrap().determinant;
            if m >= 6 {
                assert!(det < prev);
            }
            if det < 0.0 && sign_change.is_none() {
                sign_change = Some(m);
            }
            prev = det;
        }
        assert!(sign_change.unwrap() <= 20);
        assert!(moment_finiteness_matrix(0, 1.0, 1.0, 1.0, 0.0).is_err());

        let with_delta = moment_finiteness_matrix(20, 1.0, 1.0, 1.0, 0.5).unwrap();
        assert!(with_delta.finite);
        let r = with_delta.radius.unwrap();
        let diag = 20.0 * r.powf(0.5) + 19.0;
        assert!(diag - 9.5 * 9.5 > 0.0);
    }
}
