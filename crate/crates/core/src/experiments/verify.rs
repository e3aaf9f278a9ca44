//! Invariant suite run by `isodus verify`: each check reports its measured
//! residual next to the tolerance it was held to.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fixtures;
use crate::model::{gaussian_model, BasisSpec, EnergyModel, LocalView};
use crate::mrd::{moment_finiteness_matrix, CenteredLocalEnergy, MrdParams};
use crate::objectives::{
    isodus_population_gradient, pl_population_gradient, Diagnostics, IsodusObjective, LocalObjective, Method,
    PlConfig, PlObjective,
};
use crate::quadrature::{integrate, Domain, QuadratureConfig};
use crate::sampling::{derive_seed, rng_from_seed, sample_gaussian};
use crate::solver::{fit_all, FitConfig};
use crate::special::gamma;

use super::Sampler;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Added to `c^(2)` inside the centered energies (fault injection).
    pub centering_offset: f64,
    /// Negates the analytic ISODUS gradient before the finite-difference check
    /// (fault injection).
    pub flip_isodus_gradient: bool,
    pub gradient_cases: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            centering_offset: 0.0,
            flip_isodus_gradient: false,
            gradient_cases: 20,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub group: String,
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub checks: Vec<VerifyCheck>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn group_passed(&self, group: &str) -> bool {
        let mut it = self.checks.iter().filter(|c| c.group == group).peekable();
        it.peek().is_some() && it.all(|c| c.passed)
    }

    pub fn worst(&self, group: &str) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.group == group)
            .map(|c| c.residual)
            .fold(0.0, f64::max)
    }
}

fn check(group: &str, name: String, residual: f64, tolerance: f64) -> VerifyCheck {
    VerifyCheck {
        group: group.into(),
        name,
        passed: residual <= tolerance,
        residual,
        tolerance,
    }
}

fn tight() -> QuadratureConfig {
    QuadratureConfig {
        rel_tol: 1e-13,
        abs_tol: 1e-300,
        max_subdivisions: 4000,
    }
}

/// The nine (ν, δ) settings of the centering checks.
pub const CENTERING_SETTINGS: [(f64, f64); 9] = [
    (0.5, 0.5),
    (0.5, 2.0),
    (0.5, 3.0),
    (2.0, 0.5),
    (2.0, 2.0),
    (2.0, 3.0),
    (4.0, 0.5),
    (4.0, 2.0),
    (4.0, 3.0),
];

/// Three (ν, δ) settings of the population-gradient checks.
pub const SCREENING_SETTINGS: [(f64, f64); 3] = [(2.0, 2.0), (1.0, 1.0), (0.5, 3.0)];

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    checks.extend(centering_coefficients()?);
    checks.extend(centering_zero_mean(cfg.centering_offset)?);
    checks.extend(population_gradients()?);
    checks.extend(gradient_checks(cfg)?);
    checks.extend(quadrature_oracles()?);
    checks.extend(moment_diagnostic()?);
    checks.extend(solver_certificates()?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        config: *cfg,
        checks,
        passed,
    })
}

/// Closed-form `c^(l)` against `∫ x^l R(x) dx` for `l ∈ {2, 4, 6}`.
pub fn centering_coefficients() -> Result<Vec<VerifyCheck>> {
    let mut out = Vec::new();
    for (nu, delta) in CENTERING_SETTINGS {
        let params = MrdParams::new(nu, delta, 2)?;
        let mut worst: f64 = 0.0;
        for l in [2u32, 4, 6] {
            let analytic = params.centering_coefficient(l)?;
            let numeric = integrate(|x| x.powi(l as i32) * params.density(x), Domain::Real, &tight())?.value;
            worst = worst.max((analytic - numeric).abs() / numeric.abs());
        }
        out.push(check(
            "centering-coefficient",
            format!("nu={nu} delta={delta}"),
            worst,
            1e-10,
        ));
    }
    Ok(out)
}

/// `∫ g_ik(x) R(x_i) dx_i = 0` for every monomial shape up to order six on a
/// two-variable node, at fixed values of the other variable.
pub fn centering_zero_mean(c2_offset: f64) -> Result<Vec<VerifyCheck>> {
    let basis = BasisSpec::new(1, 6, 2).node_basis(2, 0);
    let mut out = Vec::new();
    for (nu, delta) in CENTERING_SETTINGS {
        let params = MrdParams::new(nu, delta, 6)?;
        let view = LocalView::from_basis(0, 2, basis.clone())?;
        let mut cle = CenteredLocalEnergy::new(view, params)?;
        if c2_offset != 0.0 {
            cle = cle.with_centering_override(2, params.centering_coefficient(2)? + c2_offset);
        }
        let mut g = vec![0.0; cle.len()];
        let mut worst: f64 = 0.0;
        for other in [-1.3, 0.7] {
            for j in 0..cle.len() {
                let v = integrate(
                    |x| {
                        cle.features(&[x, other], &mut g);
                        g[j] * params.density(x)
                    },
                    Domain::Real,
                    &QuadratureConfig {
                        abs_tol: 1e-14,
                        ..tight()
                    },
                )?;
                worst = worst.max(v.value.abs());
            }
        }
        out.push(check(
            "centering-zero-mean",
            format!("nu={nu} delta={delta} terms={}", basis.len()),
            worst,
            1e-9,
        ));
    }
    Ok(out)
}

fn two_node_gaussian() -> Result<EnergyModel> {
    let prec = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
    gaussian_model(&prec, &[0.0, 0.0])
}

/// Population gradients at the true parameters, by quadrature against the
/// model density, for ISODUS and PL.
pub fn population_gradients() -> Result<Vec<VerifyCheck>> {
    let qcfg = QuadratureConfig {
        rel_tol: 1e-11,
        abs_tol: 1e-300,
        max_subdivisions: 2000,
    };
    let cases = [
        ("gaussian-2", two_node_gaussian()?, BasisSpec::pairwise_quadratic()),
        ("quartic-1d", fixtures::quartic_1d(), BasisSpec::new(2, 4, 1)),
    ];
    let mut out = Vec::new();
    for (label, model, spec) in &cases {
        for node in 0..model.p() {
            let view = LocalView::from_basis(node, model.p(), spec.node_basis(model.p(), node))?
                .with_model_coefficients(model);
            let theta = view.coefficients().to_vec();
            for (nu, delta) in SCREENING_SETTINGS {
                let params = MrdParams::new(nu, delta, spec.max_order)?;
                let cle = CenteredLocalEnergy::new(view.clone(), params)?;
                let g = isodus_population_gradient(model, &cle, &theta, &qcfg)?;
                let r = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
                out.push(check(
                    "screening",
                    format!("isodus {label} node={node} nu={nu} delta={delta}"),
                    r,
                    1e-6,
                ));
            }
            let pl_cfg = PlConfig {
                quadrature: qcfg,
                ..PlConfig::default()
            };
            let g = pl_population_gradient(model, &view, &theta, &pl_cfg, &qcfg)?;
            let r = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            out.push(check("screening", format!("pl {label} node={node}"), r, 1e-6));
        }
    }
    Ok(out)
}

/// Analytic gradients of both objectives against central differences at
/// random parameters and random small data sets.
pub fn gradient_checks(cfg: &VerifyConfig) -> Result<Vec<VerifyCheck>> {
    let q1 = fixtures::quartic_1d();
    let q1_sampler = Sampler::for_model(&q1, 2000)?;
    let q2_sampler = Sampler::for_model(&fixtures::quartic_2d(), 400)?;
    let pl_cfg = PlConfig {
        quadrature: tight(),
        ..PlConfig::default()
    };
    let mut out = Vec::new();
    for case in 0..cfg.gradient_cases {
        let seed = derive_seed(cfg.seed, &[case as u64]);
        let mut rng = rng_from_seed(seed);
        let (truth, samples, spec) = match case % 3 {
            0 => (q1.clone(), q1_sampler.sample(40, seed)?, BasisSpec::new(2, 4, 1)),
            1 => (fixtures::quartic_2d(), q2_sampler.sample(40, seed)?, BasisSpec::new(2, 4, 2)),
            _ => {
                let m = fixtures::diamond(0.4)?;
                let prec = m.to_precision().expect("gaussian");
                (m, sample_gaussian(&prec, &[0.0; 4], 40, seed)?, BasisSpec::pairwise_quadratic())
            }
        };
        let node = rng.random_range(0..truth.p());
        let view = LocalView::from_basis(node, truth.p(), spec.node_basis(truth.p(), node))?
            .with_model_coefficients(&truth);
        for method in [Method::Isodus, Method::Pl] {
            let scale = if method == Method::Isodus { 0.3 } else { 0.05 };
            let theta: Vec<f64> = view
                .coefficients()
                .iter()
                .map(|t| {
                    let z: f64 = rng.sample(StandardNormal);
                    let base = if method == Method::Pl { *t } else { 0.0 };
                    base + scale * z
                })
                .collect();
            let objective: Box<dyn LocalObjective> = match method {
                Method::Isodus => {
                    let cle = CenteredLocalEnergy::new(view.clone(), MrdParams::new(2.0, 2.0, spec.max_order)?)?;
                    Box::new(IsodusObjective::new(&cle, &samples)?)
                }
                Method::Pl => Box::new(PlObjective::new(&view, &samples, pl_cfg)?),
            };
            let mut grad = vec![0.0; theta.len()];
            objective.eval_into(&theta, &mut grad, &mut Diagnostics::default())?;
            if method == Method::Isodus && cfg.flip_isodus_gradient {
                grad.iter_mut().for_each(|g| *g = -*g);
            }
            let mut scratch = vec![0.0; theta.len()];
            let mut worst: f64 = 0.0;
            let norm = grad.iter().map(|g| g.abs()).fold(0.0, f64::max).max(1e-12);
            for j in 0..theta.len() {
                let h = 1e-5 * theta[j].abs().max(1.0);
                let mut tp = theta.clone();
                tp[j] += h;
                let fp = objective.eval_into(&tp, &mut scratch, &mut Diagnostics::default())?;
                tp[j] = theta[j] - h;
                let fm = objective.eval_into(&tp, &mut scratch, &mut Diagnostics::default())?;
                let fd = (fp - fm) / (2.0 * h);
                worst = worst.max((fd - grad[j]).abs() / norm);
            }
            out.push(check(
                "gradient",
                format!("{method} case={case} node={node} terms={}", theta.len()),
                worst,
                1e-5,
            ));
        }
    }
    Ok(out)
}

/// Quadrature against integrals with known values.
pub fn quadrature_oracles() -> Result<Vec<VerifyCheck>> {
    let pi = std::f64::consts::PI;
    let cases: [(&str, Box<dyn Fn(f64) -> f64>, Domain, f64); 4] = [
        ("gaussian", Box::new(|x: f64| (-x * x).exp()), Domain::Real, pi.sqrt()),
        (
            "gaussian-fourth-moment",
            Box::new(|x: f64| x.powi(4) * (-x * x).exp()),
            Domain::Real,
            0.75 * pi.sqrt(),
        ),
        ("quartic", Box::new(|x: f64| (-x.powi(4)).exp()), Domain::Real, 2.0 * gamma(1.25)),
        ("sqrt", Box::new(|x: f64| x.sqrt()), Domain::Interval(0.0, 1.0), 2.0 / 3.0),
    ];
    let mut out = Vec::new();
    for (name, f, domain, exact) in cases {
        let v = integrate(f, domain, &tight())?.value;
        out.push(check("quadrature", name.to_string(), ((v - exact) / exact).abs(), 1e-10));
    }
    Ok(out)
}

/// Sign pattern of the moment-finiteness determinant at ν = 1, θ = θ* = 1.
pub fn moment_diagnostic() -> Result<Vec<VerifyCheck>> {
    let det = |m: u32| moment_finiteness_matrix(m, 1.0, 1.0, 1.0, 0.0).map(|d| d.determinant);
    let d1 = det(1)?;
    let d20 = det(20)?;
    let first_negative = (1..=20).find(|&m| det(m).map(|d| d < 0.0).unwrap_or(false));
    Ok(vec![
        check("moment-finiteness", "det(m=1) > 0".into(), if d1 > 0.0 { 0.0 } else { 1.0 }, 0.0),
        check("moment-finiteness", "det(m=20) = -51.25".into(), (d20 + 51.25).abs(), 1e-12),
        check(
            "moment-finiteness",
            "sign change at some m <= 20".into(),
            if first_negative.is_some() { 0.0 } else { 1.0 },
            0.0,
        ),
    ])
}

/// Re-verified optimality of unpenalized and penalized fits, and exact zeros
/// off the support of a four-node chain under a large penalty.
pub fn solver_certificates() -> Result<Vec<VerifyCheck>> {
    let prec = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.4, 0.0, 0.0, //
            0.4, 1.0, 0.4, 0.0, //
            0.0, 0.4, 1.0, 0.4, //
            0.0, 0.0, 0.4, 1.0,
        ],
    );
    let truth = gaussian_model(&prec, &[0.0; 4])?;
    let samples = sample_gaussian(&prec, &[0.0; 4], 2000, 5)?;
    let mut out = Vec::new();
    for method in [Method::Isodus, Method::Pl] {
        let cfg = FitConfig {
            method,
            ..FitConfig::default()
        };
        let fits = fit_all(&samples, &cfg)?;
        let worst = fits
            .iter()
            .map(|f| f.certified_optimality.unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        out.push(check("certificate", format!("{method} unpenalized"), worst, 1e-8));

        let penalized = FitConfig {
            method,
            lambda: 3.0,
            exempt_single_node: true,
            ..FitConfig::default()
        };
        let fits = fit_all(&samples, &penalized)?;
        let mut off_support: f64 = 0.0;
        let mut worst_cert: f64 = 0.0;
        for f in &fits {
            worst_cert = worst_cert.max(f.certified_optimality.unwrap_or(f64::INFINITY));
            for (k, t) in f.basis.iter().zip(&f.result.theta) {
                if k.arity() == 2 && truth.coefficient(k) == 0.0 {
                    off_support = off_support.max(t.abs());
                }
            }
        }
        out.push(check("certificate", format!("{method} penalized"), worst_cert, 1e-8));
        out.push(check("exact-zeros", format!("{method} chain at lambda=3"), off_support, 0.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_injection_is_detected() {
        let ok = centering_zero_mean(0.0).unwrap();
        assert!(ok.iter().all(|c| c.passed), "{ok:?}");
        let bad = centering_zero_mean(1e-3).unwrap();
        assert!(bad.iter().all(|c| !c.passed));

        let cfg = VerifyConfig {
            gradient_cases: 3,
            ..VerifyConfig::default()
        };
        let ok = gradient_checks(&cfg).unwrap();
        assert!(ok.iter().all(|c| c.passed), "{ok:?}");
        let flipped = gradient_checks(&VerifyConfig {
            flip_isodus_gradient: true,
            ..cfg
        })
        .unwrap();
        assert!(flipped.iter().filter(|c| c.name.starts_with("isodus")).all(|c| !c.passed));
        assert!(flipped.iter().filter(|c| c.name.starts_with("pl")).all(|c| c.passed));
    }

    #[test]
    fn moment_signs() {
        assert!(moment_diagnostic().unwrap().iter().all(|c| c.passed));
    }
}
