//! Adaptive Gauss–Kronrod (G7/K15) quadrature with vector-valued integrands.
//!
//! Unbounded domains are mapped onto finite intervals with `x = t / (1 - t²)`;
//! the segment with the largest error estimate is bisected until the total
//! error falls under `max(abs_tol, rel_tol * |I|)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-7,
            abs_tol: 1e-12,
            max_subdivisions: 1000,
        }
    }
}

impl QuadratureConfig {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "quadrature tolerances must be positive".into(),
            ));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::InvalidParameter(
                "max_subdivisions must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Integration domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Interval(f64, f64),
    /// The whole real line.
    Real,
    /// `[a, +inf)`
    From(f64),
    /// `(-inf, b]`
    UpTo(f64),
}

impl Domain {
    fn initial_segments(&self) -> &'static [(f64, f64)] {
        match self {
            Domain::Interval(..) => &[(-1.0, 1.0)],
            Domain::Real => &[(-1.0, -0.5), (-0.5, 0.0), (0.0, 0.5), (0.5, 1.0)],
            Domain::From(_) => &[(0.0, 0.5), (0.5, 1.0)],
            Domain::UpTo(_) => &[(-1.0, -0.5), (-0.5, 0.0)],
        }
    }

    /// Maps the internal variable to (x, dx/dt).
    #[inline]
    fn map(&self, t: f64) -> (f64, f64) {
        match *self {
            Domain::Interval(a, b) => {
                let half = 0.5 * (b - a);
                (a + half * (t + 1.0), half)
            }
            Domain::Real => infinite_map(0.0, t),
            Domain::From(a) | Domain::UpTo(a) => infinite_map(a, t),
        }
    }
}

#[inline]
fn infinite_map(offset: f64, t: f64) -> (f64, f64) {
    let one_minus = 1.0 - t * t;
    (offset + t / one_minus, (1.0 + t * t) / (one_minus * one_minus))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub error: f64,
    pub subdivisions: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    error: f64,
}

/// Reusable scratch space for repeated vector-valued integrals.
#[derive(Debug, Clone)]
pub struct Integrator {
    cfg: QuadratureConfig,
    segments: Vec<Segment>,
    // Per-segment integral estimates, `dim` entries each.
    values: Vec<f64>,
    errors: Vec<f64>,
    fx: Vec<f64>,
    kronrod: Vec<f64>,
    gauss: Vec<f64>,
    err_acc: Vec<f64>,
}

impl Integrator {
    pub fn new(cfg: QuadratureConfig) -> Self {
        Self {
            cfg,
            segments: Vec::new(),
            values: Vec::new(),
            errors: Vec::new(),
            fx: Vec::new(),
            kronrod: Vec::new(),
            gauss: Vec::new(),
            err_acc: Vec::new(),
        }
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.cfg
    }

    /// Integrates the `dim`-component integrand `f(x, out)` over `domain`,
    /// writing the result to `result`.
    ///
    /// The error criterion uses the largest component error against the
    /// largest component magnitude.
    pub fn integrate<F>(&mut self, mut f: F, dim: usize, domain: Domain, result: &mut [f64]) -> Result<Stats>
    where
        F: FnMut(f64, &mut [f64]),
    {
        assert_eq!(result.len(), dim);
        self.segments.clear();
        self.values.clear();
        self.errors.clear();
        self.fx.resize(dim, 0.0);
        self.kronrod.resize(dim, 0.0);
        self.gauss.resize(dim, 0.0);
        self.err_acc.resize(dim, 0.0);

        let mut evaluations = 0;
        for &(lo, hi) in domain.initial_segments() {
            let err = self.rule(&mut f, dim, domain, lo, hi);
            evaluations += 15;
            self.push_segment(lo, hi, err, dim);
        }

        let mut subdivisions = 0;
        loop {
            let (total_err, scale) = self.totals(dim, result);
            let tol = self.cfg.abs_tol.max(self.cfg.rel_tol * scale);
            if total_err <= tol {
                return Ok(Stats {
                    error: total_err,
                    subdivisions,
                    evaluations,
                });
            }
            if subdivisions >= self.cfg.max_subdivisions {
                return Err(Error::QuadratureAccuracy {
                    subdivisions,
                    error: total_err,
                });
            }

            let worst = self
                .segments
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
                .map(|(i, _)| i)
                .unwrap();
            let Segment { lo, hi, .. } = self.segments[worst];
            let mid = 0.5 * (lo + hi);
            if !(mid > lo && mid < hi) {
                return Err(Error::QuadratureAccuracy {
                    subdivisions,
                    error: total_err,
                });
            }

            let err_left = self.rule(&mut f, dim, domain, lo, mid);
            self.overwrite_segment(worst, lo, mid, err_left, dim);
            let err_right = self.rule(&mut f, dim, domain, mid, hi);
            self.push_segment(mid, hi, err_right, dim);
            evaluations += 30;
            subdivisions += 1;
        }
    }

    fn totals(&mut self, dim: usize, result: &mut [f64]) -> (f64, f64) {
        result.iter_mut().for_each(|r| *r = 0.0);
        let errs = &mut self.err_acc[..dim];
        errs.iter_mut().for_each(|e| *e = 0.0);
        for s in 0..self.segments.len() {
            for d in 0..dim {
                result[d] += self.values[s * dim + d];
                errs[d] += self.errors[s * dim + d];
            }
        }
        let err = errs.iter().cloned().fold(0.0, f64::max);
        let scale = result.iter().map(|v| v.abs()).fold(0.0, f64::max);
        (err, scale)
    }

    fn push_segment(&mut self, lo: f64, hi: f64, err: f64, dim: usize) {
        self.segments.push(Segment { lo, hi, error: err });
        self.values.extend_from_slice(&self.kronrod[..dim]);
        for d in 0..dim {
            self.errors.push((self.kronrod[d] - self.gauss[d]).abs());
        }
    }

    fn overwrite_segment(&mut self, idx: usize, lo: f64, hi: f64, err: f64, dim: usize) {
        self.segments[idx] = Segment { lo, hi, error: err };
        for d in 0..dim {
            self.values[idx * dim + d] = self.kronrod[d];
            self.errors[idx * dim + d] = (self.kronrod[d] - self.gauss[d]).abs();
        }
    }

    /// Applies G7/K15 on `[lo, hi]` of the internal variable; leaves the
    /// Kronrod and Gauss estimates in scratch and returns the segment error.
    fn rule<F>(&mut self, f: &mut F, dim: usize, domain: Domain, lo: f64, hi: f64) -> f64
    where
        F: FnMut(f64, &mut [f64]),
    {
        let centre = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        self.kronrod.iter_mut().for_each(|v| *v = 0.0);
        self.gauss.iter_mut().for_each(|v| *v = 0.0);

        for (j, (&node, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
            let wg = match j {
                1 => WG[0],
                3 => WG[1],
                5 => WG[2],
                7 => WG[3],
                _ => 0.0,
            };
            let offsets: &[f64] = if j == 7 { &[0.0] } else { &[-1.0, 1.0] };
            for &sgn in offsets {
                let t = centre + sgn * half * node;
                let (x, jac) = domain.map(t);
                f(x, &mut self.fx[..dim]);
                for d in 0..dim {
                    let mut v = self.fx[d] * jac;
                    if !v.is_finite() {
                        v = 0.0;
                    }
                    self.kronrod[d] += wk * v;
                    self.gauss[d] += wg * v;
                }
            }
        }
        let mut err: f64 = 0.0;
        for d in 0..dim {
            self.kronrod[d] *= half;
            self.gauss[d] *= half;
            err = err.max((self.kronrod[d] - self.gauss[d]).abs());
        }
        err
    }
}

/// Scalar convenience wrapper around [`Integrator`].
pub fn integrate<F>(mut f: F, domain: Domain, cfg: &QuadratureConfig) -> Result<Estimate>
where
    F: FnMut(f64) -> f64,
{
    let mut integrator = Integrator::new(*cfg);
    let mut out = [0.0];
    let stats = integrator.integrate(|x, o| o[0] = f(x), 1, domain, &mut out)?;
    Ok(Estimate {
        value: out[0],
        error: stats.error,
        subdivisions: stats.subdivisions,
        evaluations: stats.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tight() -> QuadratureConfig {
        QuadratureConfig {
            rel_tol: 1e-13,
            abs_tol: 1e-300,
            max_subdivisions: 2000,
        }
    }

    #[test]
    fn gaussian_over_real_line() {
        let est = integrate(|x| (-x * x).exp(), Domain::Real, &QuadratureConfig::default()).unwrap();
        assert!(((est.value - PI.sqrt()) / PI.sqrt()).abs() < 1e-7);
        let est = integrate(|x| (-x * x).exp(), Domain::Real, &tight()).unwrap();
        assert!(((est.value - PI.sqrt()) / PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn shifted_gaussian_completes_square() {
        let b = 1.0;
        let want = (b * b / 4.0_f64).exp() * PI.sqrt();
        let est = integrate(|x| (-x * x + b * x).exp(), Domain::Real, &QuadratureConfig::default()).unwrap();
        assert!(((est.value - want) / want).abs() < 1e-7);
    }

    #[test]
    fn finite_interval_polynomial_is_exact() {
        // K15 integrates polynomials up to degree 22 exactly.
        let est = integrate(|x| x.powi(6) - 2.0 * x, Domain::Interval(0.0, 2.0), &tight()).unwrap();
        assert!((est.value - (128.0 / 7.0 - 4.0)).abs() < 1e-12);
        assert_eq!(est.subdivisions, 0);
    }

    #[test]
    fn half_lines() {
        let est = integrate(|x| (-x).exp(), Domain::From(0.0), &tight()).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
        let est = integrate(|x| x.exp(), Domain::UpTo(1.0), &tight()).unwrap();
        assert!((est.value - 1.0_f64.exp()).abs() < 1e-11);
    }

    #[test]
    fn vector_moments_of_normal() {
        let mut integ = Integrator::new(tight());
        let mut out = [0.0; 5];
        integ
            .integrate(
                |x, o| {
                    let w = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
                    let mut p = 1.0;
                    for v in o.iter_mut() {
                        *v = p * w;
                        p *= x;
                    }
                },
                5,
                Domain::Real,
                &mut out,
            )
            .unwrap();
        let want = [1.0, 0.0, 1.0, 0.0, 3.0];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn subdivision_cap_reports_accuracy_error() {
        let cfg = QuadratureConfig {
            rel_tol: 1e-14,
            abs_tol: 1e-300,
            max_subdivisions: 2,
        };
        let err = integrate(|x| (50.0 * x).sin().abs(), Domain::Interval(0.0, 10.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::QuadratureAccuracy { .. }));
    }
}
