//! Config-driven experiment runs: each kind produces flat records, written to
//! `records.csv`, and a report of post-run checks computed from that CSV.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fixtures;
use crate::model::{BasisSpec, EnergyModel};
use crate::objectives::Method;
use crate::recovery::{max_abs_error, mean_abs_error, symmetrize, threshold_structure, NStarConfig, SymmetrizedEstimate};
use crate::sampling::{
    build_grid, random_polynomial_1d, random_psd_precision, random_regular_ggm, sample_gaussian, sample_product,
    GridDistribution, SampleSet,
};
use crate::solver::{fit_all, FitConfig, NodeFit};

pub mod analysis;
mod runners;
pub mod verify;

pub use analysis::{evaluate, read_records, Check};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "sweep-mrd")]
    SweepMrd,
    #[serde(rename = "error-scaling")]
    ErrorScaling,
    #[serde(rename = "nstar-scaling")]
    NstarScaling,
    #[serde(rename = "runtime-vs-n")]
    RuntimeVsN,
    #[serde(rename = "runtime-vs-L")]
    RuntimeVsL,
    #[serde(rename = "incoherence")]
    Incoherence,
    #[serde(rename = "multibody-4d")]
    Multibody4d,
    #[serde(rename = "sweep-lambda")]
    SweepLambda,
    /// Bootstrap comparison of ISODUS and PL coefficients on one data set.
    #[serde(rename = "method-agreement")]
    MethodAgreement,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::SweepMrd,
        ExperimentKind::ErrorScaling,
        ExperimentKind::NstarScaling,
        ExperimentKind::RuntimeVsN,
        ExperimentKind::RuntimeVsL,
        ExperimentKind::Incoherence,
        ExperimentKind::Multibody4d,
        ExperimentKind::SweepLambda,
        ExperimentKind::MethodAgreement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SweepMrd => "sweep-mrd",
            ExperimentKind::ErrorScaling => "error-scaling",
            ExperimentKind::NstarScaling => "nstar-scaling",
            ExperimentKind::RuntimeVsN => "runtime-vs-n",
            ExperimentKind::RuntimeVsL => "runtime-vs-L",
            ExperimentKind::Incoherence => "incoherence",
            ExperimentKind::Multibody4d => "multibody-4d",
            ExperimentKind::SweepLambda => "sweep-lambda",
            ExperimentKind::MethodAgreement => "method-agreement",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment kind '{s}'")))
    }
}

/// Ground-truth model of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Dense Gaussian with a random precision (eigenvalues in [0.5, 2]).
    RandomGgm { p: usize, seed: u64 },
    /// Unit-diagonal Gaussian with coupling `kappa` on a random `d`-regular graph.
    RegularGgm { p: usize, d: usize, kappa: f64, seed: u64 },
    Quartic1d,
    Polynomial1d { degree: u32, seed: u64 },
    Quartic2d,
    Pseudo4d,
    Diamond { rho: f64 },
    /// Zero-mean Gaussian given by its covariance matrix (rows).
    Covariance { matrix: Vec<Vec<f64>> },
    /// Model saved as JSON.
    File { path: PathBuf },
}

impl ModelSpec {
    pub fn build(&self) -> Result<EnergyModel> {
        match self {
            ModelSpec::RandomGgm { p, seed } => {
                let prec = random_psd_precision(*p, *seed)?;
                crate::model::gaussian_model(&prec, &vec![0.0; *p])
            }
            ModelSpec::RegularGgm { p, d, kappa, seed } => random_regular_ggm(*p, *d, *kappa, *seed),
            ModelSpec::Quartic1d => Ok(fixtures::quartic_1d()),
            ModelSpec::Polynomial1d { degree, seed } => random_polynomial_1d(*degree, *seed),
            ModelSpec::Quartic2d => Ok(fixtures::quartic_2d()),
            ModelSpec::Pseudo4d => Ok(fixtures::pseudo_4d()),
            ModelSpec::Diamond { rho } => fixtures::diamond(*rho),
            ModelSpec::Covariance { matrix } => {
                let p = matrix.len();
                if matrix.iter().any(|r| r.len() != p) {
                    return Err(Error::InvalidParameter("covariance must be square".into()));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                fixtures::gaussian_from_covariance(&DMatrix::from_row_slice(p, p, &flat))
            }
            ModelSpec::File { path } => EnergyModel::load(path),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelSpec::RandomGgm { p, .. } => format!("random-ggm-p{p}"),
            ModelSpec::RegularGgm { p, d, .. } => format!("regular-ggm-p{p}-d{d}"),
            ModelSpec::Quartic1d => "quartic-1d".into(),
            ModelSpec::Polynomial1d { degree, .. } => format!("polynomial-1d-L{degree}"),
            ModelSpec::Quartic2d => "quartic-2d".into(),
            ModelSpec::Pseudo4d => "pseudo-4d".into(),
            ModelSpec::Diamond { rho } => format!("diamond-rho{rho}"),
            ModelSpec::Covariance { matrix } => format!("covariance-p{}", matrix.len()),
            ModelSpec::File { path } => format!("file:{}", path.display()),
        }
    }
}

/// Candidate class matching a model: pairwise quadratic for Gaussians,
/// otherwise all monomials of order 2..=s touching at most `s` variables.
pub fn natural_basis(model: &EnergyModel) -> BasisSpec {
    if model.to_precision().is_some() {
        BasisSpec::pairwise_quadratic()
    } else {
        let s = model.s().max(2);
        BasisSpec::new(2, s, (s as usize).min(model.p()))
    }
}

/// Exact sampler for a model: Cholesky for Gaussians, otherwise grids over
/// independent blocks of at most two variables.
#[derive(Clone, Debug)]
pub enum Sampler {
    Gaussian { precision: DMatrix<f64> },
    Grid(GridDistribution),
    Product { grids: Vec<GridDistribution>, assignment: Vec<Vec<usize>> },
}

impl Sampler {
    pub fn for_model(model: &EnergyModel, bins: usize) -> Result<Self> {
        if let Some(precision) = model.to_precision() {
            return Ok(Sampler::Gaussian { precision });
        }
        if model.p() <= 2 {
            return Ok(Sampler::Grid(build_grid(model, bins)?));
        }
        let mut grids: Vec<GridDistribution> = Vec::new();
        let mut built: Vec<EnergyModel> = Vec::new();
        let mut factors: Vec<(usize, Vec<usize>)> = Vec::new();
        for block in components(model) {
            if block.len() > 2 {
                return Err(Error::InvalidParameter(format!(
                    "no exact sampler for the {}-variable block {block:?}",
                    block.len()
                )));
            }
            let mut perm = vec![0; model.p()];
            for (new, &old) in block.iter().enumerate() {
                perm[old] = new;
            }
            let mut sub = EnergyModel::new(block.len(), model.s())?;
            for (k, &t) in model.terms() {
                if k.vars().all(|v| block.contains(&v)) {
                    sub.set(k.permuted(&perm), t)?;
                }
            }
            let g = match built.iter().position(|b| *b == sub) {
                Some(g) => g,
                None => {
                    grids.push(build_grid(&sub, bins)?);
                    built.push(sub);
                    grids.len() - 1
                }
            };
            factors.push((g, block));
        }
        let assignment = factors.iter().map(|(_, b)| b.clone()).collect();
        let grids = factors.iter().map(|(g, _)| grids[*g].clone()).collect();
        Ok(Sampler::Product { grids, assignment })
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        match self {
            Sampler::Gaussian { precision } => sample_gaussian(precision, &vec![0.0; precision.nrows()], n, seed),
            Sampler::Grid(g) => g.sample(n, seed),
            Sampler::Product { grids, assignment } => {
                let refs: Vec<&GridDistribution> = grids.iter().collect();
                sample_product(&refs, assignment, n, seed)
            }
        }
    }
}

/// Connected variable blocks of the interaction hypergraph, sorted.
fn components(model: &EnergyModel) -> Vec<Vec<usize>> {
    let p = model.p();
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for k in model.terms().keys() {
        let vars: Vec<usize> = k.vars().collect();
        for w in vars.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..p {
        let r = find(&mut parent, v);
        blocks.entry(r).or_default().push(v);
    }
    blocks.into_values().collect()
}

/// Tolerances of the post-run checks; recorded verbatim in the report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckTolerances {
    pub slope_target: f64,
    pub slope_tol: f64,
    /// Largest allowed difference between the slopes of two methods.
    pub method_slope_gap: f64,
    /// Cells with `δ ≥ valley_min_delta` must stay within this factor of the grid minimum.
    pub valley_ratio: f64,
    pub valley_min_delta: f64,
    /// Some cell with `δ ≤ blowup_max_delta` must fail or exceed this factor.
    pub blowup_ratio: f64,
    pub blowup_max_delta: f64,
    pub runtime_ratio_min: f64,
    pub runtime_slope_target: f64,
    pub runtime_slope_tol: f64,
    pub nstar_r2_min: f64,
    /// Half-width of the bootstrap intervals in standard errors.
    pub agreement_sigmas: f64,
    pub certificate_tol: f64,
}

impl Default for CheckTolerances {
    fn default() -> Self {
        Self {
            slope_target: -0.5,
            slope_tol: 0.1,
            method_slope_gap: 0.1,
            valley_ratio: 3.0,
            valley_min_delta: 1.0,
            blowup_ratio: 10.0,
            blowup_max_delta: 0.25,
            runtime_ratio_min: 10.0,
            runtime_slope_target: 1.0,
            runtime_slope_tol: 0.1,
            nstar_r2_min: 0.8,
            agreement_sigmas: 3.0,
            certificate_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSpec,
    pub methods: Vec<Method>,
    /// Shared fit settings; `fit.lambda` is the ISODUS penalty.
    pub fit: FitConfig,
    /// PL penalty; `fit.lambda` is used when absent.
    pub pl_lambda: Option<f64>,
    /// Candidate class; derived from the model when absent.
    pub basis: Option<BasisSpec>,
    pub n_grid: Vec<usize>,
    /// ISODUS-only sample sizes for the runtime slope.
    pub timing_n_grid: Vec<usize>,
    pub p_grid: Vec<usize>,
    pub degree_grid: Vec<u32>,
    pub nu_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub repetitions: usize,
    /// Graph realizations per p in the n* scaling.
    pub graphs: usize,
    pub degree: usize,
    pub kappa: f64,
    pub nstar: NStarConfig,
    /// Step multiplier of the coarse n* pass; 1 runs the plain search.
    pub nstar_coarse_factor: usize,
    pub grid_bins: usize,
    /// Run fits on a one-thread pool (runtime benchmarks).
    pub single_threaded: bool,
    pub timing_repeats: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub checks: CheckTolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(ExperimentKind::ErrorScaling)
    }
}

fn powers_of_two(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

impl ExperimentConfig {
    /// Desk-scale defaults for each experiment kind.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            experiment: kind,
            model: ModelSpec::RandomGgm { p: 10, seed: 7 },
            methods: vec![Method::Isodus],
            fit: FitConfig::default(),
            pl_lambda: None,
            basis: None,
            n_grid: vec![1_000, 3_000, 10_000, 30_000, 100_000],
            timing_n_grid: Vec::new(),
            p_grid: Vec::new(),
            degree_grid: Vec::new(),
            nu_grid: Vec::new(),
            delta_grid: Vec::new(),
            lambda_grid: Vec::new(),
            repetitions: 10,
            graphs: 1,
            degree: 3,
            kappa: 0.25,
            nstar: NStarConfig::default(),
            nstar_coarse_factor: 10,
            grid_bins: 5000,
            single_threaded: false,
            timing_repeats: 3,
            bootstrap: 0,
            seed: 2024,
            checks: CheckTolerances::default(),
        };
        let mut per_sample_pl = base.fit;
        per_sample_pl.pl.reuse_shared_conditionals = false;
        // Degree-8 PL fits on 100 samples can crawl along the edge of the
        // integrable region for thousands of quadrature-backed steps.
        let mut capped_pl = per_sample_pl;
        capped_pl.solve.max_iters = 200;
        let mut shared_pl = base.fit;
        shared_pl.pl.reuse_shared_conditionals = true;
        let mut unnormalized = base.fit;
        unnormalized.normalized_weight = false;
        unnormalized.lambda = 0.35;
        match kind {
            ExperimentKind::SweepMrd => ExperimentConfig {
                n_grid: vec![10_000],
                nu_grid: powers_of_two(-4, 2),
                delta_grid: powers_of_two(-4, 2),
                ..base
            },
            ExperimentKind::ErrorScaling => base,
            ExperimentKind::Multibody4d => ExperimentConfig {
                model: ModelSpec::Pseudo4d,
                checks: CheckTolerances {
                    slope_tol: 0.15,
                    ..CheckTolerances::default()
                },
                ..base
            },
            ExperimentKind::NstarScaling => ExperimentConfig {
                model: ModelSpec::RegularGgm {
                    p: 16,
                    d: 3,
                    kappa: 0.25,
                    seed: 11,
                },
                fit: unnormalized,
                pl_lambda: Some(2.3),
                p_grid: vec![16, 24, 32, 48, 64],
                // One graph per p leaves n* dominated by graph and sampling noise.
                graphs: 5,
                repetitions: 1,
                nstar: NStarConfig {
                    start: 2_000,
                    ..NStarConfig::default()
                },
                ..base
            },
            ExperimentKind::RuntimeVsN => ExperimentConfig {
                model: ModelSpec::Quartic1d,
                methods: vec![Method::Isodus, Method::Pl],
                fit: per_sample_pl,
                n_grid: vec![100, 1_000, 10_000],
                timing_n_grid: vec![10_000, 30_000, 100_000, 300_000, 1_000_000],
                repetitions: 1,
                single_threaded: true,
                timing_repeats: 3,
                ..base
            },
            ExperimentKind::RuntimeVsL => ExperimentConfig {
                model: ModelSpec::Polynomial1d { degree: 4, seed: 0 },
                methods: vec![Method::Isodus, Method::Pl],
                fit: capped_pl,
                n_grid: vec![100],
                degree_grid: vec![4, 6, 8],
                repetitions: 10,
                single_threaded: true,
                timing_repeats: 3,
                ..base
            },
            ExperimentKind::Incoherence => ExperimentConfig {
                model: ModelSpec::Diamond { rho: 0.55 },
                methods: vec![Method::Isodus, Method::Pl],
                n_grid: vec![100, 300, 1_000, 3_000, 10_000, 30_000],
                ..base
            },
            ExperimentKind::SweepLambda => ExperimentConfig {
                model: ModelSpec::RegularGgm {
                    p: 16,
                    d: 3,
                    kappa: 0.25,
                    seed: 11,
                },
                methods: vec![Method::Isodus, Method::Pl],
                fit: unnormalized,
                n_grid: vec![5_000],
                lambda_grid: vec![0.0, 0.1, 0.2, 0.35, 0.7, 1.0, 2.3],
                repetitions: 3,
                ..base
            },
            ExperimentKind::MethodAgreement => ExperimentConfig {
                model: ModelSpec::Quartic1d,
                methods: vec![Method::Isodus, Method::Pl],
                fit: shared_pl,
                n_grid: vec![100_000],
                repetitions: 1,
                bootstrap: 30,
                ..base
            },
        }
    }

    /// Preset of the `experiment` kind named in `overlay`, with the overlay's
    /// fields merged in (objects recursively).
    pub fn from_json_value(overlay: Value) -> Result<Self> {
        let kind: ExperimentKind = match overlay.get("experiment") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => ExperimentKind::ErrorScaling,
        };
        let mut merged = serde_json::to_value(ExperimentConfig::preset(kind))?;
        merge(&mut merged, overlay);
        let cfg: ExperimentConfig = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("{}: {msg}", self.experiment)));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("method list is empty");
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("n grid must be non-empty with positive entries");
        }
        self.fit.solve.validate()?;
        match self.experiment {
            ExperimentKind::SweepMrd if self.nu_grid.is_empty() || self.delta_grid.is_empty() => {
                bad("nu and delta grids must be non-empty")
            }
            ExperimentKind::NstarScaling if self.p_grid.is_empty() || self.graphs == 0 => {
                bad("p grid must be non-empty and graphs at least 1")
            }
            ExperimentKind::NstarScaling => self.nstar.validate(),
            ExperimentKind::RuntimeVsL if self.degree_grid.is_empty() => bad("degree grid must be non-empty"),
            ExperimentKind::SweepLambda if self.lambda_grid.is_empty() => bad("lambda grid must be non-empty"),
            ExperimentKind::RuntimeVsN | ExperimentKind::RuntimeVsL if self.timing_repeats == 0 => {
                bad("timing repeats must be at least 1")
            }
            ExperimentKind::MethodAgreement if self.bootstrap < 2 || self.methods.len() != 2 => {
                bad("needs two methods and at least two bootstrap resamples")
            }
            _ => Ok(()),
        }
    }

    /// Fit settings for `method`, with its penalty and the candidate class.
    pub fn fit_config(&self, method: Method, model: &EnergyModel) -> FitConfig {
        let lambda = match method {
            Method::Pl => self.pl_lambda.unwrap_or(self.fit.lambda),
            Method::Isodus => self.fit.lambda,
        };
        FitConfig {
            method,
            lambda,
            basis: self.basis.unwrap_or_else(|| natural_basis(model)),
            ..self.fit
        }
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // Tagged enums are replaced wholesale.
                    Some(slot) if slot.is_object() && v.is_object() && !v.get("type").is_some() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// One CSV row. Unused columns are left empty; the column set is the same for
/// every experiment kind.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub method: String,
    pub model: String,
    pub p: usize,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    /// `ok`, `not-converged`, `failed`, `nstar`, `search-failure` or `timing`.
    pub status: String,
    pub graph: Option<usize>,
    pub d: Option<usize>,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    pub nu: Option<f64>,
    pub delta: Option<f64>,
    pub degree: Option<u32>,
    pub eps_mean: Option<f64>,
    pub eps_max: Option<f64>,
    pub threshold: Option<f64>,
    pub recovered: Option<bool>,
    pub success: Option<bool>,
    pub n_star: Option<usize>,
    pub wall_time_s: Option<f64>,
    pub iterations: Option<usize>,
    pub converged_nodes: Option<usize>,
    pub certified_max: Option<f64>,
    pub term: Option<String>,
    pub value: Option<f64>,
    pub message: Option<String>,
}

impl ExperimentRecord {
    fn new(cfg: &ExperimentConfig, method: Method, model: &str, p: usize, n: usize, trial: usize, seed: u64) -> Self {
        ExperimentRecord {
            experiment: cfg.experiment.name().to_string(),
            method: method.name().to_string(),
            model: model.to_string(),
            p,
            n,
            trial,
            seed,
            status: "ok".into(),
            ..Default::default()
        }
    }

    fn with_score(mut self, score: &Result<FitScore>) -> Self {
        match score {
            Ok(s) => {
                self.status = if s.converged_nodes == s.nodes { "ok" } else { "not-converged" }.into();
                self.eps_mean = Some(s.eps_mean).filter(|v| v.is_finite());
                self.eps_max = Some(s.eps_max).filter(|v| v.is_finite());
                self.threshold = s.threshold;
                self.recovered = s.recovered;
                self.wall_time_s = Some(s.wall_time_s);
                self.iterations = Some(s.iterations);
                self.converged_nodes = Some(s.converged_nodes);
                self.certified_max = s.certified_max;
            }
            Err(e) => {
                self.status = "failed".into();
                self.message = Some(e.to_string());
            }
        }
        self
    }
}

/// Fit of every node plus its comparison with the truth.
#[derive(Clone, Debug)]
pub struct FitScore {
    pub estimate: SymmetrizedEstimate,
    pub eps_mean: f64,
    pub eps_max: f64,
    /// `κ_min / 2` when the truth has interactions.
    pub threshold: Option<f64>,
    pub recovered: Option<bool>,
    /// Largest iteration count over nodes.
    pub iterations: usize,
    pub nodes: usize,
    pub converged_nodes: usize,
    /// Largest re-verified optimality over converged nodes.
    pub certified_max: Option<f64>,
    pub wall_time_s: f64,
    pub fits: Vec<NodeFit>,
}

pub fn fit_and_score(samples: &SampleSet, truth: &EnergyModel, cfg: &FitConfig) -> Result<FitScore> {
    let start = Instant::now();
    let fits = fit_all(samples, cfg)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let estimate = symmetrize(&fits);
    let basis = cfg.basis.global_basis(truth.p());
    let threshold = truth.min_interaction().map(|k| k / 2.0);
    let recovered = threshold.map(|t| threshold_structure(&estimate, t) == truth.hyperedges());
    let certified_max = fits
        .iter()
        .filter_map(|f| f.certified_optimality)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    Ok(FitScore {
        eps_mean: mean_abs_error(&estimate, truth, &basis),
        eps_max: max_abs_error(&estimate, truth, &basis),
        threshold,
        recovered,
        iterations: fits.iter().map(|f| f.result.iterations).max().unwrap_or(0),
        nodes: fits.len(),
        converged_nodes: fits.iter().filter(|f| f.result.converged()).count(),
        certified_max,
        wall_time_s,
        estimate,
        fits,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub records: Vec<ExperimentRecord>,
    pub checks: Vec<Check>,
    pub summary: Value,
    pub passed: bool,
}

impl ExperimentOutput {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_records(&self.records, std::fs::File::create(dir.join("records.csv"))?)?;
        let report = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("report.json"), report + "\n")?;
        Ok(())
    }
}

pub fn write_records<W: Write>(records: &[ExperimentRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_records<R: Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    read_records(reader)
}

/// Runs the experiment, then derives its checks from the serialized records.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let records = runners::run(cfg)?;
    let mut csv_bytes = Vec::new();
    write_records(&records, &mut csv_bytes)?;
    let parsed = read_records(csv_bytes.as_slice())?;
    let (checks, summary) = evaluate(cfg, &parsed);
    let passed = checks.iter().all(|c| c.passed);
    Ok(ExperimentOutput {
        config: cfg.clone(),
        records,
        checks,
        summary,
        passed,
    })
}

/// Runs `f` on a one-thread pool when `single` is set.
pub(crate) fn with_threads<T: Send>(single: bool, f: impl FnOnce() -> T + Send) -> T {
    if !single {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
