use std::sync::Mutex;
use std::time::Instant;

use super::{fit_and_score, with_threads, ExperimentConfig, ExperimentKind, ExperimentRecord, ModelSpec, Sampler};
use crate::error::Result;
use crate::model::{BasisSpec, EnergyModel};
use crate::mrd::MrdHyper;
use crate::objectives::Method;
use crate::recovery::{nstar_search, nstar_search_two_stage, threshold_structure};
use crate::sampling::{derive_seed, random_polynomial_1d, random_regular_ggm, SampleSet};
use crate::solver::{fit_all, FitConfig};

pub(super) fn run(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    match cfg.experiment {
        ExperimentKind::SweepMrd => sweep_mrd(cfg),
        ExperimentKind::ErrorScaling | ExperimentKind::Multibody4d | ExperimentKind::Incoherence => {
            error_scaling(cfg)
        }
        ExperimentKind::NstarScaling => nstar_scaling(cfg),
        ExperimentKind::RuntimeVsN => runtime_vs_n(cfg),
        ExperimentKind::RuntimeVsL => runtime_vs_l(cfg),
        ExperimentKind::SweepLambda => sweep_lambda(cfg),
        ExperimentKind::MethodAgreement => method_agreement(cfg),
    }
}

struct Truth {
    model: EnergyModel,
    label: String,
    sampler: Sampler,
}

fn truth(cfg: &ExperimentConfig, spec: &ModelSpec) -> Result<Truth> {
    let model = spec.build()?;
    let sampler = Sampler::for_model(&model, cfg.grid_bins)?;
    Ok(Truth {
        model,
        label: spec.label(),
        sampler,
    })
}

fn sample_seed(cfg: &ExperimentConfig, labels: &[u64]) -> u64 {
    derive_seed(cfg.seed, labels)
}

fn sweep_mrd(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let t = truth(cfg, &cfg.model)?;
    let n = cfg.n_grid[0];
    let mut records = Vec::new();
    for rep in 0..cfg.repetitions {
        let seed = sample_seed(cfg, &[n as u64, rep as u64]);
        let samples = t.sampler.sample(n, seed)?;
        for &delta in &cfg.delta_grid {
            for &nu in &cfg.nu_grid {
                let fit = FitConfig {
                    mrd: MrdHyper { nu, delta },
                    ..cfg.fit_config(Method::Isodus, &t.model)
                };
                let score = fit_and_score(&samples, &t.model, &fit);
                let mut r = ExperimentRecord::new(cfg, Method::Isodus, &t.label, t.model.p(), n, rep, seed)
                    .with_score(&score);
                r.nu = Some(nu);
                r.delta = Some(delta);
                r.lambda = Some(fit.lambda);
                records.push(r);
            }
        }
    }
    Ok(records)
}

/// ε against n for every method; sample sets are shared across methods.
fn error_scaling(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let t = truth(cfg, &cfg.model)?;
    let mut records = Vec::new();
    for &n in &cfg.n_grid {
        for rep in 0..cfg.repetitions {
            let seed = sample_seed(cfg, &[n as u64, rep as u64]);
            let samples = t.sampler.sample(n, seed)?;
            for &method in &cfg.methods {
                let fit = cfg.fit_config(method, &t.model);
                let score = fit_and_score(&samples, &t.model, &fit);
                let mut r =
                    ExperimentRecord::new(cfg, method, &t.label, t.model.p(), n, rep, seed).with_score(&score);
                r.lambda = Some(fit.lambda);
                r.nu = (method == Method::Isodus).then_some(fit.mrd.nu);
                r.delta = (method == Method::Isodus).then_some(fit.mrd.delta);
                records.push(r);
            }
        }
    }
    Ok(records)
}

fn sweep_lambda(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let t = truth(cfg, &cfg.model)?;
    let n = cfg.n_grid[0];
    let mut records = Vec::new();
    for rep in 0..cfg.repetitions {
        let seed = sample_seed(cfg, &[n as u64, rep as u64]);
        let samples = t.sampler.sample(n, seed)?;
        for &lambda in &cfg.lambda_grid {
            for &method in &cfg.methods {
                let fit = FitConfig {
                    lambda,
                    ..cfg.fit_config(method, &t.model)
                };
                let score = fit_and_score(&samples, &t.model, &fit);
                let mut r =
                    ExperimentRecord::new(cfg, method, &t.label, t.model.p(), n, rep, seed).with_score(&score);
                r.lambda = Some(lambda);
                records.push(r);
            }
        }
    }
    Ok(records)
}

/// One fit on the full sample (trial 0) and on `bootstrap` resamples
/// (trials 1..); one record per coefficient.
fn method_agreement(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let t = truth(cfg, &cfg.model)?;
    let n = cfg.n_grid[0];
    let seed = sample_seed(cfg, &[n as u64]);
    let samples = t.sampler.sample(n, seed)?;
    let mut records = Vec::new();
    for trial in 0..=cfg.bootstrap {
        let (data, data_seed) = if trial == 0 {
            (samples.clone(), seed)
        } else {
            let s = sample_seed(cfg, &[n as u64, trial as u64, 1]);
            (samples.bootstrap(s), s)
        };
        for &method in &cfg.methods {
            let fit = cfg.fit_config(method, &t.model);
            let score = fit_and_score(&data, &t.model, &fit);
            let base = ExperimentRecord::new(cfg, method, &t.label, t.model.p(), n, trial, data_seed).with_score(&score);
            match &score {
                Ok(s) => {
                    for (k, v) in &s.estimate.terms {
                        let mut r = base.clone();
                        r.term = Some(k.to_string());
                        r.value = Some(*v);
                        records.push(r);
                    }
                }
                Err(_) => records.push(base),
            }
        }
    }
    Ok(records)
}

/// Wall time, max iterations, and the status of the first unconverged node.
fn timed_fit(samples: &SampleSet, fit: &FitConfig) -> Result<(f64, usize, Option<String>)> {
    let start = Instant::now();
    let fits = fit_all(samples, fit)?;
    let elapsed = start.elapsed().as_secs_f64();
    let iterations = fits.iter().map(|f| f.result.iterations).max().unwrap_or(0);
    let failure = fits
        .iter()
        .find(|f| !f.result.converged())
        .map(|f| format!("node {}: {:?}", f.node, f.result.status));
    Ok((elapsed, iterations, failure))
}

/// Warm-up fit (discarded) followed by `timing_repeats` timed fits, each
/// recorded as its own row. Sample generation is outside the timed region.
/// A warm-up that errors or does not converge is recorded as a single
/// `failed` or `not-converged` row and the timed repeats are skipped.
fn time_method(
    cfg: &ExperimentConfig,
    template: &ExperimentRecord,
    samples: &SampleSet,
    fit: &FitConfig,
    out: &mut Vec<ExperimentRecord>,
) -> Result<()> {
    with_threads(cfg.single_threaded, || -> Result<()> {
        let row = |status: &str, secs: Option<f64>, iterations: Option<usize>, rep: usize, message: Option<String>| {
            let mut r = template.clone();
            r.status = status.into();
            r.wall_time_s = secs;
            r.iterations = iterations;
            r.success = Some(status == "timing");
            r.value = Some(rep as f64);
            r.message = message;
            r
        };
        match timed_fit(samples, fit) {
            Err(e) => {
                out.push(row("failed", None, None, 0, Some(e.to_string())));
                return Ok(());
            }
            Ok((secs, iterations, Some(failure))) => {
                out.push(row("not-converged", Some(secs), Some(iterations), 0, Some(failure)));
                return Ok(());
            }
            Ok(_) => {}
        }
        for rep in 0..cfg.timing_repeats {
            let (secs, iterations, failure) = timed_fit(samples, fit)?;
            let status = if failure.is_none() { "timing" } else { "not-converged" };
            out.push(row(status, Some(secs), Some(iterations), rep, failure));
        }
        Ok(())
    })
}

fn runtime_vs_n(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let t = truth(cfg, &cfg.model)?;
    let mut all_n: Vec<(usize, bool)> = cfg.n_grid.iter().map(|&n| (n, true)).collect();
    for &n in &cfg.timing_n_grid {
        if !cfg.n_grid.contains(&n) {
            all_n.push((n, false));
        }
    }
    let mut records = Vec::new();
    for (n, all_methods) in all_n {
        for rep in 0..cfg.repetitions {
            let seed = sample_seed(cfg, &[n as u64, rep as u64]);
            let samples = t.sampler.sample(n, seed)?;
            for &method in &cfg.methods {
                if !all_methods && method != Method::Isodus {
                    continue;
                }
                let fit = cfg.fit_config(method, &t.model);
                let template = ExperimentRecord::new(cfg, method, &t.label, t.model.p(), n, rep, seed);
                time_method(cfg, &template, &samples, &fit, &mut records)?;
            }
        }
    }
    Ok(records)
}

fn runtime_vs_l(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let n = cfg.n_grid[0];
    let mut records = Vec::new();
    for &degree in &cfg.degree_grid {
        for rep in 0..cfg.repetitions {
            let model_seed = sample_seed(cfg, &[degree as u64, rep as u64, 0]);
            let model = random_polynomial_1d(degree, model_seed)?;
            let spec = ModelSpec::Polynomial1d {
                degree,
                seed: model_seed,
            };
            let sampler = Sampler::for_model(&model, cfg.grid_bins)?;
            let seed = sample_seed(cfg, &[degree as u64, rep as u64, 1]);
            let samples = sampler.sample(n, seed)?;
            for &method in &cfg.methods {
                let fit = FitConfig {
                    basis: BasisSpec::new(2, degree, 1),
                    ..cfg.fit_config(method, &model)
                };
                let mut template = ExperimentRecord::new(cfg, method, &spec.label(), 1, n, rep, seed);
                template.degree = Some(degree);
                time_method(cfg, &template, &samples, &fit, &mut records)?;
            }
        }
    }
    Ok(records)
}

/// n* per (method, p, graph realization). Every oracle call becomes a trial
/// record; each search adds a summary record with status `nstar` or
/// `search-failure`.
fn nstar_scaling(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let mut records = Vec::new();
    for &method in &cfg.methods {
        for &p in &cfg.p_grid {
            for graph in 0..cfg.graphs {
                // Graphs come from the model seed so that the protocol seed only
                // changes the samples drawn at each n.
                let model_seed = match cfg.model {
                    ModelSpec::RegularGgm { seed, .. } => seed,
                    _ => cfg.seed,
                };
                let graph_seed = derive_seed(model_seed, &[p as u64, graph as u64]);
                let model = random_regular_ggm(p, cfg.degree, cfg.kappa, graph_seed)?;
                let spec = ModelSpec::RegularGgm {
                    p,
                    d: cfg.degree,
                    kappa: cfg.kappa,
                    seed: graph_seed,
                };
                let sampler = Sampler::for_model(&model, cfg.grid_bins)?;
                let fit = cfg.fit_config(method, &model);
                let edges = model.hyperedges();
                let label = spec.label();
                let method_tag = method as u64;
                let trials: Mutex<Vec<ExperimentRecord>> = Mutex::new(Vec::new());
                let oracle = |n: usize, trial: usize| -> Result<bool> {
                    let seed = sample_seed(cfg, &[p as u64, graph as u64, n as u64, trial as u64, method_tag]);
                    let samples = sampler.sample(n, seed)?;
                    let score = fit_and_score(&samples, &model, &fit);
                    let success = match &score {
                        Ok(s) => threshold_structure(&s.estimate, cfg.nstar.threshold) == edges,
                        Err(_) => false,
                    };
                    let mut r = ExperimentRecord::new(cfg, method, &label, p, n, trial, seed).with_score(&score);
                    r.graph = Some(graph);
                    r.d = Some(cfg.degree);
                    r.kappa = Some(cfg.kappa);
                    r.lambda = Some(fit.lambda);
                    r.success = Some(success);
                    trials.lock().expect("records lock").push(r);
                    Ok(success)
                };
                let outcome = if cfg.nstar_coarse_factor > 1 {
                    nstar_search_two_stage(&cfg.nstar, cfg.nstar_coarse_factor, oracle)
                } else {
                    nstar_search(&cfg.nstar, oracle)
                };
                let mut trial_records = trials.into_inner().expect("records lock");
                trial_records.sort_by_key(|r| (r.n, r.trial));
                records.extend(trial_records);
                let mut summary = ExperimentRecord::new(cfg, method, &label, p, 0, 0, graph_seed);
                summary.graph = Some(graph);
                summary.d = Some(cfg.degree);
                summary.kappa = Some(cfg.kappa);
                summary.lambda = Some(fit.lambda);
                summary.threshold = Some(cfg.nstar.threshold);
                match outcome {
                    Ok(o) => {
                        summary.status = "nstar".into();
                        summary.n_star = Some(o.n_star);
                        summary.n = o.n_star;
                        summary.value = Some(o.levels.len() as f64);
                    }
                    Err(e) => {
                        summary.status = "search-failure".into();
                        summary.message = Some(e.to_string());
                    }
                }
                records.push(summary);
            }
        }
    }
    Ok(records)
}
