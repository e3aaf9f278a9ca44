use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use isodus::experiments::verify::{run_verify, VerifyConfig};
use isodus::experiments::{
    fit_and_score, run_experiment, ExperimentConfig, ExperimentKind, ExperimentOutput, ModelSpec, Sampler,
};
use isodus::model::EnergyModel;
use isodus::objectives::Method;
use isodus::sampling::SampleSet;

#[derive(Parser)]
#[command(name = "isodus", version, about = "Interaction screening and pseudo-likelihood for continuous graphical models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; fields not given take the preset of the experiment kind.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured ground-truth model to model.json.
    GenModel(Common),
    /// Draw samples from the configured model into samples.csv.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Sample size (default: first entry of the n grid).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit every node and write fit.json.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Samples CSV; drawn from the configured model when absent.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Ground truth for error metrics (default: the configured model).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Accuracy experiments: sweep-mrd, error-scaling, multibody-4d,
    /// incoherence, sweep-lambda, method-agreement.
    Sweep(ExperimentArgs),
    /// Sample-complexity scaling with p.
    Nstar(ExperimentArgs),
    /// Runtime benchmarks: runtime-vs-n, runtime-vs-L.
    Bench(ExperimentArgs),
    /// Invariant suite; exit status 1 if any check fails.
    Verify(Common),
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    /// Preset to use when the config does not name one.
    #[arg(long)]
    kind: Option<ExperimentKind>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenModel(c) => gen_model(&c),
        Command::Sample { common, n } => sample(&common, n),
        Command::Fit {
            common,
            samples,
            model,
            method,
            n,
        } => fit(&common, samples.as_deref(), model.as_deref(), method, n),
        Command::Sweep(a) => experiment(
            &a,
            ExperimentKind::SweepMrd,
            &[
                ExperimentKind::SweepMrd,
                ExperimentKind::ErrorScaling,
                ExperimentKind::Multibody4d,
                ExperimentKind::Incoherence,
                ExperimentKind::SweepLambda,
                ExperimentKind::MethodAgreement,
            ],
        ),
        Command::Nstar(a) => experiment(&a, ExperimentKind::NstarScaling, &[ExperimentKind::NstarScaling]),
        Command::Bench(a) => experiment(
            &a,
            ExperimentKind::RuntimeVsN,
            &[ExperimentKind::RuntimeVsN, ExperimentKind::RuntimeVsL],
        ),
        Command::Verify(c) => verify(&c),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_config(common: &Common, default_kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut overlay = match &common.config {
        Some(p) => read_json(p)?,
        None => json!({}),
    };
    let obj = overlay.as_object_mut().context("config must be a JSON object")?;
    obj.entry("experiment").or_insert(json!(default_kind));
    if let Some(seed) = common.seed {
        obj.insert("seed".into(), json!(seed));
    }
    Ok(ExperimentConfig::from_json_value(overlay)?)
}

/// The configured model, with `--seed` also replacing a model's own seed.
fn model_spec(common: &Common, cfg: &ExperimentConfig) -> ModelSpec {
    let mut spec = cfg.model.clone();
    if let Some(s) = common.seed {
        match &mut spec {
            ModelSpec::RandomGgm { seed, .. }
            | ModelSpec::RegularGgm { seed, .. }
            | ModelSpec::Polynomial1d { seed, .. } => *seed = s,
            _ => {}
        }
    }
    spec
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(path)
}

fn gen_model(common: &Common) -> Result<bool> {
    let cfg = load_config(common, ExperimentKind::ErrorScaling)?;
    let model = model_spec(common, &cfg).build()?;
    std::fs::create_dir_all(&common.out)?;
    let path = common.out.join("model.json");
    model.save(&path)?;
    println!("wrote {} ({} terms, p = {})", path.display(), model.len(), model.p());
    Ok(true)
}

fn draw(common: &Common, cfg: &ExperimentConfig, model: &EnergyModel, n: Option<usize>) -> Result<SampleSet> {
    let n = n.unwrap_or(cfg.n_grid[0]);
    let sampler = Sampler::for_model(model, cfg.grid_bins)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    Ok(sampler.sample(n, seed)?)
}

fn sample(common: &Common, n: Option<usize>) -> Result<bool> {
    let cfg = load_config(common, ExperimentKind::ErrorScaling)?;
    let model = model_spec(common, &cfg).build()?;
    let samples = draw(common, &cfg, &model, n)?;
    std::fs::create_dir_all(&common.out)?;
    let path = common.out.join("samples.csv");
    samples.save_csv(&path)?;
    println!("wrote {} ({} × {})", path.display(), samples.n(), samples.p());
    Ok(true)
}

fn fit(
    common: &Common,
    samples_path: Option<&Path>,
    model_path: Option<&Path>,
    method: Option<Method>,
    n: Option<usize>,
) -> Result<bool> {
    let cfg = load_config(common, ExperimentKind::ErrorScaling)?;
    let truth = match model_path {
        Some(p) => EnergyModel::load(p)?,
        None => model_spec(common, &cfg).build()?,
    };
    let samples = match samples_path {
        Some(p) => SampleSet::load_csv(p)?,
        None => draw(common, &cfg, &truth, n)?,
    };
    if samples.p() != truth.p() {
        bail!("samples have {} columns but the model has p = {}", samples.p(), truth.p());
    }
    let method = method.unwrap_or(cfg.methods[0]);
    let fit_cfg = cfg.fit_config(method, &truth);
    let score = fit_and_score(&samples, &truth, &fit_cfg)?;
    let fits = &score.fits;
    let nodes: Vec<Value> = fits
        .iter()
        .map(|f| {
            json!({
                "node": f.node,
                "status": f.result.status,
                "iterations": f.result.iterations,
                "objective": f.result.objective,
                "optimality": f.result.optimality,
                "certified_optimality": f.certified_optimality,
                "l1_weight": f.l1_weight,
                "theta": f.basis.iter().zip(&f.result.theta)
                    .map(|(k, t)| (k.to_string(), json!(t)))
                    .collect::<serde_json::Map<_, _>>(),
            })
        })
        .collect();
    let terms: serde_json::Map<String, Value> =
        score.estimate.terms.iter().map(|(k, t)| (k.to_string(), json!(t))).collect();
    let report = json!({
        "method": method,
        "n": samples.n(),
        "p": samples.p(),
        "fit": fit_cfg,
        "estimate": terms,
        "eps_mean": score.eps_mean,
        "eps_max": score.eps_max,
        "threshold": score.threshold,
        "structure_recovered": score.recovered,
        "wall_time_s": score.wall_time_s,
        "nodes": nodes,
    });
    let path = write_json(&common.out, "fit.json", &report)?;
    let converged = fits.iter().all(|f| f.result.converged());
    println!(
        "{method}: {} nodes, eps_mean {:.4e}, eps_max {:.4e}, converged {converged}; wrote {}",
        fits.len(),
        score.eps_mean,
        score.eps_max,
        path.display()
    );
    Ok(converged)
}

fn experiment(args: &ExperimentArgs, default: ExperimentKind, allowed: &[ExperimentKind]) -> Result<bool> {
    let cfg = load_config(&args.common, args.kind.unwrap_or(default))?;
    if !allowed.contains(&cfg.experiment) {
        bail!(
            "experiment kind {} is not run by this subcommand (expected one of {})",
            cfg.experiment,
            allowed.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
        );
    }
    let output = run_experiment(&cfg)?;
    output.write(&args.common.out)?;
    print_checks(&output);
    Ok(output.passed)
}

fn print_checks(output: &ExperimentOutput) {
    println!("{}: {} records", output.config.experiment, output.records.len());
    for c in &output.checks {
        println!(
            "  [{}] {}: {} (expected {})",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.measured,
            c.expected
        );
    }
}

fn verify(common: &Common) -> Result<bool> {
    let mut cfg: VerifyConfig = match &common.config {
        Some(p) => serde_json::from_value(read_json(p)?)?,
        None => VerifyConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let report = run_verify(&cfg)?;
    write_json(&common.out, "report.json", &serde_json::to_value(&report)?)?;
    for c in &report.checks {
        if !c.passed {
            println!("  [FAIL] {} {}: residual {:e} > {:e}", c.group, c.name, c.residual, c.tolerance);
        }
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    println!("verify: {} checks, {failed} failed", report.checks.len());
    Ok(report.passed)
}
