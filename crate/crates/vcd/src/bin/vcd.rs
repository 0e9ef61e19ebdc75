//! Command-line front end: tensor distortion, POPE evaluation, ablation
//! sweeps, and the bias study, driven by a JSON run configuration with
//! flag overrides.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vcd::config::{write_atomic, RunConfig};
use vcd::decoding::{SamplingStrategy, VcdParams};
use vcd::distortion::{build_schedule, diffuse_to};
use vcd::harness::{
    ablation_sweep, bias_study, build_pope_queries_seeded, evaluate, noise_sweep, DecodingConfig,
    DecodingMode, EvalOutcome, PopeReport, PopeSetting, SweepPoint,
};
use vcd::rng::rng_from_seed;
use vcd::tensor::Tensor;
use vcd::VcdError;

#[derive(Parser)]
#[command(name = "vcd", version, about = "Visual contrastive decoding testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of evaluation runs; overrides the config value.
    #[arg(long, global = true)]
    runs: Option<usize>,

    /// Output base path; `.json` / `.csv` extensions are appended.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Contrast amplification alpha; overrides the config value.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Plausibility truncation beta; overrides the config value.
    #[arg(long, global = true)]
    beta: Option<f64>,

    /// Per-step noise fraction gamma; overrides the config value.
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// Diffusion step used for distortion.
    #[arg(long, global = true)]
    noise_step: Option<usize>,

    /// Sampling strategy: direct|greedy|topk:K|topp:P|temp:TAU+INNER.
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// POPE setting: random|popular|adversarial|all.
    #[arg(long, global = true)]
    setting: Option<String>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Apply forward diffusion to a VCDT tensor file.
    Distort {
        /// Input tensor in VCDT format.
        #[arg(long)]
        input: PathBuf,
        /// Total steps of the noise schedule.
        #[arg(long, default_value_t = 999)]
        total_steps: usize,
    },
    /// Run the POPE evaluation in Regular and VCD mode, write JSON + CSV.
    Pope,
    /// Sweep one hyperparameter axis and write a CSV table.
    Sweep {
        /// Axis: alpha|beta|t|strategy|noise.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long)]
        values: String,
    },
    /// Regular-decoding evaluation with the model input distorted at each t.
    NoiseSweep {
        /// Comma-separated ascending noise steps.
        #[arg(long)]
        values: String,
    },
    /// Caption-based hallucination rates by prior frequency and co-occurrence.
    BiasStudy {
        /// Captions generated per scene.
        #[arg(long, default_value_t = 50)]
        captions: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &VcdError) -> u8 {
    match e {
        VcdError::Param { .. }
        | VcdError::Config(_)
        | VcdError::TensorFormat(_)
        | VcdError::SceneConstruction { .. } => 2,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<(), VcdError> {
    match &cli.command {
        Command::Distort { input, total_steps } => cmd_distort(cli, input, *total_steps),
        Command::Pope => cmd_pope(cli),
        Command::Sweep { axis, values } => cmd_sweep(cli, axis, values),
        Command::NoiseSweep { values } => cmd_noise_sweep(cli, values),
        Command::BiasStudy { captions } => cmd_bias_study(cli, *captions),
    }
}

fn require_out(cli: &Cli) -> Result<PathBuf, VcdError> {
    cli.out
        .clone()
        .ok_or_else(|| VcdError::Config("--out is required for this command".into()))
}

/// Effective run configuration: the config file with flag overrides applied.
fn effective_config(cli: &Cli) -> Result<RunConfig, VcdError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| VcdError::Config("--config is required for this command".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(alpha) = cli.alpha {
        config.vcd.alpha = alpha;
    }
    if let Some(beta) = cli.beta {
        config.vcd.beta = beta;
    }
    if let Some(gamma) = cli.gamma {
        config.gamma = gamma;
    }
    if let Some(t) = cli.noise_step {
        config.vcd.noise_step_t = t;
    }
    if let Some(strategy) = &cli.strategy {
        config.strategy = strategy.clone();
    }
    if let Some(setting) = &cli.setting {
        config.settings = if setting == "all" {
            PopeSetting::ALL.to_vec()
        } else {
            vec![setting.parse()?]
        };
    }
    if let Some(runs) = cli.runs {
        config.num_runs = runs;
    }
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn out_base(path: &Path) -> PathBuf {
    if path.extension().map(|e| e == "json" || e == "csv").unwrap_or(false) {
        path.with_extension("")
    } else {
        path.to_path_buf()
    }
}

fn cmd_distort(cli: &Cli, input: &Path, total_steps: usize) -> Result<(), VcdError> {
    let out = require_out(cli)?;
    let t = cli
        .noise_step
        .ok_or_else(|| VcdError::param("noise-step", "required for distort"))?;
    let gamma = cli.gamma.unwrap_or(0.1);
    let seed = cli.seed.unwrap_or(0);
    let mut file = std::fs::File::open(input)
        .map_err(|e| VcdError::Config(format!("{}: {e}", input.display())))?;
    let tensor = Tensor::read_vcdt(&mut file)?;
    let schedule = build_schedule(gamma, total_steps)?;
    let distorted = diffuse_to(&tensor, &schedule, t, &mut rng_from_seed(seed))?;
    let mut bytes = Vec::new();
    distorted.write_vcdt(&mut bytes)?;
    write_atomic(&out, &bytes)?;
    println!(
        "distorted {} (t={t}, gamma={gamma}, seed={seed}) -> {}",
        input.display(),
        out.display()
    );
    Ok(())
}

fn print_outcome(setting: PopeSetting, mode: &str, outcome: &EvalOutcome) {
    let cell = |stat: &vcd::metrics::SummaryStat| match (stat.mean, stat.std) {
        (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "undef".to_string(),
    };
    println!(
        "{:<12} {:<8} acc {}  prec {}  rec {}  f1 {}",
        setting.name(),
        mode,
        cell(&outcome.summary.accuracy),
        cell(&outcome.summary.precision),
        cell(&outcome.summary.recall),
        cell(&outcome.summary.f1),
    );
}

fn cmd_pope(cli: &Cli) -> Result<(), VcdError> {
    let config = effective_config(cli)?;
    let out = config
        .output
        .clone()
        .ok_or_else(|| VcdError::Config("no output path: set `output` in the config or pass --out".into()))?;
    let spec = config.load_model()?;
    let scenes = config.load_scenes(&spec)?;
    let strategy = config.parsed_strategy()?;
    let mut report = PopeReport::new(serde_json::to_value(&config)?);
    for &setting in &config.settings {
        let queries = build_pope_queries_seeded(
            &scenes,
            &spec,
            setting,
            config.queries_per_scene,
            config.master_seed,
        )?;
        let regular = DecodingConfig {
            mode: DecodingMode::Regular,
            strategy: strategy.clone(),
            gamma: config.gamma,
            input_noise_t: 0,
        };
        let vcd_cfg = DecodingConfig {
            mode: DecodingMode::Vcd(config.vcd),
            ..regular.clone()
        };
        let reg_outcome = evaluate(&spec, &queries, &scenes, &regular, config.num_runs, config.master_seed)?;
        let vcd_outcome = evaluate(&spec, &queries, &scenes, &vcd_cfg, config.num_runs, config.master_seed)?;
        print_outcome(setting, "regular", &reg_outcome);
        print_outcome(setting, "vcd", &vcd_outcome);
        report.push_outcome(setting, "regular", &reg_outcome);
        report.push_outcome(setting, "vcd", &vcd_outcome);
    }
    let base = out_base(&out);
    write_atomic(
        &base.with_extension("json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    write_atomic(&base.with_extension("csv"), report.to_csv()?.as_bytes())?;
    println!("report written to {}.{{json,csv}}", base.display());
    Ok(())
}

fn parse_list<T: std::str::FromStr>(values: &str, axis: &str) -> Result<Vec<T>, VcdError> {
    let items: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(VcdError::Config(format!("empty value list for axis {axis}")));
    }
    items
        .into_iter()
        .map(|s| {
            s.parse()
                .map_err(|_| VcdError::Config(format!("bad value {s:?} for axis {axis}")))
        })
        .collect()
}

fn sweep_csv(rows: &[(String, EvalOutcome)]) -> Result<String, VcdError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "point", "accuracy_mean", "accuracy_std", "precision_mean", "precision_std",
        "recall_mean", "recall_std", "f1_mean", "f1_std",
    ])
    .map_err(|e| VcdError::Config(e.to_string()))?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (label, outcome) in rows {
        let s = &outcome.summary;
        w.write_record([
            label.clone(),
            fmt(s.accuracy.mean),
            fmt(s.accuracy.std),
            fmt(s.precision.mean),
            fmt(s.precision.std),
            fmt(s.recall.mean),
            fmt(s.recall.std),
            fmt(s.f1.mean),
            fmt(s.f1.std),
        ])
        .map_err(|e| VcdError::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| VcdError::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| VcdError::Config(e.to_string()))
}

/// Sweeps run on the first configured setting.
fn sweep_queries(
    config: &RunConfig,
    spec: &vcd::toymodel::ToyModelSpec,
    scenes: &[vcd::toymodel::SceneSpec],
) -> Result<(PopeSetting, Vec<vcd::harness::PopeQuery>), VcdError> {
    let setting = config.settings[0];
    let queries = build_pope_queries_seeded(
        scenes,
        spec,
        setting,
        config.queries_per_scene,
        config.master_seed,
    )?;
    Ok((setting, queries))
}

fn cmd_sweep(cli: &Cli, axis: &str, values: &str) -> Result<(), VcdError> {
    let config = effective_config(cli)?;
    let out = require_out(cli)?;
    let spec = config.load_model()?;
    let scenes = config.load_scenes(&spec)?;
    let strategy = config.parsed_strategy()?;
    let (_, queries) = sweep_queries(&config, &spec, &scenes)?;

    if axis == "noise" {
        let t_values: Vec<usize> = parse_list(values, axis)?;
        let regular = DecodingConfig {
            mode: DecodingMode::Regular,
            strategy,
            gamma: config.gamma,
            input_noise_t: 0,
        };
        let sweep = noise_sweep(
            &spec, &queries, &scenes, &t_values, &regular, config.num_runs, config.master_seed,
        )?;
        let rows: Vec<(String, EvalOutcome)> = sweep
            .into_iter()
            .map(|(t, o)| (format!("t={t}"), o))
            .collect();
        for (label, outcome) in &rows {
            println!("{label}: f1 {:?}", outcome.summary.f1.mean);
        }
        write_atomic(&out, sweep_csv(&rows)?.as_bytes())?;
        println!("sweep written to {}", out.display());
        return Ok(());
    }

    let base = config.vcd;
    let points: Vec<SweepPoint> = match axis {
        "alpha" => parse_list::<f64>(values, axis)?
            .into_iter()
            .map(|alpha| SweepPoint {
                label: format!("alpha={alpha}"),
                params: VcdParams { alpha, ..base },
                strategy: strategy.clone(),
            })
            .collect(),
        "beta" => parse_list::<f64>(values, axis)?
            .into_iter()
            .map(|beta| SweepPoint {
                label: format!("beta={beta}"),
                params: VcdParams { beta, ..base },
                strategy: strategy.clone(),
            })
            .collect(),
        "t" => parse_list::<usize>(values, axis)?
            .into_iter()
            .map(|t| SweepPoint {
                label: format!("t={t}"),
                params: VcdParams { noise_step_t: t, ..base },
                strategy: strategy.clone(),
            })
            .collect(),
        "strategy" => {
            let mut points = Vec::new();
            for s in values.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let parsed: SamplingStrategy = s
                    .parse()
                    .map_err(|e: VcdError| VcdError::Config(e.to_string()))?;
                points.push(SweepPoint {
                    label: format!("strategy={parsed}"),
                    params: base,
                    strategy: parsed,
                });
            }
            if points.is_empty() {
                return Err(VcdError::Config("empty value list for axis strategy".into()));
            }
            points
        }
        other => {
            return Err(VcdError::Config(format!(
                "unknown sweep axis {other:?} (expected alpha|beta|t|strategy|noise)"
            )))
        }
    };
    let rows = ablation_sweep(
        &spec, &queries, &scenes, &points, config.gamma, config.num_runs, config.master_seed,
    )?;
    let table: Vec<(String, EvalOutcome)> = rows
        .into_iter()
        .map(|r| (r.label, r.outcome))
        .collect();
    for (label, outcome) in &table {
        println!("{label}: f1 {:?}", outcome.summary.f1.mean);
    }
    write_atomic(&out, sweep_csv(&table)?.as_bytes())?;
    println!("sweep written to {}", out.display());
    Ok(())
}

fn cmd_noise_sweep(cli: &Cli, values: &str) -> Result<(), VcdError> {
    cmd_sweep(cli, "noise", values)
}

fn cmd_bias_study(cli: &Cli, captions: usize) -> Result<(), VcdError> {
    let config = effective_config(cli)?;
    let out = require_out(cli)?;
    let spec = config.load_model()?;
    let scenes = config.load_scenes(&spec)?;
    let t = config.vcd.noise_step_t;
    let report = bias_study(&spec, &scenes, t, captions, config.gamma, config.master_seed)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "object", "prior_freq", "mean_cooc_mass", "hallucination_rate", "opportunities",
        "hallucinations",
    ])
    .map_err(|e| VcdError::Config(e.to_string()))?;
    for row in &report.per_object {
        w.write_record([
            row.object.to_string(),
            row.prior_freq.to_string(),
            row.mean_cooc_mass.to_string(),
            row.hallucination_rate.to_string(),
            row.opportunities.to_string(),
            row.hallucinations.to_string(),
        ])
        .map_err(|e| VcdError::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| VcdError::Config(e.to_string()))?;
    let base = out_base(&out);
    write_atomic(&base.with_extension("csv"), &bytes)?;
    write_atomic(
        &base.with_extension("json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    println!(
        "bias study at t={t}: spearman(prior, rate) = {:.3}, spearman(cooc, rate) = {:.3}",
        report.spearman_prior, report.spearman_cooc
    );
    if let (Some(high), Some(low)) = (report.rate_high_cooc, report.rate_matched_low_cooc) {
        println!(
            "rare paired objects: rate {:.3} vs {:.3} for prior-matched unpaired objects",
            high, low
        );
    }
    println!("report written to {}.{{json,csv}}", base.display());
    Ok(())
}
