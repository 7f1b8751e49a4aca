//! `mohsm`: synthesize data, train, evaluate and benchmark multi-output GP
//! kernels from the command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use mohsm::data::{Dataset, Input};
use mohsm::gp::posterior;
use mohsm::init::{init_model, window_periodograms};
use mohsm::io::{
    apply_masks, default_cache_dir, fetch_series, load_csv, random_split, save_csv, CsvLayout, CsvSchema,
    ExperimentConfig, FetchOptions, HttpTransport, SeriesSource, TrainedModel,
};
use mohsm::kernel::Method;
use mohsm::metrics::{parse_metric_list, per_channel, Metric, MetricReport};
use mohsm::synth::{generate, run_benchmark, SynthConfig};
use mohsm::trainer::{optimize, Algorithm, TrainConfig};
use mohsm::Error;

/// Exit codes.
const EXIT_CONFIG: u8 = 2;
const EXIT_TRAINING: u8 = 3;
const EXIT_EVALUATION: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "mohsm", version, about = "Multi-output harmonizable spectral mixture GPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic derivative/delay dataset.
    Synth(SynthArgs),
    /// Initialize and train a model from an experiment config.
    Train(TrainArgs),
    /// Score a trained model on held-out data.
    Evaluate(EvaluateArgs),
    /// Run the synthetic benchmark over several trials.
    Bench(BenchArgs),
    /// Download a series into the cache directory.
    Fetch(FetchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// SynthConfig JSON; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// ExperimentConfig JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's method.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Overrides the split seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from a saved model instead of the spectral initialization.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model JSON written by `train`.
    #[arg(long, alias = "spec")]
    model: PathBuf,
    /// Held-out observations.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "long")]
    layout: Layout,
    /// Comma-separated subset of mape,rmse,mae,nmae,nll.
    #[arg(long, default_value = "rmse,nmae,nll")]
    metrics: String,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// SynthConfig JSON; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single method; `--methods` takes precedence.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Comma-separated methods.
    #[arg(long, default_value = "mohsm,mosm")]
    methods: String,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "lbfgs")]
    optimizer: Optimizer,
    #[arg(long, default_value_t = 80)]
    max_iters: usize,
    /// Lower bound on the noise standard deviation, in normalized units.
    #[arg(long, default_value_t = 1e-3)]
    noise_floor: f64,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long)]
    url: String,
    /// File name inside the cache directory.
    #[arg(long)]
    name: String,
    /// Defaults to $MOHSM_CACHE_DIR or ./.mohsm-cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Long,
    Wide,
}

impl From<Layout> for CsvLayout {
    fn from(l: Layout) -> Self {
        match l {
            Layout::Long => CsvLayout::Long,
            Layout::Wide => CsvLayout::Wide,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Adam,
    Lbfgs,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

type CmdResult = Result<Value, Failure>;

/// Exit code of `e` when raised by a command whose own failures map to
/// `stage`.
fn classify(e: &Error, stage: u8) -> u8 {
    match e {
        Error::Config { .. } | Error::Json(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Csv(_) | Error::Parse { .. } | Error::Fetch { .. } => EXIT_IO,
        Error::Metric { .. } => EXIT_EVALUATION,
        _ => stage,
    }
}

trait Stage<T> {
    fn stage(self, code: u8) -> Result<T, Failure>;
}

impl<T> Stage<T> for mohsm::Result<T> {
    fn stage(self, code: u8) -> Result<T, Failure> {
        self.map_err(|error| Failure {
            code: classify(&error, code),
            error,
        })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        error: Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, body: &str) -> Result<(), Failure> {
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure {
        code: EXIT_IO,
        error: e.into(),
    })?;
    write_text(path, &text)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load_synth_config(path: Option<&Path>) -> Result<SynthConfig, Failure> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| Failure {
                code: EXIT_CONFIG,
                error: Error::Config {
                    field: "<document>".into(),
                    reason: e.to_string(),
                },
            })?
        }
        None => SynthConfig::default(),
    };
    cfg.validate().stage(EXIT_CONFIG)?;
    Ok(cfg)
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let mut cfg = load_synth_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let data = generate(&cfg).stage(EXIT_TRAINING)?;
    create_dir(&args.out)?;
    let mut artifacts = Vec::new();
    for (name, part) in [("train.csv", &data.train), ("test.csv", &data.test), ("masked.csv", &data.masked)] {
        let p = args.out.join(name);
        save_csv(part, &p, CsvLayout::Long).stage(EXIT_IO)?;
        artifacts.push(path_str(&p));
    }
    let inputs_path = args.out.join("gram_inputs.csv");
    let mut body = String::from("index,channel,x\n");
    for (k, inp) in data.all.inputs().iter().enumerate() {
        body.push_str(&format!("{k},{},{:?}\n", data.all.channel_names()[inp.channel], inp.x[0]));
    }
    write_text(&inputs_path, &body)?;
    artifacts.push(path_str(&inputs_path));
    let gram_path = args.out.join("gram.csv");
    let mut body = String::with_capacity(data.gram.len() * 24);
    for r in 0..data.gram.nrows() {
        let row: Vec<String> = data.gram.row(r).iter().map(|v| format!("{v:?}")).collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    write_text(&gram_path, &body)?;
    artifacts.push(path_str(&gram_path));
    let config_path = args.out.join("synth_config.json");
    write_json(&config_path, &cfg)?;
    artifacts.push(path_str(&config_path));
    Ok(json!({
        "command": "synth",
        "seed": cfg.seed,
        "counts": {
            "train": data.train.len(),
            "test": data.test.len(),
            "masked": data.masked.len(),
        },
        "artifacts": artifacts,
    }))
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut cfg = ExperimentConfig::load(&args.config).stage(EXIT_CONFIG)?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(seed) = args.seed {
        cfg.split.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    let data = load_csv(&cfg.data.path, &cfg.data.schema()).stage(EXIT_IO)?;
    let masks = cfg.resolve_masks(&data).stage(EXIT_CONFIG)?;
    let (pool, masked) = apply_masks(&data, &masks);
    let (train, test) = if cfg.split.train_fraction < 1.0 {
        random_split(&pool, cfg.split.train_fraction, cfg.split.seed).stage(EXIT_CONFIG)?
    } else {
        let (none, all) = pool.partition(|_, _| true);
        (all, none)
    };
    let heldout = test.concat(&masked).stage(EXIT_CONFIG)?;
    if train.is_empty() {
        return Err(Failure {
            code: EXIT_CONFIG,
            error: Error::config("masks", "no training points remain"),
        });
    }
    let train = if cfg.normalize {
        train.renormalized(train.fit_normalization()).stage(EXIT_CONFIG)?
    } else {
        train
    };

    let init = match &args.init {
        Some(p) => {
            let saved = TrainedModel::load(p).stage(EXIT_CONFIG)?;
            if saved.model.method() != cfg.method {
                return Err(Failure {
                    code: EXIT_CONFIG,
                    error: Error::config(
                        "method",
                        format!("init model is {}, config asks for {}", saved.model.method(), cfg.method),
                    ),
                });
            }
            saved.model
        }
        None => init_model(cfg.method, &train, cfg.p, cfg.q).stage(EXIT_TRAINING)?,
    };
    let (model, report) = optimize(&init, &train, &cfg.train).stage(EXIT_TRAINING)?;

    let out = &cfg.output_dir;
    create_dir(out)?;
    let model_path = out.join("model.json");
    TrainedModel {
        model,
        training_data: train.clone(),
    }
    .save(&model_path)
    .stage(EXIT_IO)?;
    let report_path = out.join("train_report.csv");
    report.write_csv(&report_path).stage(EXIT_IO)?;
    let train_path = out.join("train.csv");
    save_csv(&train, &train_path, CsvLayout::Long).stage(EXIT_IO)?;
    let mut artifacts = vec![path_str(&model_path), path_str(&report_path), path_str(&train_path)];
    if !heldout.is_empty() {
        let p = out.join("heldout.csv");
        save_csv(&heldout, &p, CsvLayout::Long).stage(EXIT_IO)?;
        artifacts.push(path_str(&p));
    }
    let pg_path = out.join("periodograms.csv");
    let windows = if cfg.method == Method::Mosm { 1 } else { cfg.p };
    let mut body = String::from("channel,window,freq,power\n");
    for (c, pg) in window_periodograms(&train, windows).stage(EXIT_TRAINING)? {
        let name = &train.channel_names()[c];
        for (f, p) in pg.freqs.iter().zip(&pg.power) {
            body.push_str(&format!("{name},{},{f:?},{p:?}\n", pg.window_id));
        }
    }
    write_text(&pg_path, &body)?;
    artifacts.push(path_str(&pg_path));
    Ok(json!({
        "command": "train",
        "method": cfg.method.as_str(),
        "n_train": train.len(),
        "n_heldout": heldout.len(),
        "iterations": report.iterations,
        "final_nll": report.final_nll,
        "grad_norm": report.grad_norm,
        "converged": report.converged,
        "rejected_steps": report.rejected_steps,
        "artifacts": artifacts,
    }))
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let metrics = parse_metric_list(&args.metrics).stage(EXIT_CONFIG)?;
    if metrics.is_empty() {
        return Err(Failure {
            code: EXIT_CONFIG,
            error: Error::config("metrics", "empty list"),
        });
    }
    if metrics.contains(&Metric::Cmd) {
        return Err(Failure {
            code: EXIT_EVALUATION,
            error: Error::Metric {
                metric: "cmd",
                reason: "needs a ground-truth covariance; use `bench`".into(),
            },
        });
    }
    let trained = TrainedModel::load(&args.model).stage(EXIT_CONFIG)?;
    let schema = CsvSchema {
        layout: args.layout.into(),
        channels: Some(trained.training_data.channel_names().to_vec()),
    };
    let data = load_csv(&args.data, &schema).stage(EXIT_IO)?;
    if data.is_empty() {
        return Err(Failure {
            code: EXIT_EVALUATION,
            error: Error::InvalidArgument("no held-out points".into()),
        });
    }
    let queries: Vec<Input> = data.inputs();
    let post = posterior(&trained.model, &trained.training_data, &queries, false).stage(EXIT_EVALUATION)?;
    let scale = &trained.training_data.normalization().scale;
    let noise = trained.model.noise();
    let predictive: Vec<f64> = queries
        .iter()
        .zip(&post.variance)
        .map(|(q, v)| v + (noise[q.channel] * scale[q.channel]).powi(2))
        .collect();
    let y_true = data.targets();
    let channels: Vec<usize> = queries.iter().map(|q| q.channel).collect();
    let method = trained.model.method().as_str();
    let mut report = MetricReport::default();
    for &metric in &metrics {
        let values = per_channel(metric, data.channel_names(), &channels, &y_true, &post.mean, &predictive)
            .stage(EXIT_EVALUATION)?;
        for (channel, v) in values {
            report.push(method, metric, &channel, &[v]);
        }
    }
    if let Some(row) = report.rows.iter().find(|r| !r.mean.is_finite()) {
        return Err(Failure {
            code: EXIT_EVALUATION,
            error: Error::InvalidArgument(format!("metric {} on {} is not finite", row.metric, row.channel)),
        });
    }

    create_dir(&args.out)?;
    let report_path = args.out.join("metrics.json");
    write_json(&report_path, &report)?;
    let post_path = args.out.join("posterior.csv");
    write_text(&post_path, &posterior_csv(&data, &queries, &post.mean, &predictive))?;
    Ok(json!({
        "command": "evaluate",
        "method": method,
        "n_points": data.len(),
        "clamped_variances": post.clamped,
        "report": report,
        "artifacts": [path_str(&report_path), path_str(&post_path)],
    }))
}

/// `x, channel, mean, lower95, upper95` with bands `mean -/+ 1.96 sqrt(var)`
/// of the predictive variance.
fn posterior_csv(data: &Dataset, queries: &[Input], mean: &[f64], variance: &[f64]) -> String {
    let mut body = String::from("x,channel,mean,lower95,upper95\n");
    for ((q, m), v) in queries.iter().zip(mean).zip(variance) {
        let half = 1.96 * v.sqrt();
        body.push_str(&format!(
            "{:?},{},{m:?},{:?},{:?}\n",
            q.x[0],
            data.channel_names()[q.channel],
            m - half,
            m + half
        ));
    }
    body
}

fn cmd_bench(args: BenchArgs) -> CmdResult {
    let mut cfg = load_synth_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let methods: Vec<Method> = match args.method {
        Some(m) => vec![m],
        None => args
            .methods
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse())
            .collect::<mohsm::Result<_>>()
            .stage(EXIT_CONFIG)?,
    };
    if methods.is_empty() {
        return Err(Failure {
            code: EXIT_CONFIG,
            error: Error::config("methods", "empty list"),
        });
    }
    let algorithm = match args.optimizer {
        Optimizer::Adam => Algorithm::Adam { learning_rate: 0.02 },
        Optimizer::Lbfgs => Algorithm::Lbfgs { memory: 10 },
    };
    let train = TrainConfig {
        max_iters: args.max_iters,
        algorithm,
        noise_floor: args.noise_floor,
        ..TrainConfig::default()
    };
    let result = run_benchmark(&cfg, &methods, args.trials, &train).stage(EXIT_TRAINING)?;

    create_dir(&args.out)?;
    let mut artifacts = Vec::new();
    for rec in &result.trials {
        let p = args.out.join(format!("trial{}_{}.csv", rec.trial, rec.method));
        let mut body = String::from("x,channel,y_true,y_pred,variance\n");
        for pr in &rec.predictions {
            body.push_str(&format!(
                "{:?},{},{:?},{:?},{:?}\n",
                pr.x,
                mohsm::synth::CHANNELS[pr.channel],
                pr.y_true,
                pr.mean,
                pr.variance
            ));
        }
        write_text(&p, &body)?;
        artifacts.push(path_str(&p));
    }
    let report_path = args.out.join("report.json");
    write_json(&report_path, &result.report)?;
    let trials_path = args.out.join("trials.json");
    write_json(&trials_path, &result.trials)?;
    artifacts.push(path_str(&report_path));
    artifacts.push(path_str(&trials_path));
    let trials: Vec<Value> = result
        .trials
        .iter()
        .map(|t| json!({"trial": t.trial, "seed": t.seed, "method": t.method, "cmd": t.cmd, "final_nll": t.final_nll}))
        .collect();
    Ok(json!({
        "command": "bench",
        "report": result.report,
        "trials": trials,
        "incomplete": result.report.incomplete(),
        "artifacts": artifacts,
    }))
}

fn cmd_fetch(args: FetchArgs) -> CmdResult {
    let cache = args.cache_dir.unwrap_or_else(default_cache_dir);
    let source = SeriesSource {
        url: args.url,
        file_name: args.name,
    };
    let path = fetch_series(&source, &cache, &HttpTransport, &FetchOptions::default()).stage(EXIT_IO)?;
    Ok(json!({"command": "fetch", "path": path_str(&path)}))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Fetch(a) => cmd_fetch(a),
    };
    match outcome {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(classify(&Error::config("p", "bad"), EXIT_TRAINING), EXIT_CONFIG);
        let abort = Error::OptimizerAbort {
            iterations: 3,
            reason: "x".into(),
        };
        assert_eq!(classify(&abort, EXIT_TRAINING), EXIT_TRAINING);
        let metric = Error::Metric {
            metric: "mape",
            reason: "zero".into(),
        };
        assert_eq!(classify(&metric, EXIT_TRAINING), EXIT_EVALUATION);
        let io = Error::Io {
            path: "a".into(),
            source: std::io::Error::other("x"),
        };
        assert_eq!(classify(&io, EXIT_EVALUATION), EXIT_IO);
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(parse_method(m.as_str()).unwrap(), m);
        }
        assert!(parse_method("gp").is_err());
    }
}
