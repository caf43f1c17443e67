//! Command-line front end. [`run`] returns the process exit code:
//! 0 success, 1 usage, 2 data error, 3 model error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use intentd_core::corpus::{
    bundled_dataset, load_dataset, save_dataset, stratified_split, CorpusError, Dataset,
};
use intentd_core::dispatch::{
    classify_instruction, decide, Controller, DeviceStore, IntentRegistry,
};
use intentd_core::metrics::classification_report;
use intentd_core::neural::PenaltyScope;
use intentd_core::trainer::{
    evaluate, export_history, load_checkpoint, save_checkpoint, train, Checkpoint, Profile,
    TrainConfig,
};

use crate::api::{MetricsSummary, Prediction};
use crate::config::{ServiceConfig, CONFIG_ENV};
use crate::server::{self, AppState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "intentd",
    version,
    about = "Intent classification and appliance dispatch"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus per-epoch history CSV
    Train(TrainArgs),
    /// Print a classification report and write the confusion matrix CSV
    Evaluate(EvaluateArgs),
    /// Classify one instruction and print intent, confidence and outcome as JSON
    Predict(PredictArgs),
    /// Read instructions from stdin and print one feedback event per line
    Repl(ReplArgs),
    /// Run the HTTP service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSONL dataset path, or `bundled`
    #[arg(long)]
    pub data: String,
    #[arg(long, default_value = "regularized")]
    pub profile: Profile,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV path [default: <out>.history.csv]
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Fraction held out per label for validation
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Write the training split here as JSONL
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    /// Write the held-out split here as JSONL
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Override the profile's epoch count
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Which weights carry the L2 penalty: lstm_kernels or all_weights
    #[arg(long)]
    pub l2_scope: Option<PenaltyScope>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSONL dataset path, or `bundled`
    #[arg(long)]
    pub data: String,
    /// Evaluate only the held-out part of a split made with the model's seed
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    /// Confusion matrix CSV path [default: <model>.confusion.csv]
    #[arg(long)]
    pub confusion: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegistryArgs {
    /// Registry JSON path [default: bundled registry]
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Override the registry's confidence threshold
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, Args)]
pub struct ReplArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub registry: RegistryArgs,
    /// Append events to this JSONL log
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// JSON config file [default: $INTENTD_CONFIG]
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Dataset evaluated at start-up for /api/metrics (path or `bundled`)
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub event_log: Option<PathBuf>,
    /// Address to bind [default: 127.0.0.1:8080]
    #[arg(long)]
    pub listen: Option<String>,
    /// Allowed CORS origin, or `*`
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Model(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Model(_) => EXIT_MODEL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Model(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn model_err(e: impl std::fmt::Display) -> CliError {
    CliError::Model(e.to_string())
}

type CliResult = Result<(), CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(
    args: I,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, stdout),
        Command::Evaluate(a) => cmd_evaluate(a, stdout),
        Command::Predict(a) => cmd_predict(a, stdout),
        Command::Repl(a) => cmd_repl(a, stdin, stdout),
        Command::Serve(a) => cmd_serve(a, stderr),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.code()
        }
    }
}

pub fn load_data(spec: &str) -> Result<Dataset, CorpusError> {
    if spec == "bundled" {
        Ok(bundled_dataset())
    } else {
        load_dataset(spec)
    }
}

/// `model.ckpt` + `history.csv` -> `model.history.csv`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load_model(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))
}

fn load_registry(args: &RegistryArgs) -> Result<IntentRegistry, CliError> {
    let reg = match &args.registry {
        Some(p) => {
            IntentRegistry::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => IntentRegistry::bundled(),
    };
    match args.threshold {
        Some(t) => reg
            .with_threshold(t)
            .map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(reg),
    }
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Data(format!("writing output: {e}"))
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> CliResult {
    let data = load_data(&a.data).map_err(data_err)?;
    let (train_set, test_set) =
        stratified_split(&data, a.test_fraction, a.seed).map_err(data_err)?;
    let mut cfg = TrainConfig::for_profile(a.profile, a.seed);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.l2_scope {
        cfg.l2_scope = s;
    }
    let outcome = train(&cfg, &train_set, &test_set).map_err(model_err)?;
    save_checkpoint(&outcome.checkpoint, &a.out).map_err(model_err)?;
    let history = a.history.unwrap_or_else(|| sibling(&a.out, "history.csv"));
    export_history(&outcome.history, &history).map_err(data_err)?;
    if let Some(p) = &a.train_out {
        save_dataset(&train_set, p).map_err(data_err)?;
    }
    if let Some(p) = &a.test_out {
        save_dataset(&test_set, p).map_err(data_err)?;
    }
    let last = outcome.history.last().expect("at least one epoch");
    writeln!(
        out,
        "trained {} (seed {}) on {} items, validated on {}",
        cfg.profile,
        cfg.seed,
        train_set.len(),
        test_set.len()
    )
    .map_err(out_err)?;
    writeln!(
        out,
        "epoch {}: train loss {:.4} acc {:.2}%, val loss {:.4} acc {:.2}%",
        last.epoch,
        last.train_loss,
        last.train_accuracy * 100.0,
        last.val_loss,
        last.val_accuracy * 100.0
    )
    .map_err(out_err)?;
    writeln!(out, "checkpoint: {}", a.out.display()).map_err(out_err)?;
    writeln!(out, "history: {}", history.display()).map_err(out_err)?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult {
    let ckpt = load_model(&a.model)?;
    let mut data = load_data(&a.data).map_err(data_err)?;
    if let Some(f) = a.holdout_fraction {
        data = stratified_split(&data, f, ckpt.seed).map_err(data_err)?.1;
    }
    let result = evaluate(&ckpt, &data).map_err(|e| match e {
        intentd_core::trainer::TrainError::UnknownLabel(_)
        | intentd_core::trainer::TrainError::EmptyData(_) => data_err(e),
        other => model_err(other),
    })?;
    let confusion = a
        .confusion
        .unwrap_or_else(|| sibling(&a.model, "confusion.csv"));
    fs::write(&confusion, result.matrix.to_csv())
        .map_err(|e| CliError::Data(format!("{}: {e}", confusion.display())))?;
    write!(out, "{}", classification_report(&result)).map_err(out_err)?;
    writeln!(out, "confusion matrix: {}", confusion.display()).map_err(out_err)?;
    Ok(())
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> CliResult {
    let ckpt = load_model(&a.model)?;
    let reg = load_registry(&a.registry)?;
    let classified = classify_instruction(&a.text, &ckpt);
    let mut store = DeviceStore::from_registry(&reg);
    let d = decide(&classified, &reg, &mut store, 0);
    if d.classification_failed {
        return Err(CliError::Model(d.message));
    }
    let json =
        serde_json::to_string(&Prediction::new(&classified, d.outcome)).expect("serializable");
    writeln!(out, "{json}").map_err(out_err)
}

fn cmd_repl(a: ReplArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> CliResult {
    let ckpt = load_model(&a.model)?;
    let reg = load_registry(&a.registry)?;
    let mut controller = Controller::new(reg);
    if let Some(p) = &a.event_log {
        controller = controller.with_log(p).map_err(data_err)?;
    }
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line).map_err(data_err)? == 0 {
            break;
        }
        let text = line.trim_end_matches(['\n', '\r']);
        if matches!(text.trim(), "quit" | "exit") {
            break;
        }
        let h = controller
            .handle_instruction(text, &ckpt)
            .map_err(data_err)?;
        let json = serde_json::to_string(&h.event).expect("serializable");
        writeln!(out, "{json}").map_err(out_err)?;
        out.flush().map_err(out_err)?;
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs, err: &mut dyn Write) -> CliResult {
    let config_path = a
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let file = match &config_path {
        Some(p) => ServiceConfig::load(p).map_err(|e| CliError::Usage(format!("{e:#}")))?,
        None => ServiceConfig::default(),
    };
    let cfg = file.merged(ServiceConfig {
        listen: a.listen,
        checkpoint: a.model,
        registry: a.registry,
        dataset: a.data,
        event_log: a.event_log,
        cors_allow_origin: a.cors_origin,
    });
    let Some(model_path) = cfg.checkpoint.clone() else {
        return Err(CliError::Usage(
            "serve needs --model or a config file with `checkpoint`".into(),
        ));
    };
    let ckpt = load_model(&model_path)?;
    let reg = load_registry(&RegistryArgs {
        registry: cfg.registry.clone(),
        threshold: None,
    })?;
    let metrics = match &cfg.dataset {
        Some(spec) => {
            let data = load_data(spec).map_err(data_err)?;
            let r = evaluate(&ckpt, &data).map_err(data_err)?;
            Some(MetricsSummary::new(spec.clone(), &r))
        }
        None => None,
    };
    let log_path = cfg.event_log_path();
    let controller = Controller::new(reg).with_log(&log_path).map_err(data_err)?;
    let state = Arc::new(AppState::new(ckpt, controller, metrics));
    let app = server::router(state, cfg.cors_allow_origin.as_deref())
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(cfg.listen_addr())
            .await
            .map_err(|e| CliError::Usage(format!("binding {}: {e}", cfg.listen_addr())))?;
        let addr = listener.local_addr().map_err(data_err)?;
        let _ = writeln!(
            err,
            "listening on http://{addr} (event log {})",
            log_path.display()
        );
        server::run(listener, app).await.map_err(data_err)
    })
}
