//! The `penhwr` command line.
//!
//! Every option can also be set in a flat TOML file passed with `--config`;
//! flags win over file values. Exit codes: 0 success, 1 runtime or data
//! error, 2 usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::config::{write_file, ConfigError, FileConfig, RunConfig};
use crate::dataset::{self, load_prepared, prepare_sessions, read_sample_csv, write_prepared, DatasetError, PACKED_FILE};
use crate::eval::{run_experiment, top_confusions, EvalError, ExperimentConfig, Protocol, TestFraction};
use crate::ingest::{self, parse_stream, IngestError, IngestMode, LetterCase};
use crate::nn::checkpoint::{self, CheckpointMeta};
use crate::nn::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::nn::train::predict_tensor;
use crate::nn::{train, ModelConfig, NnError, TrainConfig};
use crate::preprocess::{preprocess_frames, NormScope, PreprocessConfig, TensorSample};
use crate::synth::{generate_dataset, list_sessions, write_dataset, CaseSet, GeneratorConfig, SynthError};
use crate::TOOL_VERSION;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(name = "penhwr", version, about = "Letter recognition from a 13-channel sensor pen")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic writers and their recording sessions
    Synth(SynthArgs),
    /// Split recording sessions into per-letter raw samples
    Ingest(IngestArgs),
    /// Ingest and preprocess sessions into a training dataset
    Prep(PrepArgs),
    /// Train a classifier on a prepared dataset
    Train(TrainArgs),
    /// Run the writer-dependent or writer-independent protocol
    Eval(EvalArgs),
    /// Classify letters with a trained model
    Predict(PredictArgs),
    /// Compare backpropagation against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Flat TOML file with option values
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Number of writers [default: 38]
    #[arg(long)]
    writers: Option<usize>,
    /// Repetitions of each letter per writer [default: 6]
    #[arg(long)]
    reps: Option<usize>,
    /// upper, lower or both [default: upper]
    #[arg(long)]
    case: Option<CaseSet>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory of sessions (with sessions.csv or *.stream.csv/*.labels.csv pairs)
    #[arg(long = "in", value_name = "DIR", conflicts_with_all = ["stream", "labels"])]
    input: Option<PathBuf>,
    /// A single session stream CSV
    #[arg(long, value_name = "FILE", requires = "labels")]
    stream: Option<PathBuf>,
    /// Label intervals for --stream
    #[arg(long, value_name = "FILE", requires = "stream")]
    labels: Option<PathBuf>,
    /// Writer id for --stream [default: file name before .stream.csv]
    #[arg(long)]
    writer: Option<String>,
    /// Clamp out-of-range values instead of failing
    #[arg(long)]
    lenient: bool,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PrepArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory of sessions
    #[arg(long = "in", value_name = "DIR")]
    input: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Tip force in N that counts as contact [default: 0.2]
    #[arg(long)]
    force_threshold: Option<f64>,
    /// Shortest accepted letter in frames [default: 10]
    #[arg(long)]
    min_len: Option<usize>,
    /// Longest accepted letter in frames [default: 500]
    #[arg(long)]
    max_len: Option<usize>,
    /// Frames after resampling [default: 50]
    #[arg(long)]
    target_len: Option<usize>,
    /// per_sample or dataset [default: per_sample]
    #[arg(long)]
    normalization: Option<NormScope>,
    #[arg(long)]
    lenient: bool,
}

/// Optimizer and schedule options shared by `train` and `eval`.
#[derive(Debug, Args)]
struct TrainOpts {
    /// [default: 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam step size [default: 0.001]
    #[arg(long, visible_alias = "lr")]
    learning_rate: Option<f64>,
    /// [default: 0.9]
    #[arg(long)]
    beta1: Option<f64>,
    /// [default: 0.999]
    #[arg(long)]
    beta2: Option<f64>,
    /// [default: 1e-8]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Dropout rate after each convolution block [default: 0.4]
    #[arg(long)]
    dropout: Option<f64>,
}

const TRAIN_KEYS: [&str; 7] = ["epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "dropout"];

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Prepared dataset directory
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Checkpoint path
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Training history CSV [default: <out>.history.csv]
    #[arg(long, value_name = "FILE")]
    history: Option<PathBuf>,
    /// upper or lower; required when the dataset holds both
    #[arg(long)]
    case: Option<LetterCase>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Report directory; one subdirectory per case
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// writer-dependent or writer-independent [default: writer-independent]
    #[arg(long)]
    protocol: Option<Protocol>,
    /// upper or lower [default: every case in the dataset]
    #[arg(long)]
    case: Option<LetterCase>,
    /// Base seed for training runs [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Seed for the splits [default: --seed]
    #[arg(long)]
    split_seed: Option<u64>,
    /// Share of writers held out, as a/b or a decimal [default: 24/114]
    #[arg(long)]
    test_fraction: Option<TestFraction>,
    /// Number of largest confusions to print [default: 5]
    #[arg(long)]
    top: Option<usize>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Prepared dataset directory
    #[arg(long, value_name = "DIR", group = "input")]
    data: Option<PathBuf>,
    /// Preprocessed 50×13 sample CSV
    #[arg(long, value_name = "FILE", group = "input")]
    sample: Option<PathBuf>,
    /// Raw single-letter stream CSV, preprocessed before classification
    #[arg(long, value_name = "FILE", group = "input")]
    raw: Option<PathBuf>,
    /// Contact threshold for --raw [default: 0.2]
    #[arg(long)]
    force_threshold: Option<f64>,
    /// Output CSV [default: stdout]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Central difference step [default: 1e-4]
    #[arg(long)]
    step: Option<f64>,
    /// Largest accepted relative error [default: 1e-3]
    #[arg(long)]
    threshold: Option<f64>,
    /// Coordinates sampled per tensor; smaller tensors are checked in full [default: 4096]
    #[arg(long)]
    max_coords: Option<usize>,
    /// JSON report path
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Scale one analytic gradient before comparing (negative control)
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => {
                // Some errors repeat their source in their own message.
                let mut msg = String::new();
                for cause in e.chain().map(|c| c.to_string()) {
                    if !msg.ends_with(&cause) {
                        if !msg.is_empty() {
                            msg.push_str(": ");
                        }
                        msg.push_str(&cause);
                    }
                }
                f.write_str(&msg)
            }
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        usage(e)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::InvalidConfig(_) => usage(e),
            e => CliError::Runtime(e.into()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidRequest(_) | SynthError::InvalidStyle(_) => usage(e),
            e => CliError::Runtime(e.into()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Config(_) => usage(e),
            e => CliError::Runtime(e.into()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidFraction(_) => usage(e),
            EvalError::Nn(e) => e.into(),
            e => CliError::Runtime(e.into()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Prep(a) => cmd_prep(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn file_config(path: Option<&Path>, allowed: &[&str]) -> Result<FileConfig, CliError> {
    let f = FileConfig::load_optional(path)?;
    f.check_keys(allowed)?;
    Ok(f)
}

/// Required path option: flag, else config file, else a usage error.
fn required_path(f: &FileConfig, flag: Option<PathBuf>, key: &str, command: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = flag.or(f.get::<PathBuf>(key)?) {
        return Ok(p);
    }
    let mut cmd = Cli::command();
    cmd.build();
    let sub = cmd.find_subcommand_mut(command).expect("known subcommand");
    let flag = if key == "input" { "in" } else { key };
    Err(CliError::Usage(format!(
        "missing required option --{flag}\n\n{}\nFor more information, try '--help'.",
        sub.render_usage()
    )))
}

fn bool_flag(f: &FileConfig, flag: bool, key: &str) -> Result<bool, CliError> {
    Ok(flag || f.get::<bool>(key)?.unwrap_or(false))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn write_run_config(dir: &Path, run: &RunConfig) -> Result<(), CliError> {
    let path = dir.join(RUN_CONFIG_FILE);
    let text = serde_json::to_string_pretty(run).expect("json") + "\n";
    write_file(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let f = file_config(a.config.as_deref(), &["writers", "reps", "case", "seed", "out"])?;
    let cfg = GeneratorConfig {
        n_writers: f.resolve(a.writers, "writers", 38)?,
        reps_per_letter: f.resolve(a.reps, "reps", 6)?,
        cases: f.resolve_parsed(a.case, "case", CaseSet::Upper)?,
        master_seed: f.resolve(a.seed, "seed", 0)?,
    };
    let out = required_path(&f, a.out, "out", "synth")?;
    cfg.validate()?;
    let run = RunConfig::new("synth")
        .with("writers", cfg.n_writers)
        .with("reps", cfg.reps_per_letter)
        .with("case", cfg.cases)
        .with("seed", cfg.master_seed)
        .with("out", path_str(&out));
    let ds = generate_dataset(&cfg)?;
    write_dataset(&out, &ds)?;
    write_run_config(&out, &run)?;
    println!(
        "wrote {} sessions with {} samples to {}",
        ds.sessions.len(),
        ds.num_samples(),
        out.display()
    );
    Ok(())
}

fn ingest_mode(lenient: bool) -> IngestMode {
    if lenient {
        IngestMode::Lenient
    } else {
        IngestMode::Strict
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<(), CliError> {
    let f = file_config(
        a.config.as_deref(),
        &["input", "stream", "labels", "writer", "lenient", "out"],
    )?;
    let out = required_path(&f, a.out, "out", "ingest")?;
    let lenient = bool_flag(&f, a.lenient, "lenient")?;
    let mode = ingest_mode(lenient);
    let input = a.input.or(f.get("input")?);
    let stream = a.stream.or(f.get("stream")?);
    let labels = a.labels.or(f.get("labels")?);

    let mut run = RunConfig::new("ingest");
    run.set("out", path_str(&out)).set("lenient", lenient);
    // (writer, stream, labels)
    let sessions: Vec<(String, PathBuf, PathBuf)> = match (input, stream, labels) {
        (Some(dir), None, None) => {
            run.set("input", path_str(&dir));
            let list = list_sessions(&dir)?;
            if list.is_empty() {
                return Err(anyhow!("no sessions found in {}", dir.display()).into());
            }
            list.into_iter()
                .map(|e| (e.writer_id, dir.join(e.stream), dir.join(e.labels)))
                .collect()
        }
        (None, Some(stream), Some(labels)) => {
            let writer = match a.writer.or(f.get("writer")?) {
                Some(w) => w,
                None => stream
                    .file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.trim_end_matches(".csv").trim_end_matches(".stream").to_string())
                    .ok_or_else(|| usage("cannot derive a writer id from the stream path; pass --writer"))?,
            };
            run.set("stream", path_str(&stream))
                .set("labels", path_str(&labels))
                .set("writer", &writer);
            vec![(writer, stream, labels)]
        }
        _ => return Err(usage("pass either --in DIR or both --stream and --labels")),
    };

    let samples_dir = out.join(dataset::SAMPLES_DIR);
    if samples_dir.exists() {
        std::fs::remove_dir_all(&samples_dir).with_context(|| format!("clearing {}", samples_dir.display()))?;
    }
    std::fs::create_dir_all(&samples_dir).with_context(|| format!("creating {}", samples_dir.display()))?;
    let mut index = format!("# {TOOL_VERSION}\n# run_config: {}\n", run.to_compact_json());
    index.push_str("sample_id,writer_id,label,case,frames,t_first_ms,t_last_ms\n");
    let (mut total, mut dropped, mut clamped) = (0, 0, 0);
    for (writer, stream, labels) in &sessions {
        let (split, c) = ingest::ingest_session(stream, labels, writer, mode)?;
        dropped += split.dropped;
        clamped += c;
        for s in &split.samples {
            let path = samples_dir.join(format!("{}.csv", s.sample_id()));
            let mut buf = Vec::new();
            ingest::write_stream(&mut buf, &s.frames)?;
            write_file(&path, buf).with_context(|| format!("writing {}", path.display()))?;
            let _ = writeln!(
                index,
                "{},{},{},{},{},{},{}",
                s.sample_id(),
                s.writer_id,
                s.label,
                s.case,
                s.len(),
                s.frames[0].t_ms,
                s.frames[s.len() - 1].t_ms
            );
            total += 1;
        }
    }
    let index_path = out.join("samples.csv");
    write_file(&index_path, index).with_context(|| format!("writing {}", index_path.display()))?;
    println!(
        "ingested {} sessions into {total} samples ({dropped} empty intervals dropped, {clamped} frames clamped)",
        sessions.len()
    );
    Ok(())
}

fn cmd_prep(a: PrepArgs) -> Result<(), CliError> {
    let f = file_config(
        a.config.as_deref(),
        &[
            "input",
            "out",
            "force_threshold",
            "min_len",
            "max_len",
            "target_len",
            "normalization",
            "lenient",
        ],
    )?;
    let input = required_path(&f, a.input, "input", "prep")?;
    let out = required_path(&f, a.out, "out", "prep")?;
    let d = PreprocessConfig::default();
    let cfg = PreprocessConfig {
        force_threshold: f.resolve(a.force_threshold, "force_threshold", d.force_threshold)?,
        min_len: f.resolve(a.min_len, "min_len", d.min_len)?,
        max_len: f.resolve(a.max_len, "max_len", d.max_len)?,
        target_len: f.resolve(a.target_len, "target_len", d.target_len)?,
        normalization: f.resolve_parsed(a.normalization, "normalization", d.normalization)?,
    };
    cfg.validate().map_err(usage)?;
    let lenient = bool_flag(&f, a.lenient, "lenient")?;
    let run = RunConfig::new("prep")
        .with("input", path_str(&input))
        .with("out", path_str(&out))
        .with("preprocess", cfg)
        .with("lenient", lenient);
    let ds = prepare_sessions(&input, &cfg, ingest_mode(lenient))?;
    write_prepared(&out, &ds, &cfg, Some(&run))?;
    let s = &ds.summary;
    println!(
        "accepted {} of {} samples ({:.2}%) into {}",
        s.accepted,
        s.total,
        100.0 * s.acceptance_rate(),
        out.display()
    );
    for (reason, n) in &s.rejected {
        println!("  rejected {reason}: {n}");
    }
    Ok(())
}

fn resolve_train(f: &FileConfig, o: &TrainOpts, seed: u64) -> Result<(ModelConfig, TrainConfig), CliError> {
    let d = TrainConfig::default();
    let train = TrainConfig {
        epochs: f.resolve(o.epochs, "epochs", d.epochs)?,
        batch_size: f.resolve(o.batch_size, "batch_size", d.batch_size)?,
        learning_rate: f.resolve(o.learning_rate, "learning_rate", d.learning_rate)?,
        beta1: f.resolve(o.beta1, "beta1", d.beta1)?,
        beta2: f.resolve(o.beta2, "beta2", d.beta2)?,
        epsilon: f.resolve(o.epsilon, "epsilon", d.epsilon)?,
        seed,
    };
    let model = ModelConfig {
        dropout_rate: f.resolve(o.dropout, "dropout", ModelConfig::default().dropout_rate)?,
        ..ModelConfig::default()
    };
    train.validate()?;
    model.validate()?;
    Ok((model, train))
}

fn load_dataset(dir: &Path) -> Result<dataset::LoadedDataset, CliError> {
    if !dir.join(PACKED_FILE).exists() {
        return Err(anyhow::Error::new(NnError::EmptyDataset)
            .context(format!("no prepared samples in {}", dir.display()))
            .into());
    }
    Ok(load_prepared(dir)?)
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut keys = vec!["data", "out", "history", "case", "seed"];
    keys.extend(TRAIN_KEYS);
    let f = file_config(a.config.as_deref(), &keys)?;
    let data = required_path(&f, a.data, "data", "train")?;
    let out = required_path(&f, a.out, "out", "train")?;
    let history_path = match a.history.or(f.get("history")?) {
        Some(p) => p,
        None => {
            let mut s = out.clone().into_os_string();
            s.push(".history.csv");
            PathBuf::from(s)
        }
    };
    let seed = f.resolve(a.seed, "seed", 0)?;
    let (model_cfg, train_cfg) = resolve_train(&f, &a.opts, seed)?;
    let case: Option<LetterCase> = match a.case {
        Some(c) => Some(c),
        None => f.get_parsed("case")?,
    };

    let ds = load_dataset(&data)?;
    let case = match (case, ds.cases().as_slice()) {
        (Some(c), _) => c,
        (None, []) => return Err(NnError::EmptyDataset.into()),
        (None, [c]) => *c,
        (None, _) => return Err(usage("dataset holds upper- and lowercase letters; choose one with --case")),
    };
    let samples = ds.of_case(case);
    if samples.is_empty() {
        return Err(anyhow::Error::new(NnError::EmptyDataset)
            .context(format!("no {case} samples in {}", data.display()))
            .into());
    }
    let run = RunConfig::new("train")
        .with("data", path_str(&data))
        .with("out", path_str(&out))
        .with("history", path_str(&history_path))
        .with("case", case)
        .with("model", model_cfg)
        .with("train", train_cfg);
    log::info!("training on {} {case} samples for {} epochs", samples.len(), train_cfg.epochs);
    let (params, history) = train::<f32>(&samples, &model_cfg, &train_cfg)?;
    let meta = CheckpointMeta {
        train_config: Some(train_cfg),
        epoch: train_cfg.epochs,
        case: Some(case),
        run_config: Some(run.to_value()),
    };
    let bytes = checkpoint::encode(&params, &meta)?;
    write_file(&out, bytes).with_context(|| format!("writing {}", out.display()))?;
    let csv = format!("# {TOOL_VERSION}\n# run_config: {}\n{}", run.to_compact_json(), history.to_csv());
    write_file(&history_path, csv).with_context(|| format!("writing {}", history_path.display()))?;
    let last = history.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} samples: loss {:.4}, train accuracy {:.4}; wrote {}",
        last.epoch,
        samples.len(),
        last.loss,
        last.accuracy,
        out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let mut keys = vec![
        "data",
        "out",
        "protocol",
        "case",
        "seed",
        "split_seed",
        "test_fraction",
        "top",
    ];
    keys.extend(TRAIN_KEYS);
    let f = file_config(a.config.as_deref(), &keys)?;
    let data = required_path(&f, a.data, "data", "eval")?;
    let out = required_path(&f, a.out, "out", "eval")?;
    let protocol = f.resolve_parsed(a.protocol, "protocol", Protocol::WriterIndependent)?;
    let seed = f.resolve(a.seed, "seed", 0)?;
    let split_seed = f.resolve(a.split_seed, "split_seed", seed)?;
    let test_fraction = f.resolve_parsed(a.test_fraction, "test_fraction", TestFraction::default())?;
    let top = f.resolve(a.top, "top", 5)?;
    let case: Option<LetterCase> = match a.case {
        Some(c) => Some(c),
        None => f.get_parsed("case")?,
    };
    let (model, train) = resolve_train(&f, &a.opts, seed)?;

    let ds = load_dataset(&data)?;
    let cases = match case {
        Some(c) => vec![c],
        None => ds.cases(),
    };
    if cases.is_empty() {
        return Err(NnError::EmptyDataset.into());
    }
    let cfg = ExperimentConfig {
        protocol,
        split_seed,
        test_fraction,
        model,
        train,
    };
    for case in cases {
        let samples = ds.of_case(case);
        if samples.is_empty() {
            return Err(anyhow::Error::new(NnError::EmptyDataset)
                .context(format!("no {case} samples in {}", data.display()))
                .into());
        }
        let dir = out.join(case.as_str());
        let run = RunConfig::new("eval")
            .with("data", path_str(&data))
            .with("out", path_str(&out))
            .with("case", case)
            .with("protocol", protocol)
            .with("seed", seed)
            .with("split_seed", split_seed)
            .with("test_fraction", test_fraction.to_string())
            .with("model", model)
            .with("train", train);
        let report = run_experiment(&samples, &cfg, Some(&run))?;
        report.write_to(&dir)?;
        println!(
            "{protocol} {case}: accuracy {:.4} ± {:.4} over {} runs ({})",
            report.accuracy_mean,
            report.accuracy_std,
            report.runs.len(),
            dir.display()
        );
        for (t, p, n) in top_confusions(&report.confusion, case, top) {
            println!("  {t} -> {p}: {n}");
        }
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let f = file_config(
        a.config.as_deref(),
        &["model", "data", "sample", "raw", "force_threshold", "out"],
    )?;
    let model = required_path(&f, a.model, "model", "predict")?;
    let data = a.data.or(f.get("data")?);
    let sample = a.sample.or(f.get("sample")?);
    let raw = a.raw.or(f.get("raw")?);
    let out = a.out.or(f.get("out")?);
    let pre = PreprocessConfig {
        force_threshold: f.resolve(a.force_threshold, "force_threshold", 0.2)?,
        ..PreprocessConfig::default()
    };
    pre.validate().map_err(usage)?;

    let (header, params) = checkpoint::load(&model).with_context(|| format!("loading {}", model.display()))?;
    let case = header.case.unwrap_or(LetterCase::Upper);
    let mut run = RunConfig::new("predict");
    run.set("model", path_str(&model));
    if let Some(p) = &out {
        run.set("out", path_str(p));
    }
    let stem = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches(".stream").to_string())
            .unwrap_or_default()
    };
    // (sample_id, known label, 50×13 input)
    let inputs: Vec<(String, Option<char>, ndarray::Array2<f64>)> = match (data, sample, raw) {
        (Some(dir), None, None) => {
            run.set("data", path_str(&dir));
            let ds = load_dataset(&dir)?;
            let samples: Vec<TensorSample> = ds.of_case(case);
            if samples.is_empty() {
                return Err(anyhow!("no {case} samples in {}", dir.display()).into());
            }
            samples.into_iter().map(|s| (s.sample_id.clone(), Some(s.label()), s.x)).collect()
        }
        (None, Some(p), None) => {
            run.set("sample", path_str(&p));
            vec![(stem(&p), None, read_sample_csv(&p)?)]
        }
        (None, None, Some(p)) => {
            run.set("raw", path_str(&p)).set("force_threshold", pre.force_threshold);
            let frames = parse_stream(&p)?;
            let x = preprocess_frames(&frames, &pre)
                .map_err(|r| anyhow!("{}: letter rejected by preprocessing ({})", p.display(), r.as_str()))?;
            vec![(stem(&p), None, x)]
        }
        _ => return Err(usage("pass exactly one of --data, --sample or --raw")),
    };
    let (l, c) = (params.config.input_len, params.config.input_channels);
    let mut x = ndarray::Array3::<f32>::zeros((inputs.len(), l, c));
    for (mut dst, (id, _, m)) in x.outer_iter_mut().zip(&inputs) {
        if m.dim() != (l, c) {
            return Err(anyhow!("{id}: input is {:?}, model expects ({l}, {c})", m.dim()).into());
        }
        dst.assign(&m.mapv(|v| v as f32));
    }
    let preds = predict_tensor(&params, x.view())?;

    let mut text = format!("# {TOOL_VERSION}\n# run_config: {}\n", run.to_compact_json());
    text.push_str("sample_id,label,predicted,confidence\n");
    for ((id, label, _), p) in inputs.iter().zip(&preds) {
        let label = label.map(String::from).unwrap_or_default();
        let _ = writeln!(text, "{id},{label},{},{:.6}", case.letter(p.class), p.probs[p.class]);
    }
    match out {
        Some(path) => {
            write_file(&path, text).with_context(|| format!("writing {}", path.display()))?;
            let known: Vec<bool> = inputs
                .iter()
                .zip(&preds)
                .filter_map(|((_, l, _), p)| l.map(|l| l == case.letter(p.class)))
                .collect();
            if !known.is_empty() {
                let acc = known.iter().filter(|&&k| k).count() as f64 / known.len() as f64;
                println!("accuracy {acc:.4} on {} labeled samples", known.len());
            }
            println!("wrote {} predictions to {}", preds.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let f = file_config(
        a.config.as_deref(),
        &["seed", "batch_size", "step", "threshold", "max_coords", "out"],
    )?;
    let d = GradcheckConfig::default();
    let cfg = GradcheckConfig {
        seed: f.resolve(a.seed, "seed", d.seed)?,
        batch_size: f.resolve(a.batch_size, "batch_size", d.batch_size)?,
        step: f.resolve(a.step, "step", d.step)?,
        threshold: f.resolve(a.threshold, "threshold", d.threshold)?,
        max_coords_per_tensor: f.resolve(a.max_coords, "max_coords", d.max_coords_per_tensor)?,
        corrupt_gradient: a.corrupt_gradient,
        ..d
    };
    let out = a.out.or(f.get("out")?);
    let report = run_gradcheck(&cfg)?;
    for t in &report.tensors {
        println!(
            "{:<20} {:>7}/{:<7} max rel err {:.3e}{}",
            t.name,
            t.checked,
            t.size,
            t.max_rel_error,
            if t.kink_refined > 0 {
                format!(" ({} kink-refined)", t.kink_refined)
            } else {
                String::new()
            }
        );
    }
    println!(
        "max relative error {:.6e} (threshold {:e}): {}",
        report.max_rel_error,
        cfg.threshold,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if let Some(path) = out {
        let mut run = RunConfig::new("gradcheck");
        run.set("gradcheck", cfg).set("out", path_str(&path));
        let v = serde_json::json!({
            "tool_version": TOOL_VERSION,
            "report": report,
            "run_config": run,
        });
        write_file(&path, serde_json::to_string_pretty(&v).expect("json") + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(anyhow!("gradient check failed").into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["penhwr", "synth"]), EXIT_USAGE);
        assert_eq!(run(["penhwr", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["penhwr", "synth", "--writers", "many"]), EXIT_USAGE);
        assert_eq!(run(["penhwr", "gradcheck", "--batch-size", "1"]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(["penhwr", "train", "--help"]), EXIT_OK);
    }
}
