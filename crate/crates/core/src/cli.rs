//! The `lac` command line: `gen`, `train`, `align`, `eval` and `gradcheck`.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or invalid
//! parameters, 3 I/O or file-format error, 4 numeric abort.
//!
//! `--config <json>` supplies the subcommand's settings (a `TrainConfig` for
//! `train`, an `ActionSpec` for `gen`, `AlignmentParams` for `align`, an
//! `EvalSettings` for `eval`, a `GradcheckConfig` for `gradcheck`); explicit
//! flags override it and unknown keys are rejected.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, DEFAULT_FRACTIONS, DEFAULT_KS};
use crate::export::export_matrix;
use crate::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::io::{load_dataset, load_labeled, read_json, read_sequence_csv, write_dataset, write_json};
use crate::losses::{IndexScale, LogitsMode, LossMode};
use crate::seqcore::{build_similarity, AlignmentParams, EmbeddingSequence};
use crate::softsw::{sw_backward, sw_forward, sw_hard};
use crate::synth::{generate_split, ActionSpec};
use crate::trainer::{train, Checkpoint, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "lac", version, about = "Differentiable local alignment: data, training, alignment and evaluation")]
pub struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON settings file for the subcommand; flags take precedence.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset (CSV files plus manifest).
    Gen(GenArgs),
    /// Train an encoder on a manifest and write a checkpoint and log.
    Train(TrainArgs),
    /// Align two sequences and export S, D and the expected alignment.
    Align(AlignArgs),
    /// Compute the metric report for a checkpoint.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// ActionSpec JSON (same as --config).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub pairs: usize,
    /// Held-out pairs written to `test_manifest.json`.
    #[arg(long, default_value_t = 0)]
    pub test_pairs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log (JSON lines); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub gap_open: Option<f64>,
    #[arg(long)]
    pub gap_extend: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub crop_len: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_pairs: Option<usize>,
    #[arg(long)]
    pub aug_noise: Option<f64>,
    #[arg(long, value_enum)]
    pub loss_mode: Option<LossMode>,
    #[arg(long)]
    pub learn_gaps: bool,
    /// Gaussian labels on raw frame indices instead of length-normalized ones.
    #[arg(long)]
    pub raw_index_gauss: bool,
    /// Local-consistency logits as a matrix product instead of elementwise.
    #[arg(long)]
    pub logits_matmul: bool,
    /// Evaluate the pairs of each step in parallel (same results).
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Encoder checkpoint; without one, raw observations are aligned.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also compute the hard alignment and write `hard_path.json`.
    #[arg(long)]
    pub hard: bool,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "untrained", required_unless_present = "untrained")]
    pub ckpt: Option<PathBuf>,
    /// Evaluate the initial encoder for `--seed` instead of a checkpoint.
    #[arg(long)]
    pub untrained: bool,
    /// Labeled manifest used to fit the probes.
    #[arg(long)]
    pub data: PathBuf,
    /// Labeled held-out manifest; defaults to the last quarter of `--data`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Settings file for `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub fractions: Vec<f64>,
    pub ks: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            ks: DEFAULT_KS.to_vec(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Shape(_) | Error::MissingPhase(_) => 2,
        Error::Io { .. } | Error::Parse { .. } => 3,
        Error::Numeric { .. } => 4,
    }
}

/// Parses `argv` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Gen(a) => gen(a, config, cli.seed),
        Command::Train(a) => run_train(a, config, cli.seed),
        Command::Align(a) => align(a, config),
        Command::Eval(a) => run_eval(a, config, cli.seed),
        Command::Gradcheck(a) => gradcheck(a, config, cli.seed),
    }
}

fn settings<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn gen(a: &GenArgs, config: Option<&Path>, seed: Option<u64>) -> Result<i32> {
    if a.spec.is_some() && config.is_some() {
        return Err(Error::invalid("--spec and --config both give the action spec; pass one"));
    }
    let spec: ActionSpec = settings(a.spec.as_deref().or(config))?;
    if a.pairs == 0 {
        return Err(Error::invalid("--pairs must be positive"));
    }
    let (train_set, test_set) = generate_split(&spec, a.pairs, a.test_pairs, seed.unwrap_or(0))?;
    let manifest = write_dataset(&a.out, "manifest.json", &train_set)?;
    println!("{}", manifest.display());
    if a.test_pairs > 0 {
        println!("{}", write_dataset(&a.out, "test_manifest.json", &test_set)?.display());
    }
    Ok(0)
}

fn train_config(a: &TrainArgs, config: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut c: TrainConfig = settings(config)?;
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut c.alignment.gamma, a.gamma);
    set(&mut c.alignment.gap_open, a.gap_open);
    set(&mut c.alignment.gap_extend, a.gap_extend);
    set(&mut c.lac.alpha, a.alpha);
    set(&mut c.lac.beta, a.beta);
    set(&mut c.lac.tau, a.tau);
    set(&mut c.lac.sigma, a.sigma);
    set(&mut c.learning_rate, a.lr);
    set(&mut c.aug_noise, a.aug_noise);
    c.crop_len = a.crop_len.unwrap_or(c.crop_len);
    c.epochs = a.epochs.unwrap_or(c.epochs);
    c.batch_pairs = a.batch_pairs.unwrap_or(c.batch_pairs);
    c.loss_mode = a.loss_mode.unwrap_or(c.loss_mode);
    c.seed = seed.unwrap_or(c.seed);
    c.learn_gaps |= a.learn_gaps;
    c.parallel |= a.parallel;
    if a.raw_index_gauss {
        c.lac.index_scale = IndexScale::Raw;
    }
    if a.logits_matmul {
        c.lac.logits = LogitsMode::MatMul;
    }
    c.validate()?;
    Ok(c)
}

fn run_train(a: &TrainArgs, config: Option<&Path>, seed: Option<u64>) -> Result<i32> {
    let cfg = train_config(a, config, seed)?;
    let data: Vec<EmbeddingSequence> = load_dataset(&a.data)?.into_iter().map(|e| e.sequence).collect();
    let out = train(&data, &cfg)?;
    out.checkpoint.save(&a.out)?;
    let log = a.log.clone().unwrap_or_else(|| {
        let mut name = a.out.clone().into_os_string();
        name.push(".log.jsonl");
        PathBuf::from(name)
    });
    fs::write(&log, out.log_jsonl()).map_err(|e| Error::io(&log, e))?;
    if let Some(last) = out.log.last() {
        println!("{}", serde_json::to_string(last).expect("log records serialize"));
    }
    Ok(0)
}

#[derive(Serialize)]
struct AlignSummary {
    score: f64,
    hard_score: Option<f64>,
    gamma: f64,
    gap_open: f64,
    gap_extend: f64,
}

#[derive(Serialize)]
struct PathCell {
    i: usize,
    j: usize,
    step: String,
}

fn align(a: &AlignArgs, config: Option<&Path>) -> Result<i32> {
    let ckpt = a.ckpt.as_deref().map(Checkpoint::load).transpose()?;
    let mut params = match (&ckpt, config) {
        (_, Some(path)) => read_json(path)?,
        (Some(c), None) => c.alignment_params(),
        (None, None) => AlignmentParams::default(),
    };
    if let Some(g) = a.gamma {
        params.gamma = g;
    }
    params.validate()?;
    let mut s1 = read_sequence_csv(&a.a, "a")?;
    let mut s2 = read_sequence_csv(&a.b, "b")?;
    if let Some(c) = &ckpt {
        s1 = c.encoder.encode(&s1)?;
        s2 = c.encoder.encode(&s2)?;
    }
    let sim = build_similarity(&s1, &s2, params.similarity)?;
    let tables = sw_forward(&sim.values, &params)?;
    let grads = sw_backward(&sim.values, &params, &tables, 1.0, None)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    export_matrix(&a.out, "similarity", &sim.values)?;
    export_matrix(&a.out, "dp_d", &tables.interior_d())?;
    export_matrix(&a.out, "alignment", grads.expected_alignment())?;
    let hard_score = if a.hard {
        let hard = sw_hard(&sim.values, params.gap_open, params.gap_extend)?;
        let cells: Vec<PathCell> = hard
            .path
            .iter()
            .map(|c| PathCell {
                i: c.i,
                j: c.j,
                step: format!("{:?}", c.step).to_lowercase(),
            })
            .collect();
        write_json(&a.out.join("hard_path.json"), &cells)?;
        Some(hard.score)
    } else {
        None
    };
    let summary = AlignSummary {
        score: tables.score,
        hard_score,
        gamma: params.gamma,
        gap_open: params.gap_open,
        gap_extend: params.gap_extend,
    };
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(0)
}

fn run_eval(a: &EvalArgs, config: Option<&Path>, seed: Option<u64>) -> Result<i32> {
    let mut s: EvalSettings = settings(config)?;
    if let Some(f) = &a.fractions {
        s.fractions = f.clone();
    }
    if let Some(k) = &a.ks {
        s.ks = k.clone();
    }
    let mut train_set = load_labeled(&a.data)?;
    let test_set = match &a.test {
        Some(t) => load_labeled(t)?,
        None => {
            if train_set.len() < 2 {
                return Err(Error::invalid("--data needs at least 2 sequences when --test is omitted"));
            }
            let held = train_set.len().div_ceil(4);
            train_set.split_off(train_set.len() - held)
        }
    };
    let seed = seed.unwrap_or(0);
    let encoder = match &a.ckpt {
        Some(p) => Checkpoint::load(p)?.encoder,
        None => {
            let cfg = TrainConfig {
                seed,
                ..settings::<TrainConfig>(None)?
            };
            let dim = train_set.first().map_or(0, |s| s.sequence.dim());
            cfg.initial_encoder(dim)
        }
    };
    let embed = |set: &[crate::seqcore::LabeledSequence]| -> Result<Vec<_>> {
        set.iter().map(|s| encoder.encode_labeled(s)).collect()
    };
    let report = evaluate(&embed(&train_set)?, &embed(&test_set)?, &s.fractions, &s.ks, seed)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    eprintln!("{}", report.table());
    Ok(0)
}

fn gradcheck(a: &GradcheckArgs, config: Option<&Path>, seed: Option<u64>) -> Result<i32> {
    let mut c: GradcheckConfig = settings(config)?;
    c.gamma = a.gamma.unwrap_or(c.gamma);
    c.trials = a.trials.unwrap_or(c.trials);
    c.tol = a.tol.unwrap_or(c.tol);
    c.seed = seed.unwrap_or(c.seed);
    let valid = c.gamma > 0.0 && c.tol > 0.0 && c.trials > 0;
    if !valid {
        return Err(Error::invalid("gradcheck needs gamma > 0, trials > 0 and tol > 0"));
    }
    let report = run_gradcheck(&c)?;
    print!("{report}");
    Ok(if report.all_passed() { 0 } else { 1 })
}
