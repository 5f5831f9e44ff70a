//! Command-line front end. `main.rs` only forwards to [`run`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{
    encode_all, encode_story, load_task, parse_babi_file, write_babi, EncodeConfig, EncodedStory,
    Split, Story, Variant, Vocabulary, DEFAULT_TASK_PATTERN,
};
use crate::game::{self, Dialog, GameConfig, Hint, NetStudent};
use crate::model::{InitConfig, MemN2N, Mode, ModelConfig, EMBEDDINGS};
use crate::tensor::{finite_diff_check_with, GradCheckReport, Tape};
use crate::train::{
    train_joint, train_task, write_metrics, EpochMetrics, TaskData, TaskStories, TrainConfig,
};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_THRESHOLD: i32 = 4;

/// Accuracy (%) a task must reach to count as passed.
pub const PASS_THRESHOLD: f64 = 95.0;

pub const TASK_NAMES: [&str; 20] = [
    "1 supporting fact",
    "2 supporting facts",
    "3 supporting facts",
    "2 argument relations",
    "3 argument relations",
    "yes/no questions",
    "counting",
    "lists/sets",
    "simple negation",
    "indefinite knowledge",
    "basic coreference",
    "conjunction",
    "compound coreference",
    "time reasoning",
    "basic deduction",
    "basic induction",
    "positional reasoning",
    "size reasoning",
    "path finding",
    "agent's motivation",
];

pub const EVAL_HEADER: &str = "task\tvariant\tmode\tsamples_1\tsamples_10\tnu_A\tnu_B\tnu_C\tpass";
pub const REPORT_HEADER: [&str; 4] = ["Task type", "baseline", "1 sample", "10 samples"];

#[derive(Parser, Debug)]
#[command(
    name = "tmemnn",
    version,
    about = "Memory networks with Student's-t variational embeddings"
)]
pub struct Cli {
    /// Flat `key = value` file with training options; flags win over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on one task, all tasks jointly, or every task separately.
    Train(TrainArgs),
    /// Test accuracy of a checkpoint with 1 and 10 samples.
    Eval(EvalArgs),
    /// Attention per hop for one test story.
    Trace(TraceArgs),
    /// Accuracy table over all tasks from a directory of eval files.
    Report(ReportArgs),
    /// Guess-the-number dialogs.
    #[command(subcommand)]
    Game(GameCommand),
    /// Finite-difference check of the objective's gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Corpus root; falls back to $BABI_ROOT.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long, default_value = "en-1k")]
    pub variant: Variant,
    /// File layout under the root.
    #[arg(long, default_value = DEFAULT_TASK_PATTERN)]
    pub pattern: String,
}

impl DataArgs {
    fn root(&self) -> Result<PathBuf> {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os("BABI_ROOT").map(PathBuf::from))
            .ok_or_else(|| Error::Io {
                path: PathBuf::from("$BABI_ROOT"),
                source: std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "no --data-root given and BABI_ROOT unset",
                ),
            })
    }

    fn load(&self, task: u32, split: Split) -> Result<Vec<Story>> {
        load_task(&self.root()?, &self.pattern, task, self.variant, split)
    }
}

#[derive(Args, Debug, Clone)]
#[command(group(clap::ArgGroup::new("what").required(true).args(["task", "joint", "all_tasks", "train_file"])))]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=20))]
    pub task: Option<u32>,
    /// One network over all 20 tasks.
    #[arg(long)]
    pub joint: bool,
    /// Twenty independent runs, scheduled concurrently.
    #[arg(long)]
    pub all_tasks: bool,
    /// Any file in bAbI line format instead of a corpus task.
    #[arg(long)]
    pub train_file: Option<PathBuf>,
    #[arg(long, requires = "train_file")]
    pub test_file: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "variational")]
    pub mode: Mode,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub prior_nu: Option<f64>,
    #[arg(long)]
    pub memory_size: Option<usize>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=20), required_unless_present = "test_file")]
    pub task: Option<u32>,
    #[arg(long)]
    pub test_file: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory that receives `<checkpoint>.eval.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=20), required_unless_present = "test_file")]
    pub task: Option<u32>,
    #[arg(long)]
    pub test_file: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Index of the story in the test split.
    #[arg(long, default_value_t = 0)]
    pub story: usize,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Directory holding `*.eval.tsv` files.
    pub metrics: PathBuf,
    #[arg(long, default_value = "en-1k")]
    pub variant: Variant,
    /// `tsv` or `text` (aligned columns).
    #[arg(long, default_value = "text")]
    pub format: String,
}

#[derive(Subcommand, Debug)]
pub enum GameCommand {
    /// Write a dialog dataset in bAbI line format.
    Gen(GameGenArgs),
    /// Train (or load) a student and print its metrics.
    Eval(GameEvalArgs),
    /// One transcript, played by a checkpoint or typed at the terminal.
    Play(GamePlayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RangeArgs {
    #[arg(long, default_value_t = 0)]
    pub min: i64,
    #[arg(long, default_value_t = 10)]
    pub max: i64,
    #[arg(long, default_value_t = 100)]
    pub max_tries: usize,
}

impl RangeArgs {
    fn config(&self, n_train: usize) -> Result<GameConfig> {
        let cfg = GameConfig {
            min: self.min,
            max: self.max,
            max_tries: self.max_tries,
            n_train,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
pub struct GameGenArgs {
    #[command(flatten)]
    pub range: RangeArgs,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct GameEvalArgs {
    #[command(flatten)]
    pub range: RangeArgs,
    /// Evaluate this network instead of training one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "variational")]
    pub mode: Mode,
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub games: usize,
    /// Keep the trained network.
    #[arg(long)]
    pub save: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GamePlayArgs {
    #[command(flatten)]
    pub range: RangeArgs,
    /// Without a checkpoint the guesses are read from stdin.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<i64>,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    pub delta: usize,
    #[arg(long, default_value_t = 7)]
    pub vocab: usize,
    #[arg(long, default_value_t = 2)]
    pub hops: usize,
    #[arg(long, default_value_t = 3)]
    pub memory: usize,
    #[arg(long, default_value_t = 4)]
    pub sentence_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "variational")]
    pub mode: Mode,
    /// Perturb one analytic gradient entry before comparing.
    #[arg(long)]
    pub corrupt: bool,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        GradcheckArgs {
            delta: 3,
            vocab: 7,
            hops: 2,
            memory: 3,
            sentence_len: 4,
            seed: 0,
            mode: Mode::Variational,
            corrupt: false,
            tolerance: 1e-4,
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cli, input, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Parse { .. }
        | Error::Encoding(_)
        | Error::Io { .. }
        | Error::Checkpoint(_)
        | Error::Model(_) => EXIT_DATA,
        Error::NumericFault { .. }
        | Error::Domain { .. }
        | Error::Shape { .. }
        | Error::NonConvergent(_) => EXIT_NUMERIC,
    }
}

fn dispatch(
    cli: &Cli,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.config.as_deref(), out, err),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Trace(a) => cmd_trace(a, out),
        Command::Report(a) => cmd_report(a, out),
        Command::Game(GameCommand::Gen(a)) => cmd_game_gen(a, out),
        Command::Game(GameCommand::Eval(a)) => cmd_game_eval(a, cli.config.as_deref(), out, err),
        Command::Game(GameCommand::Play(a)) => cmd_game_play(a, input, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Reads `key = value` lines into `cfg`. Blank lines and `#` comments are
/// skipped.
pub fn apply_config_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected key = value",
                path.display(),
                i + 1
            ))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(())
}

fn resolve_train_config(a: &TrainArgs, file: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = if a.joint {
        TrainConfig::joint()
    } else {
        TrainConfig::default()
    };
    if let Some(p) = file {
        apply_config_file(&mut cfg, p)?;
    }
    if let Some(v) = a.hops {
        cfg.hops = v;
    }
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.prior_nu {
        cfg.prior_nu = v;
    }
    if let Some(v) = a.memory_size {
        cfg.memory_size = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Record of one command invocation and everything it read and wrote.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub hash: String,
}

/// Content hash in git's object framing: `sha256("blob <len>\0" + bytes)`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        hash: content_hash(&bytes),
    })
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::io(path, e.into()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// One line of an eval file.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub task: u32,
    pub variant: Variant,
    pub mode: Mode,
    pub acc_1: f64,
    pub acc_10: f64,
    pub nu: Option<[f64; 3]>,
}

impl EvalRow {
    pub fn passed(&self) -> bool {
        self.acc_10 >= PASS_THRESHOLD
    }

    pub fn tsv_line(&self) -> String {
        let nu = match self.nu {
            Some(v) => v
                .iter()
                .map(|x| format!("{x:.4}"))
                .collect::<Vec<_>>()
                .join("\t"),
            None => "-\t-\t-".to_string(),
        };
        format!(
            "{}\t{}\t{}\t{:.1}\t{:.1}\t{nu}\t{}",
            self.task,
            self.variant,
            self.mode.as_str(),
            self.acc_1,
            self.acc_10,
            if self.passed() { "pass" } else { "fail" }
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Error::Parse {
            line: 0,
            detail: format!("eval row: bad {what} in {line:?}"),
        };
        if f.len() != 9 {
            return Err(bad("column count"));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        let nu = if f[5] == "-" {
            None
        } else {
            Some([num(f[5], "nu_A")?, num(f[6], "nu_B")?, num(f[7], "nu_C")?])
        };
        Ok(EvalRow {
            task: f[0].parse().map_err(|_| bad("task"))?,
            variant: f[1].parse().map_err(|_| bad("variant"))?,
            mode: f[2].parse().map_err(|_| bad("mode"))?,
            acc_1: num(f[3], "samples_1")?,
            acc_10: num(f[4], "samples_10")?,
            nu,
        })
    }
}

fn nu_triplet(net: &MemN2N) -> Option<[f64; 3]> {
    match net.config.mode {
        Mode::Point => None,
        Mode::Variational => Some(EMBEDDINGS.map(|m| net.nu(m).unwrap_or(f64::NAN))),
    }
}

/// Test accuracy in percent with one and ten samples.
pub fn evaluate_stories(net: &MemN2N, test: &[EncodedStory], seed: u64) -> Result<(f64, f64)> {
    let a1 = net.accuracy(test, 1, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let a10 = net.accuracy(test, 10, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok((100.0 * a1, 100.0 * a10))
}

fn encode_for(net: &MemN2N, stories: &[Story]) -> Result<Vec<EncodedStory>> {
    let cfg = EncodeConfig {
        memory_size: net.config.memory_size,
        sentence_len: net.config.sentence_len,
    };
    encode_all(stories, &net.vocab, cfg)
}

fn run_name(what: &str, variant: Variant, mode: Mode) -> String {
    format!("{what}.{variant}.{}", mode.as_str())
}

fn write_eval_file(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut text = String::from(EVAL_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.tsv_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

fn write_metrics_file(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics(&mut buf, history).map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

/// Artifacts of one finished training job.
struct JobOutput {
    name: String,
    rows: Vec<EvalRow>,
    final_metrics: Option<EpochMetrics>,
}

struct Job<'a> {
    name: String,
    cfg: &'a TrainConfig,
    mode: Mode,
    out: &'a Path,
    inputs: Vec<PathBuf>,
    args: Vec<String>,
}

impl Job<'_> {
    fn finish(
        &self,
        started: u64,
        net: &MemN2N,
        history: &[EpochMetrics],
        rows: Vec<EvalRow>,
    ) -> Result<JobOutput> {
        let ckpt = self.out.join(format!("{}.ckpt", self.name));
        let metrics = self.out.join(format!("{}.metrics.tsv", self.name));
        let eval = self.out.join(format!("{}.eval.tsv", self.name));
        net.save(&ckpt)?;
        write_metrics_file(&metrics, history)?;
        let mut outputs = vec![ckpt, metrics];
        if !rows.is_empty() {
            write_eval_file(&eval, &rows)?;
            outputs.push(eval);
        }
        let mut config: BTreeMap<String, String> = self
            .cfg
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        config.insert("mode".into(), self.mode.as_str().into());
        let manifest = RunManifest {
            command: "train".into(),
            args: self.args.clone(),
            config,
            seed: self.cfg.seed,
            inputs: self
                .inputs
                .iter()
                .map(|p| digest_file(p))
                .collect::<Result<_>>()?,
            outputs,
            started_unix: started,
            finished_unix: unix_now(),
        };
        write_manifest(
            &self.out.join(format!("{}.manifest.json", self.name)),
            &manifest,
        )?;
        Ok(JobOutput {
            name: self.name.clone(),
            rows,
            final_metrics: history.last().cloned(),
        })
    }
}

fn cmd_train(
    a: &TrainArgs,
    config_file: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let cfg = resolve_train_config(a, config_file)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut base_inputs: Vec<PathBuf> = config_file.map(Path::to_path_buf).into_iter().collect();

    if let Some(train_path) = &a.train_file {
        let started = unix_now();
        let train = parse_babi_file(train_path)?;
        let test = match &a.test_file {
            Some(p) => parse_babi_file(p)?,
            None => Vec::new(),
        };
        let data = TaskData::prepare(&train, &test, cfg.memory_size, cfg.seed)?;
        let stem = train_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("custom");
        base_inputs.push(train_path.clone());
        base_inputs.extend(a.test_file.clone());
        let job = Job {
            name: format!("{stem}.{}", a.mode.as_str()),
            cfg: &cfg,
            mode: a.mode,
            out: &a.out,
            inputs: base_inputs,
            args,
        };
        let (net, history) = train_task(&data, &cfg, a.mode, |m| {
            if m.epoch == 1 {
                let _ = writeln!(out, "{}", crate::train::METRICS_HEADER);
            }
            let _ = writeln!(out, "{}", m.tsv_line());
        })?;
        job.finish(started, &net, &history, Vec::new())?;
        writeln!(
            out,
            "wrote {}",
            a.out.join(format!("{}.ckpt", job.name)).display()
        )
        .map_err(stdout_err)?;
        return Ok(EXIT_OK);
    }

    if a.joint {
        let started = unix_now();
        let mut tasks = Vec::new();
        let mut inputs = base_inputs;
        let root = a.data.root()?;
        for task in 1..=20u32 {
            for split in [Split::Train, Split::Test] {
                inputs.push(crate::corpus::task_path(
                    &root,
                    &a.data.pattern,
                    task,
                    a.data.variant,
                    split,
                )?);
            }
            tasks.push(TaskStories {
                task,
                train: a.data.load(task, Split::Train)?,
                test: a.data.load(task, Split::Test)?,
            });
        }
        writeln!(out, "{}", crate::train::METRICS_HEADER).map_err(stdout_err)?;
        let (net, history, _) = train_joint(&tasks, &cfg, a.mode, 1, |m| {
            let _ = writeln!(out, "{}", m.tsv_line());
        })?;
        let nu = nu_triplet(&net);
        let mut rows = Vec::new();
        for t in &tasks {
            let (acc_1, acc_10) = evaluate_stories(&net, &encode_for(&net, &t.test)?, cfg.seed)?;
            rows.push(EvalRow {
                task: t.task,
                variant: a.data.variant,
                mode: a.mode,
                acc_1,
                acc_10,
                nu,
            });
        }
        let job = Job {
            name: run_name("joint", a.data.variant, a.mode),
            cfg: &cfg,
            mode: a.mode,
            out: &a.out,
            inputs,
            args,
        };
        let done = job.finish(started, &net, &history, rows)?;
        print_rows(out, &done.rows)?;
        return Ok(EXIT_OK);
    }

    let tasks: Vec<u32> = match a.task {
        Some(t) => vec![t],
        None => (1..=20).collect(),
    };
    let single = tasks.len() == 1;
    let train_one = |task: u32, log: &mut dyn FnMut(&EpochMetrics)| -> Result<JobOutput> {
        let started = unix_now();
        let root = a.data.root()?;
        let mut inputs = base_inputs.clone();
        for split in [Split::Train, Split::Test] {
            inputs.push(crate::corpus::task_path(
                &root,
                &a.data.pattern,
                task,
                a.data.variant,
                split,
            )?);
        }
        let train = a.data.load(task, Split::Train)?;
        let test = a.data.load(task, Split::Test)?;
        let data = TaskData::prepare(&train, &test, cfg.memory_size, cfg.seed)?;
        let (net, history) = train_task(&data, &cfg, a.mode, log)?;
        let (acc_1, acc_10) = evaluate_stories(&net, &data.test, cfg.seed)?;
        let row = EvalRow {
            task,
            variant: a.data.variant,
            mode: a.mode,
            acc_1,
            acc_10,
            nu: nu_triplet(&net),
        };
        let job = Job {
            name: run_name(&format!("task{task:02}"), a.data.variant, a.mode),
            cfg: &cfg,
            mode: a.mode,
            out: &a.out,
            inputs,
            args: args.clone(),
        };
        job.finish(started, &net, &history, vec![row])
    };

    if single {
        let done = train_one(tasks[0], &mut |m| {
            if m.epoch == 1 {
                let _ = writeln!(out, "{}", crate::train::METRICS_HEADER);
            }
            let _ = writeln!(out, "{}", m.tsv_line());
        })?;
        print_rows(out, &done.rows)?;
        return Ok(EXIT_OK);
    }

    let results: Vec<(u32, Result<JobOutput>)> = tasks
        .par_iter()
        .map(|&t| (t, train_one(t, &mut |_| {})))
        .collect();
    let mut rows = Vec::new();
    let mut worst = EXIT_OK;
    for (task, r) in results {
        match r {
            Ok(done) => {
                if let Some(m) = &done.final_metrics {
                    writeln!(
                        err,
                        "{}: final train loss {:.4}, validation accuracy {:.3}",
                        done.name, m.train_loss, m.val_acc
                    )
                    .map_err(stdout_err)?;
                }
                rows.extend(done.rows);
            }
            Err(e) => {
                writeln!(err, "task {task}: {e}").map_err(stdout_err)?;
                worst = worst.max(exit_code(&e));
            }
        }
    }
    print_rows(out, &rows)?;
    Ok(worst)
}

fn print_rows(out: &mut dyn Write, rows: &[EvalRow]) -> Result<()> {
    writeln!(out, "{EVAL_HEADER}").map_err(stdout_err)?;
    for r in rows {
        writeln!(out, "{}", r.tsv_line()).map_err(stdout_err)?;
    }
    Ok(())
}

fn load_test(task: Option<u32>, test_file: Option<&Path>, data: &DataArgs) -> Result<Vec<Story>> {
    match (test_file, task) {
        (Some(p), _) => parse_babi_file(p),
        (None, Some(t)) => data.load(t, Split::Test),
        (None, None) => Err(Error::Config(
            "either --task or --test-file is required".into(),
        )),
    }
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let net = MemN2N::load(&a.checkpoint)?;
    let test = load_test(a.task, a.test_file.as_deref(), &a.data)?;
    let (acc_1, acc_10) = evaluate_stories(&net, &encode_for(&net, &test)?, a.seed)?;
    let row = EvalRow {
        task: a.task.unwrap_or(0),
        variant: a.data.variant,
        mode: net.config.mode,
        acc_1,
        acc_10,
        nu: nu_triplet(&net),
    };
    print_rows(out, std::slice::from_ref(&row))?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let stem = a
            .checkpoint
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("eval");
        write_eval_file(&dir.join(format!("{stem}.eval.tsv")), &[row])?;
    }
    Ok(EXIT_OK)
}

/// Per-hop listing: most attended fact, whether it supports the answer, and
/// its attention weight.
pub fn write_trace(
    out: &mut dyn Write,
    net: &MemN2N,
    story: &Story,
    samples: usize,
    seed: u64,
) -> Result<()> {
    let cfg = EncodeConfig {
        memory_size: net.config.memory_size,
        sentence_len: net.config.sentence_len,
    };
    let enc = encode_story(story, &net.vocab, cfg)?;
    let pred = net.predict(&enc, samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let w = |e: std::io::Error| stdout_err(e);
    for i in enc.first_fact..story.facts.len() {
        writeln!(out, "fact {}\t{}", i + 1, story.fact_text(i)).map_err(w)?;
    }
    writeln!(out, "question\t{}", story.question.join(" ")).map_err(w)?;
    let answer = net.vocab.token(pred.answer).unwrap_or("?");
    writeln!(out, "answer\t{}\tpredicted\t{answer}", story.answer).map_err(w)?;
    for (h, row) in pred.trace.hops.iter().enumerate() {
        let slot = crate::tensor::argmax(row);
        let kind = if enc.supporting_slots.contains(&slot) {
            "supporting"
        } else {
            "other"
        };
        let text = story.fact_text(enc.first_fact + slot);
        writeln!(out, "hop {}\t{text}\t{kind}\t{:.4}", h + 1, row[slot]).map_err(w)?;
    }
    Ok(())
}

fn cmd_trace(a: &TraceArgs, out: &mut dyn Write) -> Result<i32> {
    let net = MemN2N::load(&a.checkpoint)?;
    let test = load_test(a.task, a.test_file.as_deref(), &a.data)?;
    let story = test.get(a.story).ok_or_else(|| {
        Error::Config(format!(
            "story {} out of range (test split has {})",
            a.story,
            test.len()
        ))
    })?;
    write_trace(out, &net, story, a.samples, a.seed)?;
    Ok(EXIT_OK)
}

/// Eval rows found in `dir`, read in file-name order. A later row for the
/// same task and mode replaces an earlier one.
pub fn read_eval_dir(dir: &Path) -> Result<Vec<EvalRow>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".eval.tsv")))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(io_err(&f))?;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line == EVAL_HEADER {
                continue;
            }
            let row = EvalRow::parse(line).map_err(|e| match e {
                Error::Parse { detail, .. } => Error::Parse {
                    line: i + 1,
                    detail: format!("{}: {detail}", f.display()),
                },
                other => other,
            })?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Report cells: task label then baseline, 1-sample and 10-sample accuracy.
pub fn report_table(rows: &[EvalRow], variant: Variant) -> Vec<[String; 4]> {
    let mut base: BTreeMap<u32, f64> = BTreeMap::new();
    let mut var: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.variant == variant && (1..=20).contains(&r.task))
    {
        match r.mode {
            Mode::Point => {
                base.insert(r.task, r.acc_1);
            }
            Mode::Variational => {
                var.insert(r.task, (r.acc_1, r.acc_10));
            }
        }
    }
    let cell = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |x| format!("{x:.1}"));
    let mut table = vec![REPORT_HEADER.map(String::from)];
    let mut passes = [0usize; 3];
    for (i, name) in TASK_NAMES.iter().enumerate() {
        let t = i as u32 + 1;
        let vals = [
            base.get(&t).copied(),
            var.get(&t).map(|v| v.0),
            var.get(&t).map(|v| v.1),
        ];
        for (p, v) in passes.iter_mut().zip(vals) {
            if v.is_some_and(|x| x >= PASS_THRESHOLD) {
                *p += 1;
            }
        }
        table.push([
            format!("{t}: {name}"),
            cell(vals[0]),
            cell(vals[1]),
            cell(vals[2]),
        ]);
    }
    table.push([
        format!("passed (>= {PASS_THRESHOLD:.0}%)"),
        passes[0].to_string(),
        passes[1].to_string(),
        passes[2].to_string(),
    ]);
    table
}

pub fn render_tsv(table: &[[String; 4]]) -> String {
    table.iter().map(|r| r.join("\t") + "\n").collect()
}

pub fn render_aligned(table: &[[String; 4]]) -> String {
    let mut widths = [0usize; 4];
    for row in table {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut s = String::new();
    for row in table {
        let mut line = format!("{:<w$}", row[0], w = widths[0]);
        for (c, w) in row.iter().zip(widths).skip(1) {
            line.push_str(&format!("  {c:>w$}"));
        }
        s.push_str(line.trim_end());
        s.push('\n');
    }
    s
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<i32> {
    let table = report_table(&read_eval_dir(&a.metrics)?, a.variant);
    let text = match a.format.as_str() {
        "tsv" => render_tsv(&table),
        "text" => render_aligned(&table),
        other => {
            return Err(Error::Config(format!(
                "unknown report format {other:?} (tsv | text)"
            )))
        }
    };
    out.write_all(text.as_bytes()).map_err(stdout_err)?;
    Ok(EXIT_OK)
}

fn cmd_game_gen(a: &GameGenArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.range.config(a.n)?;
    let stories = game::generate_dataset(&cfg, a.n, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let mut buf = Vec::new();
    write_babi(&stories, &mut buf).map_err(io_err(&a.out))?;
    fs::write(&a.out, buf).map_err(io_err(&a.out))?;
    writeln!(
        out,
        "wrote {} dialogs to {}",
        stories.len(),
        a.out.display()
    )
    .map_err(stdout_err)?;
    Ok(EXIT_OK)
}

fn cmd_game_eval(
    a: &GameEvalArgs,
    config_file: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let cfg = a.range.config(a.n_train)?;
    let mut train_cfg = TrainConfig::default();
    if let Some(p) = config_file {
        apply_config_file(&mut train_cfg, p)?;
    }
    if let Some(v) = a.epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        train_cfg.lr = v;
    }
    if let Some(v) = a.seed {
        train_cfg.seed = v;
    }
    let net = match &a.checkpoint {
        Some(p) => MemN2N::load(p)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
            let (net, _) = game::train_game(&cfg, &train_cfg, a.mode, &mut rng, |m| {
                let _ = writeln!(err, "{}", m.tsv_line());
            })?;
            if let Some(p) = &a.save {
                net.save(p)?;
            }
            net
        }
    };
    let sample_counts: &[usize] = match net.config.mode {
        Mode::Point => &[1],
        Mode::Variational => &[1, 10],
    };
    for &s in sample_counts {
        let mut student = NetStudent::new(&net, s, ChaCha8Rng::seed_from_u64(train_cfg.seed))?;
        let (m, _) = game::evaluate(
            &mut student,
            &cfg,
            a.games,
            &mut ChaCha8Rng::seed_from_u64(train_cfg.seed),
        )?;
        let label = match net.config.mode {
            Mode::Point => "baseline".to_string(),
            Mode::Variational => format!("variational S={s}"),
        };
        game::write_metrics_block(out, &label, &m).map_err(stdout_err)?;
    }
    Ok(EXIT_OK)
}

fn cmd_game_play(a: &GamePlayArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.range.config(0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let target = match a.target {
        Some(t) if (cfg.min..=cfg.max).contains(&t) => t,
        Some(t) => {
            return Err(Error::Config(format!(
                "target {t} outside {}..={}",
                cfg.min, cfg.max
            )))
        }
        None => rng.random_range(cfg.min..=cfg.max),
    };
    match &a.checkpoint {
        Some(p) => {
            let net = MemN2N::load(p)?;
            let mut student = NetStudent::new(&net, a.samples, rng)?;
            let dialog = game::play_episode(&mut student, &cfg, target)?;
            game::write_transcript(out, net.config.mode.as_str(), cfg.n_train, &dialog)
                .map_err(stdout_err)?;
        }
        None => play_interactive(&cfg, target, input, out)?,
    }
    Ok(EXIT_OK)
}

fn play_interactive(
    cfg: &GameConfig,
    target: i64,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<()> {
    let mut dialog = Dialog::new(*cfg, target);
    let w = |e: std::io::Error| stdout_err(e);
    writeln!(out, "Select a number between {} and {}", cfg.min, cfg.max).map_err(w)?;
    let mut line = String::new();
    while !dialog.solved() && dialog.rounds.len() < cfg.max_tries {
        writeln!(out, "Round: {}", dialog.rounds.len() + 1).map_err(w)?;
        line.clear();
        if input
            .read_line(&mut line)
            .map_err(|e| Error::io("<stdin>", e))?
            == 0
        {
            break;
        }
        let Ok(guess) = line.trim().parse::<i64>() else {
            writeln!(out, "not a number: {:?}", line.trim()).map_err(w)?;
            continue;
        };
        let round = dialog.play(guess);
        let text = match round.hint {
            Hint::Correct => "Correct!".to_string(),
            h => format!("Target is {}", h.word()),
        };
        writeln!(out, "{text}").map_err(w)?;
    }
    if !dialog.solved() {
        writeln!(out, "The number was {target}").map_err(w)?;
    }
    writeln!(out, "Rounds: {}", dialog.rounds.len()).map_err(w)?;
    Ok(())
}

/// Outcome of [`gradient_check`], with the worst entry named.
#[derive(Clone, Debug)]
pub struct GradCheckOutcome {
    pub report: GradCheckReport,
    pub param: String,
}

/// Random network and two random stories over a `vocab`-word vocabulary;
/// compares the objective's analytic gradient with central differences.
pub fn gradient_check(a: &GradcheckArgs) -> Result<GradCheckOutcome> {
    if a.vocab < 2 {
        return Err(Error::Config(
            "gradcheck needs a vocabulary of at least 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let tokens = (0..a.vocab).map(|i| {
        if i == 0 {
            crate::corpus::NIL_TOKEN.to_string()
        } else {
            format!("w{i}")
        }
    });
    let vocab = Vocabulary::from_tokens(tokens.collect())?;
    let config = ModelConfig {
        mode: a.mode,
        dim: a.delta,
        hops: a.hops,
        memory_size: a.memory,
        sentence_len: a.sentence_len,
        prior_nu: 5.0,
    };
    let init = InitConfig {
        weight_std: 0.5,
        sigma: 0.3,
        nu: 6.0,
    };
    let net = MemN2N::init(config, vocab, init, &mut rng)?;
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let len = rng.random_range(1..=a.sentence_len);
        (0..a.sentence_len)
            .map(|j| {
                if j < len {
                    rng.random_range(1..a.vocab)
                } else {
                    0
                }
            })
            .collect()
    };
    let stories: Vec<EncodedStory> = (0..2)
        .map(|_| {
            let n_facts = rng.random_range(1..=a.memory);
            let mut memory = Vec::with_capacity(a.memory * a.sentence_len);
            for slot in 0..a.memory {
                if slot < n_facts {
                    memory.extend(sentence(&mut rng));
                } else {
                    memory.extend(std::iter::repeat_n(0, a.sentence_len));
                }
            }
            EncodedStory {
                memory: memory.into(),
                question: sentence(&mut rng).into(),
                answer: rng.random_range(1..a.vocab),
                n_facts,
                first_fact: 0,
                supporting_slots: vec![0],
                memory_size: a.memory,
                sentence_len: a.sentence_len,
            }
        })
        .collect();
    let noise = net.sample_noise(&mut rng)?;
    let batch: Vec<&EncodedStory> = stories.iter().collect();
    let names: Vec<String> = net.params.names().iter().map(|s| s.to_string()).collect();
    let corrupt = a.corrupt;
    let report = finite_diff_check_with(
        |tape: &mut Tape, vars| {
            net.objective(tape, vars, &noise, &batch, 0.5)
                .map(|(v, _)| v)
        },
        &net.params.tensors(),
        1e-5,
        |g| {
            if corrupt {
                if let Some((_, t)) = g.iter_mut().next() {
                    t.values_mut()[0] += 0.1;
                }
            }
        },
    )?;
    let param = names.get(report.worst.0).cloned().unwrap_or_default();
    Ok(GradCheckOutcome { report, param })
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let GradCheckOutcome { report, param } = gradient_check(a)?;
    let pass = report.max_rel_error < a.tolerance;
    writeln!(
        out,
        "max relative error {:.3e} at {param}[{}] (analytic {:.6e}, numeric {:.6e}) over {} coordinates: {}",
        report.max_rel_error,
        report.worst.1,
        report.analytic,
        report.numeric,
        report.coordinates,
        if pass { "PASS" } else { "FAIL" }
    )
    .map_err(stdout_err)?;
    Ok(if pass { EXIT_OK } else { EXIT_THRESHOLD })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic_location_stories;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("tmemnn").chain(args.iter().copied());
        let code = run(argv, &mut std::io::empty(), &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    fn fake_corpus(dir: &Path, tasks: &[u32]) {
        let sub = dir.join("en");
        fs::create_dir_all(&sub).unwrap();
        for &t in tasks {
            let stories = synthetic_location_stories(120, t as u64);
            for (split, part) in [("train", &stories[..100]), ("test", &stories[100..])] {
                let mut buf = Vec::new();
                write_babi(part, &mut buf).unwrap();
                fs::write(sub.join(format!("qa{t}_synthetic_{split}.txt")), buf).unwrap();
            }
        }
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
        assert_eq!(run_args(&["train"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["train", "--task", "21"]).0, EXIT_USAGE);
        assert_eq!(
            run_args(&["train", "--task", "1", "--mode", "frequentist"]).0,
            EXIT_USAGE
        );
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn missing_data_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_str().unwrap();
        let (code, _, err) =
            run_args(&["train", "--task", "3", "--data-root", root, "--epochs", "1"]);
        assert_eq!(code, EXIT_DATA, "{err}");
        assert!(err.contains("qa3_*_train.txt"), "{err}");
    }

    #[test]
    fn gradcheck_defaults_pass_and_corruption_fails() {
        let (code, out, _) = run_args(&["gradcheck"]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert!(out.ends_with("PASS\n"));
        assert_eq!(run_args(&["gradcheck", "--mode", "baseline"]).0, EXIT_OK);
        let (code, out, _) = run_args(&["gradcheck", "--corrupt"]);
        assert_eq!(code, EXIT_THRESHOLD, "{out}");
        assert!(out.ends_with("FAIL\n"));
    }

    #[test]
    fn config_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        fs::write(&p, "# schedule\nepochs = 7\nlr=0.02\n\nhops = 2\n").unwrap();
        let argv = ["tmemnn", "train", "--task", "1", "--epochs", "9"];
        let Command::Train(a) = Cli::try_parse_from(argv).unwrap().command else {
            panic!()
        };
        let cfg = resolve_train_config(&a, Some(&p)).unwrap();
        assert_eq!((cfg.epochs, cfg.lr, cfg.hops, cfg.delta), (9, 0.02, 2, 20));
        let cfg = resolve_train_config(&a, None).unwrap();
        assert_eq!((cfg.epochs, cfg.lr, cfg.hops), (9, 0.01, 3));
        fs::write(&p, "bogus = 1\n").unwrap();
        assert!(matches!(
            resolve_train_config(&a, Some(&p)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn train_is_reproducible_and_feeds_eval_trace_report() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        fake_corpus(&data, &[1]);
        let d = data.to_str().unwrap();
        let common = [
            "--task",
            "1",
            "--data-root",
            d,
            "--epochs",
            "2",
            "--mode",
            "baseline",
        ];
        let outs = ["a", "b"].map(|n| dir.path().join(n));
        for o in &outs {
            let mut args = vec!["train"];
            args.extend(common);
            args.extend(["--out", o.to_str().unwrap()]);
            let (code, _, err) = run_args(&args);
            assert_eq!(code, EXIT_OK, "{err}");
        }
        let name = "task01.en-1k.baseline";
        let ck: Vec<Vec<u8>> = outs
            .iter()
            .map(|o| fs::read(o.join(format!("{name}.ckpt"))).unwrap())
            .collect();
        assert_eq!(ck[0], ck[1]);
        let metrics = fs::read_to_string(outs[0].join(format!("{name}.metrics.tsv"))).unwrap();
        assert_eq!(metrics.lines().count(), 3);
        let manifest: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(outs[0].join(format!("{name}.manifest.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
        assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
        assert_eq!(manifest["config"]["epochs"], "2");

        let ckpt = outs[0].join(format!("{name}.ckpt"));
        let evdir = dir.path().join("ev");
        let (code, out, err) = run_args(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--task",
            "1",
            "--data-root",
            d,
            "--out",
            evdir.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
        let row = EvalRow::parse(out.lines().nth(1).unwrap()).unwrap();
        assert_eq!((row.task, row.mode, row.nu), (1, Mode::Point, None));
        assert_eq!(row.acc_1, row.acc_10);

        let (code, out, _) = run_args(&[
            "trace",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--task",
            "1",
            "--data-root",
            d,
        ]);
        assert_eq!(code, EXIT_OK);
        let hops: Vec<&str> = out.lines().filter(|l| l.starts_with("hop ")).collect();
        assert_eq!(hops.len(), 3);
        for h in hops {
            let f: Vec<&str> = h.split('\t').collect();
            assert_eq!(f.len(), 4);
            assert!(f[2] == "supporting" || f[2] == "other");
        }

        let (code, r1, _) = run_args(&["report", evdir.to_str().unwrap(), "--format", "tsv"]);
        let (_, r2, _) = run_args(&["report", evdir.to_str().unwrap(), "--format", "tsv"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(r1, r2);
        assert_eq!(r1.lines().count(), 22);
        assert!(r1
            .lines()
            .nth(2)
            .unwrap()
            .starts_with("2: 2 supporting facts\tabsent\tabsent\tabsent"));
    }

    #[test]
    fn report_marks_absent_and_counts_passes() {
        let v = Variant::EN_1K;
        let rows = vec![
            EvalRow {
                task: 1,
                variant: v,
                mode: Mode::Point,
                acc_1: 100.0,
                acc_10: 100.0,
                nu: None,
            },
            EvalRow {
                task: 1,
                variant: v,
                mode: Mode::Variational,
                acc_1: 99.0,
                acc_10: 100.0,
                nu: Some([9.0; 3]),
            },
            EvalRow {
                task: 6,
                variant: v,
                mode: Mode::Variational,
                acc_1: 93.0,
                acc_10: 97.0,
                nu: Some([50.0; 3]),
            },
            EvalRow {
                task: 6,
                variant: v,
                mode: Mode::Point,
                acc_1: 92.0,
                acc_10: 92.0,
                nu: None,
            },
        ];
        let t = report_table(&rows, v);
        assert_eq!(t[0], REPORT_HEADER.map(String::from));
        assert_eq!(
            t[1],
            ["1: 1 supporting fact", "100.0", "99.0", "100.0"].map(String::from)
        );
        assert_eq!(
            t[6],
            ["6: yes/no questions", "92.0", "93.0", "97.0"].map(String::from)
        );
        assert_eq!(t[2][1], "absent");
        assert_eq!(t[21], ["passed (>= 95%)", "1", "1", "2"].map(String::from));
        let text = render_aligned(&t);
        assert!(text.lines().all(|l| !l.contains('\t')));
        assert_eq!(text.lines().count(), 22);
        let tsv = render_tsv(&t);
        assert!(tsv.starts_with("Task type\tbaseline\t1 sample\t10 samples\n"));
    }

    #[test]
    fn eval_row_round_trip() {
        let r = EvalRow {
            task: 14,
            variant: Variant::EN_1K,
            mode: Mode::Variational,
            acc_1: 92.0,
            acc_10: 96.0,
            nu: Some([12.5, 13.0, 99.25]),
        };
        let line = r.tsv_line();
        assert!(line.ends_with("\tpass"));
        assert_eq!(EvalRow::parse(&line).unwrap(), r);
        assert!(EvalRow::parse("1\ten-1k").is_err());
    }

    #[test]
    fn content_hash_matches_git_sha256_framing() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn game_gen_writes_babi() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("games.txt");
        let (code, _, err) = run_args(&["game", "gen", "--n", "50", "--out", p.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK, "{err}");
        let stories = parse_babi_file(&p).unwrap();
        assert_eq!(stories.len(), 50);
        assert!(stories
            .iter()
            .all(|s| s.question.join(" ") == game::QUESTION));
    }

    #[test]
    fn interactive_play_reads_guesses() {
        let mut out = Vec::new();
        let mut input = "5\nx\n2\n1\n".as_bytes();
        let argv = ["tmemnn", "game", "play", "--target", "1"];
        let code = run(argv, &mut input, &mut out, &mut Vec::new());
        assert_eq!(code, EXIT_OK);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("Target is smaller"), "{text}");
        assert!(text.contains("Correct!"));
        assert!(text.ends_with("Rounds: 3\n"), "{text}");
    }
}
