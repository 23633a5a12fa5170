//! Command-line front end: argument parsing, configuration resolution and
//! dispatch to the pipeline stages.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_assignments, RunConfig};

pub use commands::{check_compatible, load_model, CONFIG_SUFFIX};

/// Environment variable that overrides the worker thread count.
pub const THREADS_ENV: &str = "AESTHETE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "aesthete", version, about = "Dual-branch diffusion for image aesthetic enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

/// Flags shared by every subcommand; each one overrides the config key of
/// the same name.
#[derive(Clone, Debug, Default, Args)]
pub struct Flags {
    /// Config file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Input-branch threshold.
    #[arg(long = "t-s", global = true, value_name = "N")]
    pub t_s: Option<usize>,
    #[arg(long, global = true, value_name = "F")]
    pub lambda: Option<f64>,
    #[arg(long = "fold-policy", global = true, value_name = "folded|gated")]
    pub fold_policy: Option<String>,
    /// Diffusion steps.
    #[arg(long, global = true, value_name = "N")]
    pub steps: Option<usize>,
    /// Optimizer updates.
    #[arg(long = "train-steps", global = true, value_name = "N")]
    pub train_steps: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    pub side: Option<usize>,
    #[arg(long = "num-sample-steps", global = true, value_name = "N")]
    pub num_sample_steps: Option<usize>,
    #[arg(long, global = true, value_name = "BOOL", action = ArgAction::Set)]
    pub deterministic: Option<bool>,
    /// Corpus directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Any other config key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic corpus generation.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Imperfect pair formation.
    Pairs {
        #[command(subcommand)]
        action: PairsAction,
    },
    /// Train the denoiser and adapter.
    Train {
        /// Continue from this checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Enhance held-out inputs and write the images.
    Sample,
    /// Enhance and score held-out inputs.
    Eval,
    /// Ablation grids.
    Ablate {
        #[command(subcommand)]
        action: AblateAction,
    },
    /// Built-in numerical checks.
    Selftest {
        #[command(subcommand)]
        action: SelftestAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetAction {
    /// Render scenes until the triplet targets can be met.
    Gen,
}

#[derive(Debug, Subcommand)]
pub enum PairsAction {
    /// Pair the corpus and split it into train and test sets.
    Form,
}

#[derive(Debug, Subcommand)]
pub enum AblateAction {
    /// Input-branch threshold sweep.
    Ts,
    /// Conditioning modality ablation.
    Map,
}

#[derive(Debug, Subcommand)]
pub enum SelftestAction {
    /// Analytic against finite-difference gradients.
    Grad,
    /// Noise schedule, forward process and zero-init identity.
    Diffusion,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dataset { .. } => "dataset gen",
            Command::Pairs { .. } => "pairs form",
            Command::Train { .. } => "train",
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::Ablate { action: AblateAction::Ts } => "ablate ts",
            Command::Ablate { action: AblateAction::Map } => "ablate map",
            Command::Selftest { action: SelftestAction::Grad } => "selftest grad",
            Command::Selftest { action: SelftestAction::Diffusion } => "selftest diffusion",
        }
    }

    /// Checkpoint whose embedded configuration seeds this command's config.
    fn inherited_checkpoint<'a>(&'a self, cfg: &'a RunConfig) -> Option<&'a Path> {
        match self {
            Command::Train { resume } => resume.as_deref(),
            Command::Sample | Command::Eval => cfg.checkpoint.as_deref(),
            _ => None,
        }
    }
}

impl Flags {
    /// The flags as config assignments.
    pub fn overrides(&self) -> anyhow::Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_owned(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        push("out", path(&self.out));
        push("seed", self.seed.map(|v| v.to_string()));
        push("t_s", self.t_s.map(|v| v.to_string()));
        push("lambda", self.lambda.map(|v| v.to_string()));
        push("fold_policy", self.fold_policy.clone());
        push("steps", self.steps.map(|v| v.to_string()));
        push("train_steps", self.train_steps.map(|v| v.to_string()));
        push("side", self.side.map(|v| v.to_string()));
        push("num_sample_steps", self.num_sample_steps.map(|v| v.to_string()));
        push("deterministic", self.deterministic.map(|v| v.to_string()));
        push("data", path(&self.data));
        push("checkpoint", path(&self.checkpoint));
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got `{s}`"))?;
            out.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        Ok(out)
    }
}

/// Keys of a checkpoint's configuration that a later command never inherits.
const LOCAL_KEYS: [&str; 3] = ["out", "checkpoint", "warm_start"];

/// Resolves the configuration of `command`: an inherited checkpoint's
/// embedded config (if any), then the config file, then the flags.
pub fn resolve_config(command: &Command, flags: &Flags) -> anyhow::Result<RunConfig> {
    let file = match &flags.config {
        Some(p) => parse_assignments(
            &std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?,
        )?,
        None => Vec::new(),
    };
    let overrides = flags.overrides()?;
    let first = RunConfig::resolve(&file, &overrides)?;
    let Some(ckpt) = command.inherited_checkpoint(&first) else {
        return Ok(first);
    };
    let text = Checkpoint::load(ckpt)
        .map_err(|e| anyhow::anyhow!("{}: {e}", ckpt.display()))?
        .config_text;
    let mut inherited = parse_assignments(&text)?;
    inherited.retain(|(k, _)| !LOCAL_KEYS.contains(&k.as_str()));
    let mut layered = inherited;
    for (k, v) in file {
        layered.retain(|(ik, _)| *ik != k);
        layered.push((k, v));
    }
    Ok(RunConfig::resolve(&layered, &overrides)?)
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool built earlier in the process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status: 0 on success, 1 on a failed run or check, 2 on a
/// usage error.
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
    configure_threads();
    let name = cli.command.name();
    let result = resolve_config(&cli.command, &cli.flags).and_then(|cfg| commands::dispatch(&cli.command, &cfg));
    match result {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("{name}: check failed");
            1
        }
        Err(e) => {
            eprintln!("{name}: {e:#}");
            1
        }
    }
}
