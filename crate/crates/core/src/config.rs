//! Run configuration: a flat text file of `key = value` lines.
//!
//! Grammar: one assignment per line; `#` starts a comment that runs to the
//! end of the line; blank lines are ignored; keys are lowercase identifiers;
//! surrounding whitespace is trimmed. Lists are comma-separated. An unknown
//! key, a repeated key, a malformed value or an out-of-range value is an
//! error. Missing keys take their defaults; `t_s` and `ts_values` default to
//! fractions of `steps` once `steps` is known.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::conditioning::MapMode;
use crate::eval::EvalOptions;
use crate::model::ModelConfig;
use crate::pairing::{DEFAULT_HIGH_MIN, DEFAULT_LOW_MAX};
use crate::trainer::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("`{key}`: cannot parse `{value}` as {expected}")]
    Type {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("`{key}` = {value}: {reason}")]
    Range { key: String, value: String, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelPreset {
    Standard,
    Tiny,
}

impl ModelPreset {
    pub fn config(self, side: usize) -> ModelConfig {
        match self {
            ModelPreset::Standard => ModelConfig::standard(side),
            ModelPreset::Tiny => ModelConfig::tiny_at(side),
        }
    }
}

impl FromStr for ModelPreset {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "standard" => Ok(ModelPreset::Standard),
            "tiny" => Ok(ModelPreset::Tiny),
            _ => Err(()),
        }
    }
}

impl Display for ModelPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelPreset::Standard => "standard",
            ModelPreset::Tiny => "tiny",
        })
    }
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelPreset,
    pub num_sample_steps: usize,
    pub sample_chunk: usize,
    pub eval_seeds: Vec<u64>,
    /// Evaluate at most this many test inputs (0 means all).
    pub eval_limit: usize,
    pub train_triplets: usize,
    pub test_triplets: usize,
    /// Corpus images rendered per generation round.
    pub gen_block: usize,
    pub low_max: f64,
    pub high_min: f64,
    pub ts_values: Vec<usize>,
    pub ablation_seeds: Vec<u64>,
    pub step_cap: u64,
    pub data: PathBuf,
    /// Output directory; each subcommand has its own default when unset.
    pub out: Option<PathBuf>,
    /// Checkpoint to load for `sample`, `eval` and resumed training.
    pub checkpoint: Option<PathBuf>,
    /// Shared starting checkpoint of ablation cells.
    pub warm_start: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            ts_values: default_ts_values(train.steps),
            train,
            model: ModelPreset::Standard,
            num_sample_steps: 50,
            sample_chunk: 8,
            eval_seeds: vec![0],
            eval_limit: 0,
            train_triplets: 2000,
            test_triplets: 200,
            gen_block: 1000,
            low_max: DEFAULT_LOW_MAX,
            high_min: DEFAULT_HIGH_MIN,
            ablation_seeds: vec![0, 1, 2],
            step_cap: 5000,
            data: PathBuf::from("data"),
            out: None,
            checkpoint: None,
            warm_start: None,
        }
    }
}

/// Thresholds at 0.3, 0.6 and 0.9 of `steps`.
pub fn default_ts_values(steps: usize) -> Vec<usize> {
    [0.3, 0.6, 0.9]
        .iter()
        .map(|f| ((f * steps as f64).round() as usize).max(1))
        .collect()
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: [&str; 32] = [
    "steps",
    "t_s",
    "lambda",
    "fold_policy",
    "objective",
    "lr",
    "weight_decay",
    "batch_size",
    "train_steps",
    "seed",
    "checkpoint_every",
    "log_every",
    "side",
    "deterministic",
    "map_mode",
    "model",
    "num_sample_steps",
    "sample_chunk",
    "eval_seeds",
    "eval_limit",
    "train_triplets",
    "test_triplets",
    "gen_block",
    "low_max",
    "high_min",
    "ts_values",
    "ablation_seeds",
    "step_cap",
    "data",
    "out",
    "checkpoint",
    "warm_start",
];

fn parse<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Type {
        key: key.to_owned(),
        value: value.to_owned(),
        expected,
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s, expected))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::Type {
            key: key.to_owned(),
            value: value.to_owned(),
            expected: "a boolean",
        }),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn range(key: &str, value: impl Display, reason: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        key: key.to_owned(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

/// Splits config text into `(key, value)` assignments in file order.
pub fn parse_assignments(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_owned(),
            });
        };
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_owned(),
            });
        }
        out.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(out)
}

impl RunConfig {
    /// Resolves `base` assignments (a config file) then `overrides` (flags).
    /// A key may appear at most once within each layer.
    pub fn resolve(base: &[(String, String)], overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut merged: Vec<(String, String)> = Vec::new();
        for layer in [base, overrides] {
            let mut seen: Vec<&str> = Vec::new();
            for (k, v) in layer {
                if !KEYS.contains(&k.as_str()) {
                    return Err(ConfigError::UnknownKey(k.clone()));
                }
                if seen.contains(&k.as_str()) {
                    return Err(ConfigError::Duplicate(k.clone()));
                }
                seen.push(k);
                merged.retain(|(mk, _)| mk != k);
                merged.push((k.clone(), v.clone()));
            }
        }
        let get = |key: &str| merged.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());

        let mut cfg = RunConfig::default();
        let t = &mut cfg.train;
        if let Some(v) = get("steps") {
            t.steps = parse("steps", v, "an integer")?;
        }
        t.threshold = match get("t_s") {
            Some(v) => parse("t_s", v, "an integer")?,
            None => TrainConfig::default_threshold(t.steps),
        };
        if let Some(v) = get("lambda") {
            t.lambda = parse("lambda", v, "a number")?;
        }
        if let Some(v) = get("fold_policy") {
            t.fold = parse("fold_policy", v, "folded or gated")?;
        }
        if let Some(v) = get("objective") {
            t.objective = parse("objective", v, "dual or reference_only")?;
        }
        if let Some(v) = get("lr") {
            t.lr = parse("lr", v, "a number")?;
        }
        if let Some(v) = get("weight_decay") {
            t.weight_decay = parse("weight_decay", v, "a number")?;
        }
        if let Some(v) = get("batch_size") {
            t.batch_size = parse("batch_size", v, "an integer")?;
        }
        if let Some(v) = get("train_steps") {
            t.total_steps = parse("train_steps", v, "an integer")?;
        }
        if let Some(v) = get("seed") {
            t.seed = parse("seed", v, "an integer")?;
        }
        if let Some(v) = get("checkpoint_every") {
            t.checkpoint_every = parse("checkpoint_every", v, "an integer")?;
        }
        if let Some(v) = get("log_every") {
            t.log_every = parse("log_every", v, "an integer")?;
        }
        if let Some(v) = get("side") {
            t.side = parse("side", v, "an integer")?;
        }
        if let Some(v) = get("deterministic") {
            t.deterministic = parse_bool("deterministic", v)?;
        }
        if let Some(v) = get("map_mode") {
            t.map_mode = MapMode::parse(v).ok_or_else(|| ConfigError::Type {
                key: "map_mode".into(),
                value: v.into(),
                expected: "full, wo_v or wo_t",
            })?;
        }
        if let Some(v) = get("model") {
            cfg.model = parse("model", v, "standard or tiny")?;
        }
        if let Some(v) = get("num_sample_steps") {
            cfg.num_sample_steps = parse("num_sample_steps", v, "an integer")?;
        }
        if let Some(v) = get("sample_chunk") {
            cfg.sample_chunk = parse("sample_chunk", v, "an integer")?;
        }
        if let Some(v) = get("eval_seeds") {
            cfg.eval_seeds = parse_list("eval_seeds", v, "a list of integers")?;
        }
        if let Some(v) = get("eval_limit") {
            cfg.eval_limit = parse("eval_limit", v, "an integer")?;
        }
        if let Some(v) = get("train_triplets") {
            cfg.train_triplets = parse("train_triplets", v, "an integer")?;
        }
        if let Some(v) = get("test_triplets") {
            cfg.test_triplets = parse("test_triplets", v, "an integer")?;
        }
        if let Some(v) = get("gen_block") {
            cfg.gen_block = parse("gen_block", v, "an integer")?;
        }
        if let Some(v) = get("low_max") {
            cfg.low_max = parse("low_max", v, "a number")?;
        }
        if let Some(v) = get("high_min") {
            cfg.high_min = parse("high_min", v, "a number")?;
        }
        cfg.ts_values = match get("ts_values") {
            Some(v) => parse_list("ts_values", v, "a list of integers")?,
            None => default_ts_values(cfg.train.steps),
        };
        if let Some(v) = get("ablation_seeds") {
            cfg.ablation_seeds = parse_list("ablation_seeds", v, "a list of integers")?;
        }
        if let Some(v) = get("step_cap") {
            cfg.step_cap = parse("step_cap", v, "an integer")?;
        }
        if let Some(v) = get("data") {
            cfg.data = PathBuf::from(v);
        }
        if let Some(v) = get("out") {
            cfg.out = optional_path(v);
        }
        if let Some(v) = get("checkpoint") {
            cfg.checkpoint = optional_path(v);
        }
        if let Some(v) = get("warm_start") {
            cfg.warm_start = optional_path(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses config text with flag overrides applied on top.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        Self::resolve(&parse_assignments(text)?, overrides)
    }

    /// Reads `path` (if any) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_owned(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_text(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.train;
        if t.steps < 2 {
            return Err(range("steps", t.steps, "need at least 2"));
        }
        if !(1..=t.steps).contains(&t.threshold) {
            return Err(range("t_s", t.threshold, format!("outside 1..={}", t.steps)));
        }
        if !(t.lambda.is_finite() && t.lambda >= 0.0) {
            return Err(range("lambda", t.lambda, "need finite and non-negative"));
        }
        if !(t.lr.is_finite() && t.lr >= 0.0) {
            return Err(range("lr", t.lr, "need finite and non-negative"));
        }
        if !(t.weight_decay.is_finite() && t.weight_decay >= 0.0) {
            return Err(range("weight_decay", t.weight_decay, "need finite and non-negative"));
        }
        for (key, v) in [
            ("batch_size", t.batch_size),
            ("num_sample_steps", self.num_sample_steps),
            ("sample_chunk", self.sample_chunk),
            ("gen_block", self.gen_block),
        ] {
            if v == 0 {
                return Err(range(key, v, "must be positive"));
            }
        }
        if t.log_every == 0 {
            return Err(range("log_every", 0, "must be positive"));
        }
        if self.num_sample_steps > t.steps {
            return Err(range("num_sample_steps", self.num_sample_steps, format!("exceeds steps = {}", t.steps)));
        }
        let side = t.side;
        let factor = 1usize << self.model.config(side).unet.mults.len().saturating_sub(1);
        if side < 8 || !side.is_multiple_of(factor) {
            return Err(range("side", side, format!("need at least 8 and a multiple of {factor}")));
        }
        if !(self.low_max.is_finite() && self.high_min.is_finite() && self.low_max < self.high_min) {
            return Err(range("low_max", self.low_max, format!("must lie below high_min = {}", self.high_min)));
        }
        if self.eval_seeds.is_empty() {
            return Err(range("eval_seeds", "", "need at least one seed"));
        }
        if self.ablation_seeds.is_empty() {
            return Err(range("ablation_seeds", "", "need at least one seed"));
        }
        if let Some(&v) = self.ts_values.iter().find(|&&v| v == 0 || v > t.steps) {
            return Err(range("ts_values", v, format!("outside 1..={}", t.steps)));
        }
        if self.ts_values.is_empty() {
            return Err(range("ts_values", "", "need at least one value"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.config(self.train.side)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            num_steps: self.num_sample_steps,
            seeds: self.eval_seeds.clone(),
            map_mode: self.train.map_mode,
            chunk: self.sample_chunk,
        }
    }

    /// Every key with its resolved value, in [`KEYS`] order. Parsing the
    /// result yields `self` again.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values: Vec<(&str, String)> = vec![
            ("steps", t.steps.to_string()),
            ("t_s", t.threshold.to_string()),
            ("lambda", t.lambda.to_string()),
            ("fold_policy", t.fold.to_string()),
            ("objective", t.objective.to_string()),
            ("lr", t.lr.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("train_steps", t.total_steps.to_string()),
            ("seed", t.seed.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("log_every", t.log_every.to_string()),
            ("side", t.side.to_string()),
            ("deterministic", t.deterministic.to_string()),
            ("map_mode", t.map_mode.name().to_owned()),
            ("model", self.model.to_string()),
            ("num_sample_steps", self.num_sample_steps.to_string()),
            ("sample_chunk", self.sample_chunk.to_string()),
            ("eval_seeds", join(&self.eval_seeds)),
            ("eval_limit", self.eval_limit.to_string()),
            ("train_triplets", self.train_triplets.to_string()),
            ("test_triplets", self.test_triplets.to_string()),
            ("gen_block", self.gen_block.to_string()),
            ("low_max", self.low_max.to_string()),
            ("high_min", self.high_min.to_string()),
            ("ts_values", join(&self.ts_values)),
            ("ablation_seeds", join(&self.ablation_seeds)),
            ("step_cap", self.step_cap.to_string()),
            ("data", self.data.display().to_string()),
            ("out", path(&self.out)),
            ("checkpoint", path(&self.checkpoint)),
            ("warm_start", path(&self.warm_start)),
        ];
        let mut s = String::new();
        for (k, v) in values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::FoldPolicy;
    use proptest::prelude::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_file_gives_documented_defaults() {
        let c = RunConfig::from_text("", &[]).unwrap();
        assert_eq!(c.train.steps, 1000);
        assert_eq!(c.train.threshold, 900);
        assert_eq!(c.train.lambda, 1.0);
        assert_eq!(c.train.side, 32);
        assert_eq!(c.train.fold, FoldPolicy::Folded);
        assert_eq!(c.num_sample_steps, 50);
        assert!(c.train.deterministic);
        assert_eq!(c.ts_values, vec![300, 600, 900]);
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn flag_overrides_file() {
        let c = RunConfig::from_text("t_s = 900\n", &kv(&[("t_s", "500")])).unwrap();
        assert_eq!(c.train.threshold, 500);
    }

    #[test]
    fn threshold_outside_range_is_rejected() {
        let err = RunConfig::from_text("", &kv(&[("t_s", "2000")])).unwrap_err();
        assert!(matches!(err, ConfigError::Range { ref key, .. } if key == "t_s"), "{err}");
        let err = RunConfig::from_text("t_s = 0", &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Range { .. }));
    }

    #[test]
    fn threshold_follows_steps_when_unset() {
        let c = RunConfig::from_text("steps = 100", &[]).unwrap();
        assert_eq!(c.train.threshold, 90);
        assert_eq!(c.ts_values, vec![30, 60, 90]);
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# header\n\n  lambda = 0.5   # inline\nfold_policy=gated\n";
        let c = RunConfig::from_text(text, &[]).unwrap();
        assert_eq!(c.train.lambda, 0.5);
        assert_eq!(c.train.fold, FoldPolicy::Gated);
    }

    #[test]
    fn errors() {
        assert!(matches!(RunConfig::from_text("bogus = 1", &[]), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::from_text("seed 3", &[]), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::from_text("seed = x", &[]), Err(ConfigError::Type { .. })));
        assert!(matches!(RunConfig::from_text("seed = 1\nseed = 2", &[]), Err(ConfigError::Duplicate(_))));
        assert!(matches!(RunConfig::from_text("deterministic = maybe", &[]), Err(ConfigError::Type { .. })));
        assert!(matches!(RunConfig::from_text("lambda = -1", &[]), Err(ConfigError::Range { .. })));
        assert!(matches!(RunConfig::from_text("side = 30", &[]), Err(ConfigError::Range { .. })));
        assert!(matches!(RunConfig::from_text("low_max = 8", &[]), Err(ConfigError::Range { .. })));
        assert!(matches!(
            RunConfig::from_text("steps = 100\nts_values = 30,600", &[]),
            Err(ConfigError::Range { .. })
        ));
    }

    #[test]
    fn echo_lists_every_key() {
        let text = RunConfig::default().to_text();
        let keys: Vec<String> = parse_assignments(&text).unwrap().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, KEYS.to_vec());
    }

    proptest! {
        #[test]
        fn echo_round_trips(
            steps in 2usize..3000,
            frac in 0.0f64..1.0,
            lambda in 0.0f64..10.0,
            gated in any::<bool>(),
            tiny in any::<bool>(),
            seed in any::<u64>(),
            seeds in proptest::collection::vec(any::<u64>(), 1..4),
            det in any::<bool>(),
            mode in 0usize..3,
            lr in 1e-7f64..1.0,
        ) {
            let t_s = ((frac * steps as f64) as usize).clamp(1, steps);
            let mut c = RunConfig::default();
            c.train.steps = steps;
            c.train.threshold = t_s;
            c.train.lambda = lambda;
            c.train.fold = if gated { FoldPolicy::Gated } else { FoldPolicy::Folded };
            c.train.seed = seed;
            c.train.lr = lr;
            c.train.deterministic = det;
            c.train.map_mode = [MapMode::Full, MapMode::NoVisual, MapMode::NoText][mode];
            c.model = if tiny { ModelPreset::Tiny } else { ModelPreset::Standard };
            c.num_sample_steps = c.num_sample_steps.min(steps);
            c.ts_values = vec![t_s];
            c.eval_seeds = seeds;
            c.checkpoint = Some(PathBuf::from("runs/a/final.diae"));
            let back = RunConfig::from_text(&c.to_text(), &[]).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
