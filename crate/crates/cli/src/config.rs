//! Effective run configuration: command-line flags over an optional
//! `key = value` file over built-in defaults.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use mise_core::data::{CorpusFormat, FieldMap, SynthConfig};
use mise_core::meta::{KiReduction, TrainConfig};
use mise_core::Error;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::report::ReportFormat;

pub const SEED_ENV: &str = "MISE_LAB_SEED";

/// Shot counts evaluated when none are given.
pub const DEFAULT_EVAL_SHOTS: [usize; 3] = [3, 5, 10];

/// Flags shared by every subcommand. Each one can also be set from the
/// configuration file under its long name.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Corpus to read (written by `synth`)
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Corpus format: jsonl or conll
    #[arg(long, global = true)]
    pub format: Option<CorpusFormat>,
    /// JSONL field holding the tokens
    #[arg(long, global = true)]
    pub tokens_field: Option<String>,
    /// JSONL field holding the tags
    #[arg(long, global = true)]
    pub tags_field: Option<String>,
    /// JSONL field holding the period label
    #[arg(long, global = true)]
    pub period_field: Option<String>,
    /// Precomputed token representations; replaces the trainable encoder
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Shot count; repeat or comma-separate to evaluate several
    #[arg(long, global = true, value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Test episodes per shot count
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Inner-loop and adaptation learning rate
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Outer learning rate
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Weight of the inheritance loss
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Softmax temperature of the soft labels
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub adapt_steps: Option<usize>,
    #[arg(long, global = true)]
    pub inner_steps: Option<usize>,
    #[arg(long, global = true)]
    pub meta_batch: Option<usize>,
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    /// Validation or query posts per task
    #[arg(long, global = true)]
    pub eval_size: Option<usize>,
    #[arg(long, global = true)]
    pub weight_decay: Option<f64>,
    /// Reduction of the inheritance loss over query posts: sum or post-mean
    #[arg(long, global = true)]
    pub ki_reduction: Option<KiReduction>,
    #[arg(long, global = true)]
    pub snapshot_every: Option<usize>,
    /// Base seed; falls back to MISE_LAB_SEED, then 42
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Threads for parallel episodes and repeats
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Model checkpoint (written by `train`, read by the others)
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output file; standard output when absent
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Where `adapt` writes the adapted model
    #[arg(long, global = true)]
    pub save: Option<PathBuf>,
    /// Report format: json or text
    #[arg(long, global = true)]
    pub report_format: Option<ReportFormat>,
    /// Repeats of the forgetting study
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// Fraction of past posts held out by the forgetting study
    #[arg(long, global = true)]
    pub holdout: Option<f64>,
    /// Latest-period tasks adapted on per forgetting repeat
    #[arg(long, global = true)]
    pub tasks_per_repeat: Option<usize>,
    #[arg(long, global = true)]
    pub vocab_size: Option<usize>,
    #[arg(long, global = true)]
    pub num_classes: Option<usize>,
    #[arg(long, global = true)]
    pub novel_classes: Option<usize>,
    #[arg(long, global = true)]
    pub num_periods: Option<usize>,
    #[arg(long, global = true)]
    pub posts_per_period: Option<usize>,
    #[arg(long, global = true)]
    pub novel_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub zipf_exponent: Option<f64>,
    /// Train the supervised baseline instead of meta-training
    #[arg(long, global = true)]
    pub no_meta: bool,
    /// Forbid BIOES-invalid transitions while decoding
    #[arg(long, global = true)]
    pub constrain_decode: bool,
    /// Score any non-O prediction on a non-O token as correct
    #[arg(long, global = true)]
    pub binary_token_metric: bool,
    /// Configuration file of `key = value` lines
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

fn parse<T>(key: &str, value: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::usage(format!("config key `{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::usage(format!("config key `{key}`: expected true or false, got `{value}`"))),
    }
}

impl Flags {
    /// Parses a configuration file. Keys are the long flag names; dashes
    /// and underscores are interchangeable. `#` starts a comment.
    pub fn parse_file(text: &str, source: &str) -> Result<Flags, CliError> {
        let mut f = Flags::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{source}:{}: expected `key = value`", n + 1)))?;
            let key = key.trim().replace('_', "-");
            let v = value.trim();
            let k = key.as_str();
            match k {
                "data" => f.data = Some(v.into()),
                "format" => f.format = Some(parse(k, v)?),
                "embeddings" => f.embeddings = Some(v.into()),
                "tokens-field" => f.tokens_field = Some(v.into()),
                "tags-field" => f.tags_field = Some(v.into()),
                "period-field" => f.period_field = Some(v.into()),
                "k" => {
                    f.k = v
                        .split(',')
                        .map(|s| parse(k, s.trim()))
                        .collect::<Result<_, _>>()?
                }
                "episodes" => f.episodes = Some(parse(k, v)?),
                "alpha" => f.alpha = Some(parse(k, v)?),
                "beta" => f.beta = Some(parse(k, v)?),
                "lambda" => f.lambda = Some(parse(k, v)?),
                "temperature" => f.temperature = Some(parse(k, v)?),
                "adapt-steps" => f.adapt_steps = Some(parse(k, v)?),
                "inner-steps" => f.inner_steps = Some(parse(k, v)?),
                "meta-batch" => f.meta_batch = Some(parse(k, v)?),
                "max-steps" => f.max_steps = Some(parse(k, v)?),
                "eval-size" => f.eval_size = Some(parse(k, v)?),
                "weight-decay" => f.weight_decay = Some(parse(k, v)?),
                "ki-reduction" => f.ki_reduction = Some(parse(k, v)?),
                "snapshot-every" => f.snapshot_every = Some(parse(k, v)?),
                "seed" => f.seed = Some(parse(k, v)?),
                "workers" => f.workers = Some(parse(k, v)?),
                "checkpoint" => f.checkpoint = Some(v.into()),
                "out" => f.out = Some(v.into()),
                "save" => f.save = Some(v.into()),
                "report-format" => f.report_format = Some(parse(k, v)?),
                "repeats" => f.repeats = Some(parse(k, v)?),
                "holdout" => f.holdout = Some(parse(k, v)?),
                "tasks-per-repeat" => f.tasks_per_repeat = Some(parse(k, v)?),
                "vocab-size" => f.vocab_size = Some(parse(k, v)?),
                "num-classes" => f.num_classes = Some(parse(k, v)?),
                "novel-classes" => f.novel_classes = Some(parse(k, v)?),
                "num-periods" => f.num_periods = Some(parse(k, v)?),
                "posts-per-period" => f.posts_per_period = Some(parse(k, v)?),
                "novel-fraction" => f.novel_fraction = Some(parse(k, v)?),
                "zipf-exponent" => f.zipf_exponent = Some(parse(k, v)?),
                "no-meta" => f.no_meta = parse_bool(k, v)?,
                "constrain-decode" => f.constrain_decode = parse_bool(k, v)?,
                "binary-token-metric" => f.binary_token_metric = parse_bool(k, v)?,
                _ => {
                    return Err(CliError::usage(format!(
                        "{source}:{}: unknown configuration key `{key}`",
                        n + 1
                    )))
                }
            }
        }
        Ok(f)
    }

    pub fn load_file(path: &Path) -> Result<Flags, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::from(Error::Io {
            path: path.into(),
            source: e,
        }))?;
        Flags::parse_file(&text, &path.display().to_string())
    }

    /// Values set here win; unset ones come from `lower`.
    pub fn over(self, lower: Flags) -> Flags {
        macro_rules! pick {
            ($($f:ident),*) => { Flags { $($f: self.$f.or(lower.$f),)*
                k: if self.k.is_empty() { lower.k } else { self.k },
                no_meta: self.no_meta || lower.no_meta,
                constrain_decode: self.constrain_decode || lower.constrain_decode,
                binary_token_metric: self.binary_token_metric || lower.binary_token_metric,
            } };
        }
        pick!(
            data, format, tokens_field, tags_field, period_field, embeddings, episodes, alpha, beta, lambda, temperature, adapt_steps, inner_steps, meta_batch,
            max_steps, eval_size, weight_decay, ki_reduction, snapshot_every, seed, workers, checkpoint, out, save,
            report_format, repeats, holdout, tasks_per_repeat, vocab_size, num_classes, novel_classes, num_periods,
            posts_per_period, novel_fraction, zipf_exponent, config
        )
    }
}

/// Every value a command runs with. Echoed into every report, so a report
/// alone is enough to rerun its experiment. The worker count is left out:
/// results never depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub format: CorpusFormat,
    pub fields: FieldMap,
    pub embeddings: Option<PathBuf>,
    /// Shot counts; `train.k` holds the first.
    pub shots: Vec<usize>,
    pub episodes: usize,
    pub train: TrainConfig,
    pub repeats: usize,
    pub holdout: f64,
    pub tasks_per_repeat: usize,
    pub synth: SynthConfig,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub save: Option<PathBuf>,
    pub report_format: ReportFormat,
    pub no_meta: bool,
    pub constrain_decode: bool,
    pub binary_token_metric: bool,
    #[serde(skip, default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

impl RunConfig {
    /// Resolves flags (already merged with the file) against defaults.
    /// `eval_shots` selects the default shot list of `eval`.
    pub fn resolve(f: Flags, env_seed: Option<&str>, eval_shots: bool) -> Result<RunConfig, CliError> {
        let seed = match (f.seed, env_seed) {
            (Some(s), _) => s,
            (None, Some(s)) => s
                .trim()
                .parse()
                .map_err(|e| CliError::usage(format!("{SEED_ENV}=`{s}` is not a seed: {e}")))?,
            (None, None) => TrainConfig::default().seed,
        };
        let shots = match (f.k.is_empty(), eval_shots) {
            (false, _) => f.k,
            (true, true) => DEFAULT_EVAL_SHOTS.to_vec(),
            (true, false) => vec![TrainConfig::default().k],
        };
        if shots.contains(&0) {
            return Err(CliError::usage("--k values must be at least 1"));
        }
        let d = TrainConfig::default();
        let train = TrainConfig {
            alpha: f.alpha.unwrap_or(d.alpha),
            beta: f.beta.unwrap_or(d.beta),
            k: shots[0],
            eval_size: f.eval_size.unwrap_or(d.eval_size),
            meta_batch: f.meta_batch.unwrap_or(d.meta_batch),
            max_steps: f.max_steps.unwrap_or(d.max_steps),
            inner_steps: f.inner_steps.unwrap_or(d.inner_steps),
            adapt_steps: f.adapt_steps.unwrap_or(d.adapt_steps),
            lambda: f.lambda.unwrap_or(d.lambda),
            temperature: f.temperature.unwrap_or(d.temperature),
            ki_reduction: f.ki_reduction.unwrap_or(d.ki_reduction),
            weight_decay: f.weight_decay.unwrap_or(d.weight_decay),
            snapshot_every: f.snapshot_every.unwrap_or(d.snapshot_every),
            seed,
            ..d
        };
        train.validate()?;
        let s = SynthConfig::default();
        let synth = SynthConfig {
            vocab_size: f.vocab_size.unwrap_or(s.vocab_size),
            num_classes: f.num_classes.unwrap_or(s.num_classes),
            novel_classes: f.novel_classes.unwrap_or(s.novel_classes),
            num_periods: f.num_periods.unwrap_or(s.num_periods),
            posts_per_period: f.posts_per_period.unwrap_or(s.posts_per_period),
            novel_fraction: f.novel_fraction.unwrap_or(s.novel_fraction),
            zipf_exponent: f.zipf_exponent.unwrap_or(s.zipf_exponent),
            seed,
            ..s
        };
        let d_fields = FieldMap::default();
        let cfg = RunConfig {
            data: f.data,
            format: f.format.unwrap_or(CorpusFormat::Jsonl),
            fields: FieldMap {
                tokens: f.tokens_field.unwrap_or(d_fields.tokens),
                tags: f.tags_field.unwrap_or(d_fields.tags),
                period: f.period_field.unwrap_or(d_fields.period),
            },
            embeddings: f.embeddings,
            shots,
            episodes: f.episodes.unwrap_or(50),
            train,
            repeats: f.repeats.unwrap_or(5),
            holdout: f.holdout.unwrap_or(0.2),
            tasks_per_repeat: f.tasks_per_repeat.unwrap_or(1),
            synth,
            checkpoint: f.checkpoint,
            out: f.out,
            save: f.save,
            report_format: f.report_format.unwrap_or(ReportFormat::Json),
            no_meta: f.no_meta,
            constrain_decode: f.constrain_decode,
            binary_token_metric: f.binary_token_metric,
            workers: f.workers.unwrap_or(1),
        };
        for (name, v) in [("episodes", cfg.episodes), ("workers", cfg.workers), ("repeats", cfg.repeats)] {
            if v == 0 {
                return Err(CliError::usage(format!("--{name} must be at least 1")));
            }
        }
        if !(cfg.holdout > 0.0 && cfg.holdout < 1.0) {
            return Err(CliError::usage(format!("--holdout must lie in (0, 1), got {}", cfg.holdout)));
        }
        Ok(cfg)
    }

    /// The single shot count of commands that take one.
    pub fn single_k(&self, command: &str) -> Result<usize, CliError> {
        match self.shots.as_slice() {
            [k] => Ok(*k),
            _ => Err(CliError::usage(format!("`{command}` takes a single --k value"))),
        }
    }

    pub fn require_data(&self, command: &str) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::usage(format!("`{command}` needs --data")))
    }

    pub fn require_checkpoint(&self, command: &str) -> Result<&Path, CliError> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| CliError::usage(format!("`{command}` needs --checkpoint")))
    }
}
