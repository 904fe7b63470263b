use std::path::Path;
use std::time::Instant;

use mise_core::data::{generate_corpus, load_corpus_with, render_corpus, summarize, CorpusSummary, DecodedPost};
use mise_core::encoder::{load_precomputed, EncoderConfig, Vocabulary};
use mise_core::episodes::{split_periods, Corpus, TimeSplit};
use mise_core::meta::{
    adapt_with_inheritance, gradient_suite, meta_train, train_scratch_baseline, AdaptOptions, Dataset,
    ModelCheckpoint, ModelConfig, ModelKind, Provenance, Sealed, Snapshot, Tagger, TrainConfig,
};
use mise_core::metrics::{
    episode_task, forgetting_study, kshot_eval, score_posts, Adaptation, EvalConfig, EvalSuite, ForgetConfig,
};
use mise_core::numcore::rng::derive_seed;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{emit, write_report, AdaptSummary, Outcome, Report, SweepCell, SweepReport, TrainSummary};

/// λ values of the sweep grid.
pub const SWEEP_LAMBDAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// Temperatures of the sweep grid.
pub const SWEEP_TEMPERATURES: [f64; 5] = [1.0, 3.0, 5.0, 7.0, 9.0];
/// Tiny models checked by `gradcheck`.
pub const GRADCHECK_MODELS: usize = 20;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn log(msg: impl AsRef<str>) {
    eprintln!("mise-lab: {}", msg.as_ref());
}

fn load(cfg: &RunConfig, command: &str) -> Result<(Corpus, CorpusSummary), CliError> {
    let path = cfg.require_data(command)?;
    let (corpus, summary) = load_corpus_with(path, cfg.format, &cfg.fields)?;
    log(format!("loaded {} posts ({} labeled) from {}", summary.posts, summary.labeled_posts, path.display()));
    Ok((corpus, summary))
}

fn precomputed(cfg: &RunConfig, corpus: &Corpus) -> Result<Option<Dataset>, CliError> {
    let Some(path) = &cfg.embeddings else {
        return Ok(None);
    };
    let reps = load_precomputed(path, &corpus.lengths())?;
    Ok(Some(Dataset::from_precomputed(corpus, reps)?))
}

/// A fresh model for `corpus`: a trainable encoder over the corpus
/// vocabulary, or a CRF head over precomputed representations.
fn fresh_model(cfg: &RunConfig, corpus: &Corpus) -> Result<(ModelConfig, Option<Vocabulary>, Dataset), CliError> {
    if let Some(data) = precomputed(cfg, corpus)? {
        let dim = data
            .instances
            .first()
            .and_then(|i| i.input.dim())
            .ok_or_else(|| CliError::data("corpus is empty"))?;
        return Ok((ModelConfig::precomputed(dim), None, data));
    }
    let vocab = Vocabulary::build(corpus.posts.iter().flat_map(|p| p.tokens.iter().map(String::as_str)));
    let data = Dataset::from_corpus(corpus, &vocab)?;
    Ok((ModelConfig::encoder(vocab.len(), EncoderConfig::default()), Some(vocab), data))
}

/// The dataset a checkpointed model reads `corpus` through.
fn dataset_for(cfg: &RunConfig, ckpt: &ModelCheckpoint, corpus: &Corpus) -> Result<Dataset, CliError> {
    match (&ckpt.vocabulary, precomputed(cfg, corpus)?) {
        (Some(vocab), _) => Ok(Dataset::from_corpus(corpus, vocab)?),
        (None, Some(data)) => {
            let want = ckpt.model.feature_dim();
            match data.instances.first().and_then(|i| i.input.dim()) {
                Some(d) if d != want => Err(CliError::data(format!(
                    "embeddings have dimension {d}, the checkpoint expects {want}"
                ))),
                _ => Ok(data),
            }
        }
        (None, None) => Err(CliError::usage("this checkpoint reads precomputed representations; pass --embeddings")),
    }
}

fn load_checkpoint(cfg: &RunConfig, command: &str) -> Result<ModelCheckpoint, CliError> {
    let path = cfg.require_checkpoint(command)?;
    let ckpt = ModelCheckpoint::load(path)?;
    log(format!(
        "loaded {:?} checkpoint ({} steps) from {}",
        ckpt.provenance.kind,
        ckpt.provenance.steps,
        path.display()
    ));
    Ok(ckpt)
}

fn eval_config(cfg: &RunConfig, train: TrainConfig) -> EvalConfig {
    EvalConfig {
        train,
        episodes: cfg.episodes,
        workers: cfg.workers,
        adaptation: Adaptation::Inherit,
        constrain_decode: cfg.constrain_decode,
        binary_token_metric: cfg.binary_token_metric,
    }
}

fn finish(command: &str, cfg: &RunConfig, result: Outcome) -> Result<Report, CliError> {
    let report = Report::new(command, cfg.clone(), result);
    write_report(&report, cfg.out.as_deref(), cfg.report_format)?;
    Ok(report)
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = generate_corpus(&cfg.synth)?;
    let text = render_corpus(&corpus, cfg.format)?;
    emit(&text, cfg.out.as_deref())?;
    let s = summarize(&corpus);
    log(format!("generated {} posts with {} spans over {} periods", s.posts, s.span_count, s.posts_per_period.len()));
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<Report, CliError> {
    let k = cfg.single_k("train")?;
    let ckpt_path = cfg.require_checkpoint("train")?;
    let (corpus, summary) = load(cfg, "train")?;
    let split = split_periods(&corpus)?;
    let (model, vocab, data) = fresh_model(cfg, &corpus)?;
    let tagger = Tagger::new(model);
    let train = TrainConfig { k, ..cfg.train };
    let init = tagger.init_params(train.seed)?;
    let mut progress = |s: &Snapshot| log(format!("step {:>5}  validation loss {:.4}", s.step, s.val_loss));
    let (kind, outcome) = if cfg.no_meta {
        (ModelKind::Scratch, train_scratch_baseline(&tagger, &data, &split, &train, init, &mut progress)?)
    } else {
        (ModelKind::Meta, meta_train(&tagger, &data, &split, &train, init, &mut progress)?)
    };
    let provenance = Provenance {
        kind,
        seed: train.seed,
        steps: outcome.steps,
    };
    let params = outcome.params.num_values();
    ModelCheckpoint::new(model, train, vocab, provenance, outcome.params)?.save(ckpt_path)?;
    log(format!("wrote {}", ckpt_path.display()));
    finish(
        "train",
        cfg,
        Outcome::Train(TrainSummary {
            kind,
            steps: outcome.steps,
            params,
            corpus: summary,
            snapshots: outcome.snapshots,
        }),
    )
}

pub fn adapt(cfg: &RunConfig) -> Result<Report, CliError> {
    let k = cfg.single_k("adapt")?;
    let ckpt = load_checkpoint(cfg, "adapt")?;
    let (corpus, _) = load(cfg, "adapt")?;
    let split = split_periods(&corpus)?;
    let data = dataset_for(cfg, &ckpt, &corpus)?;
    let tagger = ckpt.tagger();
    let train = TrainConfig { k, ..cfg.train };
    let (seed, task) = episode_task(&split, k, train.eval_size, train.seed, 0)?;
    let support = data.select(&task.support);
    let query = data.select(&task.eval);
    let opts = AdaptOptions {
        seed: derive_seed(seed, &[1]),
        record: false,
    };
    let out = adapt_with_inheritance(&tagger, &ckpt.params, &support, Sealed::new(&query), &train, opts)?;
    let before = score_posts(&tagger, &ckpt.params, &query, cfg.constrain_decode, cfg.binary_token_metric)?;
    let after = score_posts(&tagger, &out.params, &query, cfg.constrain_decode, cfg.binary_token_metric)?;
    if let Some(path) = &cfg.save {
        let provenance = Provenance {
            kind: ModelKind::Inheritor,
            seed,
            steps: train.adapt_steps,
        };
        ModelCheckpoint::new(ckpt.model, train, ckpt.vocabulary.clone(), provenance, out.params)?.save(path)?;
        log(format!("wrote {}", path.display()));
    }
    finish(
        "adapt",
        cfg,
        Outcome::Adapt(AdaptSummary {
            episode_seed: seed,
            support: task.support,
            query: task.eval,
            trace: out.trace,
            before,
            after,
        }),
    )
}

fn checkpoint_label(ckpt: &ModelCheckpoint, train: &TrainConfig) -> String {
    let kind = format!("{:?}", ckpt.provenance.kind).to_lowercase();
    format!("{kind} model, lambda={} t={}", train.lambda, train.temperature)
}

pub fn eval(cfg: &RunConfig) -> Result<Report, CliError> {
    let ckpt = load_checkpoint(cfg, "eval")?;
    let (corpus, _) = load(cfg, "eval")?;
    let split = split_periods(&corpus)?;
    let data = dataset_for(cfg, &ckpt, &corpus)?;
    let tagger = ckpt.tagger();
    let ec = eval_config(cfg, cfg.train);
    let runs = cfg
        .shots
        .iter()
        .map(|&k| {
            let r = kshot_eval(&tagger, &ckpt.params, &data, &split, k, &ec)?;
            log(format!("K={k}: F1 {:.4} ± {:.4}", r.mean.f1, r.std.f1));
            Ok(r)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    finish("eval", cfg, Outcome::Eval(EvalSuite::new(checkpoint_label(&ckpt, &cfg.train), runs)))
}

pub fn decode(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt = load_checkpoint(cfg, "decode")?;
    let (corpus, _) = load(cfg, "decode")?;
    let data = dataset_for(cfg, &ckpt, &corpus)?;
    let tagger = ckpt.tagger();
    let mut text = String::new();
    for (i, post) in data.instances.iter().enumerate() {
        let tags = tagger.decode(&ckpt.params, &post.input, cfg.constrain_decode)?;
        text.push_str(&serde_json::to_string(&DecodedPost::new(i, &tags))?);
        text.push('\n');
    }
    emit(&text, cfg.out.as_deref())
}

pub fn forget(cfg: &RunConfig) -> Result<Report, CliError> {
    let k = cfg.single_k("forget")?;
    let (corpus, _) = load(cfg, "forget")?;
    let split = split_periods(&corpus)?;
    let (model, _, data) = fresh_model(cfg, &corpus)?;
    let fc = ForgetConfig {
        eval: eval_config(cfg, TrainConfig { k, ..cfg.train }),
        repeats: cfg.repeats,
        holdout: cfg.holdout,
        tasks_per_repeat: cfg.tasks_per_repeat,
    };
    let report = forgetting_study(&Tagger::new(model), &data, &split, &fc)?;
    log(format!(
        "retained F1: MISE {:.4}, λ=0 {:.4}",
        report.mean_mise.f1, report.mean_fine_tune.f1
    ));
    finish("forget", cfg, Outcome::Forget(report))
}

pub fn sweep(cfg: &RunConfig) -> Result<Report, CliError> {
    let k = cfg.single_k("sweep")?;
    let ckpt = load_checkpoint(cfg, "sweep")?;
    let (corpus, _) = load(cfg, "sweep")?;
    let split: TimeSplit = split_periods(&corpus)?;
    let data = dataset_for(cfg, &ckpt, &corpus)?;
    let tagger = ckpt.tagger();
    let mut cells = Vec::with_capacity(SWEEP_LAMBDAS.len() * SWEEP_TEMPERATURES.len());
    for &lambda in &SWEEP_LAMBDAS {
        for &temperature in &SWEEP_TEMPERATURES {
            let train = TrainConfig {
                lambda,
                temperature,
                ..cfg.train
            };
            let r = kshot_eval(&tagger, &ckpt.params, &data, &split, k, &eval_config(cfg, train))?;
            log(format!("λ={lambda} t={temperature}: F1 {:.4}", r.mean.f1));
            cells.push(SweepCell {
                lambda,
                temperature,
                mean: r.mean,
                std: r.std,
            });
        }
    }
    let report = SweepReport::new(k, SWEEP_LAMBDAS.to_vec(), SWEEP_TEMPERATURES.to_vec(), cells);
    finish("sweep", cfg, Outcome::Sweep(report))
}

pub fn gradcheck(cfg: &RunConfig) -> Result<Report, CliError> {
    let suite = gradient_suite(GRADCHECK_MODELS, cfg.train.seed)?;
    let worst = suite.max_rel_error;
    let report = finish("gradcheck", cfg, Outcome::Gradcheck(suite))?;
    if !(worst < GRADCHECK_TOLERANCE) {
        return Err(CliError::numeric(format!(
            "gradient check failed: max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(report)
}

/// Runs `f`, reporting its wall-clock time on standard error only.
pub fn timed<T>(command: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    let start = Instant::now();
    let out = f();
    log(format!("{command} finished in {:.1} s", start.elapsed().as_secs_f64()));
    out
}

pub fn ensure_parent(path: Option<&Path>) -> Result<(), CliError> {
    if let Some(dir) = path.and_then(Path::parent).filter(|d| !d.as_os_str().is_empty()) {
        if !dir.is_dir() {
            return Err(CliError::usage(format!("directory {} does not exist", dir.display())));
        }
    }
    Ok(())
}
