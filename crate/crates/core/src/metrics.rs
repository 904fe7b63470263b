//! Token-level scoring, K-shot episodic evaluation and the forgetting study.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episodes::{sample_test_task, MetaTask, TimeSplit};
use crate::error::{Error, Result};
use crate::meta::{
    adapt_with_inheritance, fine_tune, meta_train, AdaptOptions, Dataset, Instance, Sealed, Tagger, TrainConfig,
};
use crate::numcore::rng::{derive_seed, rng_from};
use crate::numcore::ParamSet;
use crate::tagging::{Tag, TagSequence};

pub const EVAL_SCHEMA: &str = "mise-lab/eval/v1";
pub const FORGET_SCHEMA: &str = "mise-lab/forget/v1";

const STREAM_EPISODES: u64 = 0x6576;
const STREAM_FORGET: u64 = 0x666f;

/// Pooled token counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl TokenCounts {
    /// Counts one post. With `binary`, any non-O prediction on a non-O gold
    /// token is a hit; otherwise the tags must agree exactly.
    pub fn add_post(&mut self, pred: &[Tag], gold: &[Tag], binary: bool) -> Result<()> {
        if pred.len() != gold.len() {
            return Err(Error::InvalidArgument(format!(
                "prediction has {} tags, gold has {}",
                pred.len(),
                gold.len()
            )));
        }
        for (&p, &g) in pred.iter().zip(gold) {
            self.predicted += usize::from(p != Tag::O);
            self.gold += usize::from(g != Tag::O);
            if g != Tag::O && (p == g || (binary && p != Tag::O)) {
                self.true_positive += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: TokenCounts) {
        self.true_positive += other.true_positive;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    /// Precision, recall and F1. Undefined ratios are 0 and flagged.
    pub fn scores(&self) -> Prf {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.true_positive, self.predicted);
        let recall = ratio(self.true_positive, self.gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            undefined_precision: self.predicted == 0,
            undefined_recall: self.gold == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined_precision: bool,
    pub undefined_recall: bool,
}

/// Micro-averaged token precision, recall and F1 over aligned posts.
pub fn token_prf(pred: &[TagSequence], gold: &[TagSequence], binary: bool) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted posts against {} gold posts",
            pred.len(),
            gold.len()
        )));
    }
    let mut counts = TokenCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        counts.add_post(p, g, binary)?;
    }
    Ok(counts.scores())
}

/// How a test episode adapts the starting model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adaptation {
    /// Support loss blended with inheritance from the frozen model.
    Inherit,
    /// Support loss only.
    FineTune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub train: TrainConfig,
    pub episodes: usize,
    /// Threads for parallel episodes. Results do not depend on it, so it is
    /// left out of serialized reports.
    #[serde(skip, default = "one_worker")]
    pub workers: usize,
    pub adaptation: Adaptation,
    pub constrain_decode: bool,
    pub binary_token_metric: bool,
}

fn one_worker() -> usize {
    1
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train: TrainConfig::default(),
            episodes: 50,
            workers: 1,
            adaptation: Adaptation::Inherit,
            constrain_decode: false,
            binary_token_metric: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.episodes == 0 {
            return Err(Error::InvalidArgument("episodes must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub seed: u64,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
    pub scores: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Mean and population standard deviation of per-item scores.
pub fn aggregate(scores: &[Prf]) -> (Aggregate, Aggregate) {
    let n = scores.len().max(1) as f64;
    let mean_of = |f: &dyn Fn(&Prf) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let mean = Aggregate {
        precision: mean_of(&|s| s.precision),
        recall: mean_of(&|s| s.recall),
        f1: mean_of(&|s| s.f1),
    };
    let std_of = |f: &dyn Fn(&Prf) -> f64, m: f64| (scores.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / n).sqrt();
    let std = Aggregate {
        precision: std_of(&|s| s.precision, mean.precision),
        recall: std_of(&|s| s.recall, mean.recall),
        f1: std_of(&|s| s.f1, mean.f1),
    };
    (mean, std)
}

/// Flags for degenerate episodes, in a fixed order.
fn degenerate_flags(scores: &[Prf]) -> Vec<String> {
    let mut flags = Vec::new();
    let p = scores.iter().filter(|s| s.undefined_precision).count();
    let r = scores.iter().filter(|s| s.undefined_recall).count();
    if p > 0 {
        flags.push(format!("undefined precision in {p} of {} episodes", scores.len()));
    }
    if r > 0 {
        flags.push(format!("undefined recall in {r} of {} episodes", scores.len()));
    }
    flags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub config: EvalConfig,
    pub episodes: Vec<EpisodeResult>,
    pub mean: Aggregate,
    pub std: Aggregate,
    pub flags: Vec<String>,
}

impl EvalReport {
    fn from_episodes(k: usize, config: EvalConfig, episodes: Vec<EpisodeResult>) -> Self {
        let scores: Vec<Prf> = episodes.iter().map(|e| e.scores).collect();
        let (mean, std) = aggregate(&scores);
        EvalReport {
            k,
            config,
            flags: degenerate_flags(&scores),
            episodes,
            mean,
            std,
        }
    }

    /// Recomputes the aggregates from the stored episodes.
    pub fn is_consistent(&self) -> bool {
        let scores: Vec<Prf> = self.episodes.iter().map(|e| e.scores).collect();
        aggregate(&scores) == (self.mean, self.std)
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn decode_all(tagger: &Tagger, params: &ParamSet, posts: &[&Instance], constrain: bool) -> Result<Vec<TagSequence>> {
    posts.iter().map(|p| tagger.decode(params, &p.input, constrain)).collect()
}

fn adapt(
    tagger: &Tagger,
    start: &ParamSet,
    support: &[&Instance],
    query: &[&Instance],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<ParamSet> {
    let opts = AdaptOptions { seed, record: false };
    let out = match cfg.adaptation {
        Adaptation::Inherit => adapt_with_inheritance(tagger, start, support, Sealed::new(query), &cfg.train, opts)?,
        Adaptation::FineTune => fine_tune(tagger, start, support, &cfg.train, opts)?,
    };
    Ok(out.params)
}

/// Decodes `posts` and scores them against their gold tags with pooled
/// token counts.
pub fn score_posts(
    tagger: &Tagger,
    params: &ParamSet,
    posts: &[&Instance],
    constrain: bool,
    binary: bool,
) -> Result<Prf> {
    let pred = decode_all(tagger, params, posts, constrain)?;
    let mut counts = TokenCounts::default();
    for (p, post) in pred.iter().zip(posts) {
        counts.add_post(p, post.gold()?, binary)?;
    }
    Ok(counts.scores())
}

/// The test task of evaluation episode `episode` under base seed `seed`,
/// with the episode's own seed.
pub fn episode_task(
    split: &TimeSplit,
    k: usize,
    eval_size: usize,
    seed: u64,
    episode: usize,
) -> Result<(u64, MetaTask)> {
    let seed = derive_seed(seed, &[STREAM_EPISODES, episode as u64]);
    let task = sample_test_task(split, k, eval_size, &mut rng_from(seed, &[0]))?;
    Ok((seed, task))
}

fn run_episode(
    tagger: &Tagger,
    start: &ParamSet,
    data: &Dataset,
    split: &TimeSplit,
    k: usize,
    cfg: &EvalConfig,
    episode: usize,
) -> Result<EpisodeResult> {
    let (seed, task) = episode_task(split, k, cfg.train.eval_size, cfg.train.seed, episode)?;
    let support = data.select(&task.support);
    let query = data.select(&task.eval);
    let adapted = adapt(tagger, start, &support, &query, cfg, derive_seed(seed, &[1]))?;
    // Gold query tags are read here, after adaptation, for scoring only.
    let scores = score_posts(tagger, &adapted, &query, cfg.constrain_decode, cfg.binary_token_metric)?;
    Ok(EpisodeResult {
        episode,
        seed,
        support: task.support,
        query: task.eval,
        scores,
    })
}

/// Adapts `start` on `episodes` sampled test tasks with `k` shots and scores
/// the query sets. Episodes are seeded by index alone, so the report does
/// not depend on the worker count, and runs with different `k` share query
/// sets and nest their support sets episode by episode.
pub fn kshot_eval(
    tagger: &Tagger,
    start: &ParamSet,
    data: &Dataset,
    split: &TimeSplit,
    k: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let config = EvalConfig {
        train: TrainConfig { k, ..cfg.train },
        ..*cfg
    };
    let episodes = with_workers(cfg.workers, || {
        (0..cfg.episodes)
            .into_par_iter()
            .map(|e| run_episode(tagger, start, data, split, k, &config, e))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(EvalReport::from_episodes(k, config, episodes))
}

/// Evaluation at several shot counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSuite {
    pub schema: String,
    pub label: String,
    pub runs: Vec<EvalReport>,
}

impl EvalSuite {
    pub fn new(label: impl Into<String>, runs: Vec<EvalReport>) -> Self {
        EvalSuite {
            schema: EVAL_SCHEMA.into(),
            label: label.into(),
            runs,
        }
    }

    /// One row per K with mean and standard deviation of P, R and F1.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.label).ok();
        writeln!(
            out,
            "{:>4}  {:>15}  {:>15}  {:>15}",
            "K", "Precision", "Recall", "F1"
        )
        .ok();
        for r in &self.runs {
            writeln!(
                out,
                "{:>4}  {:>7.4} ±{:<6.4}  {:>7.4} ±{:<6.4}  {:>7.4} ±{:<6.4}",
                r.k, r.mean.precision, r.std.precision, r.mean.recall, r.std.recall, r.mean.f1, r.std.f1
            )
            .ok();
        }
        if let Some(r) = self.runs.first() {
            let c = &r.config;
            writeln!(
                out,
                "episodes={} query={} lambda={} t={} alpha={} adapt_steps={} seed={}",
                c.episodes, c.train.eval_size, c.train.lambda, c.train.temperature, c.train.alpha, c.train.adapt_steps,
                c.train.seed
            )
            .ok();
        }
        for r in &self.runs {
            for f in &r.flags {
                writeln!(out, "K={}: {f}", r.k).ok();
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgetConfig {
    pub eval: EvalConfig,
    pub repeats: usize,
    pub holdout: f64,
    /// Test tasks adapted on per repeat; scores are averaged over them.
    pub tasks_per_repeat: usize,
}

impl Default for ForgetConfig {
    fn default() -> Self {
        ForgetConfig {
            eval: EvalConfig::default(),
            repeats: 5,
            holdout: 0.2,
            tasks_per_repeat: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub held_out: usize,
    /// The meta-model before any adaptation.
    pub meta: Prf,
    pub mise: Prf,
    pub fine_tune: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetReport {
    pub schema: String,
    pub config: ForgetConfig,
    pub repeats: Vec<RepeatResult>,
    pub mean_meta: Aggregate,
    pub mean_mise: Aggregate,
    pub mean_fine_tune: Aggregate,
    pub std_mise: Aggregate,
    pub std_fine_tune: Aggregate,
}

impl ForgetReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "retained performance on held-out past posts").ok();
        writeln!(out, "{:>7}  {:>9}  {:>9}  {:>9}", "repeat", "meta F1", "MISE F1", "λ=0 F1").ok();
        for r in &self.repeats {
            writeln!(out, "{:>7}  {:>9.4}  {:>9.4}  {:>9.4}", r.repeat, r.meta.f1, r.mise.f1, r.fine_tune.f1).ok();
        }
        writeln!(
            out,
            "{:>7}  {:>9.4}  {:>9.4}  {:>9.4}",
            "mean", self.mean_meta.f1, self.mean_mise.f1, self.mean_fine_tune.f1
        )
        .ok();
        out
    }
}

fn mean_prf(scores: &[Prf]) -> Prf {
    let (m, _) = aggregate(scores);
    Prf {
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        undefined_precision: scores.iter().any(|s| s.undefined_precision),
        undefined_recall: scores.iter().any(|s| s.undefined_recall),
    }
}

/// Per repeat: hold out a fraction of the past posts, meta-train on the
/// rest, adapt on latest-period tasks with and without inheritance, and
/// score every model on the held-out posts. Each repeat trains from a fresh
/// initialization seeded by the repeat.
pub fn forgetting_study(
    tagger: &Tagger,
    data: &Dataset,
    split: &TimeSplit,
    cfg: &ForgetConfig,
) -> Result<ForgetReport> {
    cfg.eval.validate()?;
    if cfg.repeats == 0 || cfg.tasks_per_repeat == 0 {
        return Err(Error::InvalidArgument("repeats and tasks per repeat must be at least 1".into()));
    }
    let train = cfg.eval.train;
    let run_repeat = |r: usize| -> Result<RepeatResult> {
        let seed = derive_seed(train.seed, &[STREAM_FORGET, r as u64]);
        let (reduced, held) = split.hold_out_past(cfg.holdout, &mut rng_from(seed, &[0]))?;
        let repeat_cfg = TrainConfig { seed, ..train };
        let meta = meta_train(tagger, data, &reduced, &repeat_cfg, tagger.init_params(seed)?, &mut |_| {})?.params;
        let held_posts = data.select(&held);
        let (c, b) = (cfg.eval.constrain_decode, cfg.eval.binary_token_metric);
        let meta_scores = score_posts(tagger, &meta, &held_posts, c, b)?;
        let mut mise = Vec::new();
        let mut plain = Vec::new();
        for j in 0..cfg.tasks_per_repeat {
            let task_seed = derive_seed(seed, &[1, j as u64]);
            let task = sample_test_task(&reduced, train.k, train.eval_size, &mut rng_from(task_seed, &[]))?;
            let support = data.select(&task.support);
            let query = data.select(&task.eval);
            let opts = AdaptOptions {
                seed: derive_seed(task_seed, &[1]),
                record: false,
            };
            let inherited = adapt_with_inheritance(tagger, &meta, &support, Sealed::new(&query), &repeat_cfg, opts)?;
            let tuned = fine_tune(tagger, &meta, &support, &repeat_cfg, opts)?;
            mise.push(score_posts(tagger, &inherited.params, &held_posts, c, b)?);
            plain.push(score_posts(tagger, &tuned.params, &held_posts, c, b)?);
        }
        Ok(RepeatResult {
            repeat: r,
            seed,
            held_out: held.len(),
            meta: meta_scores,
            mise: mean_prf(&mise),
            fine_tune: mean_prf(&plain),
        })
    };
    let repeats = with_workers(cfg.eval.workers, || {
        (0..cfg.repeats).into_par_iter().map(run_repeat).collect::<Result<Vec<_>>>()
    })??;
    let pick = |f: &dyn Fn(&RepeatResult) -> Prf| repeats.iter().map(f).collect::<Vec<_>>();
    let (mean_meta, _) = aggregate(&pick(&|r| r.meta));
    let (mean_mise, std_mise) = aggregate(&pick(&|r| r.mise));
    let (mean_fine_tune, std_fine_tune) = aggregate(&pick(&|r| r.fine_tune));
    Ok(ForgetReport {
        schema: FORGET_SCHEMA.into(),
        config: *cfg,
        repeats,
        mean_meta,
        mean_mise,
        mean_fine_tune,
        std_mise,
        std_fine_tune,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagging::parse_tags;
    use proptest::prelude::*;

    fn tags(s: &str) -> TagSequence {
        parse_tags(&s.split_whitespace().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = vec![tags("O B E O S")];
        let s = token_prf(&g, &g, false).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counted_example() {
        let s = token_prf(&[tags("O B E S O")], &[tags("O B E O S")], false).unwrap();
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        let b = token_prf(&[tags("O B I S O")], &[tags("O B E O S")], true).unwrap();
        assert!((b.precision - 2.0 / 3.0).abs() < 1e-15);
        let exact = token_prf(&[tags("O B I S O")], &[tags("O B E O S")], false).unwrap();
        assert!((exact.precision - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_o_prediction_is_flagged() {
        let s = token_prf(&[tags("O O O")], &[tags("B E O")], false).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert!(s.undefined_precision && !s.undefined_recall);
        assert_eq!(degenerate_flags(&[s]), ["undefined precision in 1 of 1 episodes"]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(token_prf(&[tags("O O")], &[tags("O O O")], false).is_err());
        assert!(token_prf(&[tags("O O")], &[], false).is_err());
    }

    #[test]
    fn aggregates_use_population_std() {
        let mk = |f1| Prf {
            precision: f1,
            recall: f1,
            f1,
            undefined_precision: false,
            undefined_recall: false,
        };
        let (m, s) = aggregate(&[mk(0.2), mk(0.4)]);
        assert!((m.f1 - 0.3).abs() < 1e-15);
        assert!((s.f1 - 0.1).abs() < 1e-15);
    }

    fn tag_seq(n: usize) -> impl Strategy<Value = TagSequence> {
        proptest::collection::vec(0..5usize, n).prop_map(|v| v.into_iter().map(|i| Tag::ALL[i]).collect())
    }

    fn aligned_posts() -> impl Strategy<Value = Vec<(TagSequence, TagSequence)>> {
        proptest::collection::vec((1..8usize).prop_flat_map(|n| (tag_seq(n), tag_seq(n))), 1..6)
    }

    proptest! {
        #[test]
        fn scores_are_bounded(posts in aligned_posts(), binary in any::<bool>()) {
            let (p, g): (Vec<_>, Vec<_>) = posts.into_iter().unzip();
            let s = token_prf(&p, &g, binary).unwrap();
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let lo = s.precision.min(s.recall);
            let hi = s.precision.max(s.recall);
            prop_assert!(s.f1 >= lo - 1e-12 && s.f1 <= hi + 1e-12);
            let mut c = TokenCounts::default();
            for (a, b) in p.iter().zip(&g) {
                c.add_post(a, b, binary).unwrap();
            }
            prop_assert_eq!(s.f1 == 0.0, c.true_positive == 0);
        }

        #[test]
        fn pooling_is_order_and_concatenation_invariant(posts in aligned_posts()) {
            let (p, g): (Vec<_>, Vec<_>) = posts.iter().cloned().unzip();
            let base = token_prf(&p, &g, false).unwrap();
            let (rp, rg): (Vec<_>, Vec<_>) = posts.iter().rev().cloned().unzip();
            prop_assert_eq!(token_prf(&rp, &rg, false).unwrap(), base);
            let cat_p: TagSequence = p.concat();
            let cat_g: TagSequence = g.concat();
            prop_assert_eq!(token_prf(&[cat_p], &[cat_g], false).unwrap(), base);
        }
    }
}
