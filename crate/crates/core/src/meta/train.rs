use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Mode;
use crate::episodes::{sample_train_task, TimeSplit};
use crate::error::{Error, Result};
use crate::numcore::rng::{derive_seed, rng_from};
use crate::numcore::{value_and_grad, OptimizerState, ParamSet};

use super::config::TrainConfig;
use super::model::{Dataset, Instance, Tagger};

const STREAM_TASKS: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_MONITOR: u64 = 3;
const STREAM_POOL: u64 = 4;

/// Largest model for which the second-order meta-gradient is allowed.
pub const SECOND_ORDER_MAX_PARAMS: usize = 500;
const HVP_EPS: f64 = 1e-4;

fn post_mode(dropout_seed: Option<u64>, i: usize) -> Mode {
    match dropout_seed {
        Some(seed) => Mode::Train {
            seed: derive_seed(seed, &[i as u64]),
        },
        None => Mode::Eval,
    }
}

fn require_finite(value: f64, grad: &ParamSet, op: &str) -> Result<()> {
    if !value.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite { op: op.to_string() });
    }
    Ok(())
}

/// Mean CRF negative log-likelihood over `posts`, in eval mode.
pub fn task_loss(tagger: &Tagger, params: &ParamSet, posts: &[&Instance]) -> Result<f64> {
    if posts.is_empty() {
        return Err(Error::InvalidArgument("task loss over an empty post set".into()));
    }
    let mut total = 0.0;
    for p in posts {
        total += tagger.nll(params, p)?;
    }
    Ok(total / posts.len() as f64)
}

/// Mean CRF negative log-likelihood and its gradient. With a dropout seed,
/// each post gets its own derived mask.
pub fn task_loss_grad(
    tagger: &Tagger,
    params: &ParamSet,
    posts: &[&Instance],
    dropout_seed: Option<u64>,
) -> Result<(f64, ParamSet)> {
    if posts.is_empty() {
        return Err(Error::InvalidArgument("task loss over an empty post set".into()));
    }
    let mut total = 0.0;
    let mut grad = params.zeros_like();
    for (i, post) in posts.iter().enumerate() {
        let mode = post_mode(dropout_seed, i);
        let (v, g) = value_and_grad(params, |tape, q| tagger.nll_on_tape(tape, q, post, mode))?;
        total += v;
        grad.add_scaled(&g, 1.0)?;
    }
    let n = posts.len() as f64;
    grad.scale(1.0 / n);
    let value = total / n;
    require_finite(value, &grad, "task loss")?;
    Ok((value, grad))
}

/// `steps` plain descent steps on the support loss, starting from a clone
/// of `params`.
pub fn inner_adapt(
    tagger: &Tagger,
    params: &ParamSet,
    support: &[&Instance],
    steps: usize,
    alpha: f64,
    dropout_seed: Option<u64>,
) -> Result<ParamSet> {
    let mut adapted = params.clone();
    for s in 0..steps {
        let seed = dropout_seed.map(|b| derive_seed(b, &[s as u64]));
        let (_, g) = task_loss_grad(tagger, &adapted, support, seed)?;
        adapted.add_scaled(&g, -alpha)?;
    }
    Ok(adapted)
}

/// Support and validation posts of one training task.
#[derive(Debug, Clone)]
pub struct TaskSets<'a> {
    pub support: Vec<&'a Instance>,
    pub eval: Vec<&'a Instance>,
}

/// Validation loss after inner adaptation, and its meta-gradient.
///
/// First order, the gradient is taken at the adapted parameters. Second
/// order, it is pulled back through every inner step with finite-difference
/// Hessian-vector products; dropout is then disabled so that the inner map
/// is deterministic.
pub fn meta_gradient(
    tagger: &Tagger,
    params: &ParamSet,
    task: &TaskSets<'_>,
    cfg: &TrainConfig,
    dropout_seed: u64,
) -> Result<(f64, ParamSet)> {
    if !cfg.second_order {
        let adapted = inner_adapt(
            tagger,
            params,
            &task.support,
            cfg.inner_steps,
            cfg.alpha,
            Some(derive_seed(dropout_seed, &[0])),
        )?;
        return task_loss_grad(tagger, &adapted, &task.eval, Some(derive_seed(dropout_seed, &[1])));
    }

    if params.num_values() > SECOND_ORDER_MAX_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "second-order meta-gradients are limited to {SECOND_ORDER_MAX_PARAMS} parameters, model has {}",
            params.num_values()
        )));
    }
    let mut path = vec![params.clone()];
    for _ in 0..cfg.inner_steps {
        let last = path.last().expect("non-empty path");
        let (_, g) = task_loss_grad(tagger, last, &task.support, None)?;
        let mut next = last.clone();
        next.add_scaled(&g, -cfg.alpha)?;
        path.push(next);
    }
    let (value, mut v) = task_loss_grad(tagger, path.last().expect("non-empty path"), &task.eval, None)?;
    for point in path.iter().rev().skip(1) {
        let hv = support_hvp(tagger, point, &task.support, &v)?;
        v.add_scaled(&hv, -cfg.alpha)?;
    }
    Ok((value, v))
}

/// Central-difference Hessian-vector product of the support loss.
fn support_hvp(tagger: &Tagger, at: &ParamSet, support: &[&Instance], v: &ParamSet) -> Result<ParamSet> {
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(v.zeros_like());
    }
    let h = HVP_EPS / norm;
    let mut plus = at.clone();
    plus.add_scaled(v, h)?;
    let mut minus = at.clone();
    minus.add_scaled(v, -h)?;
    let (_, mut gp) = task_loss_grad(tagger, &plus, support, None)?;
    let (_, gm) = task_loss_grad(tagger, &minus, support, None)?;
    gp.add_scaled(&gm, -1.0)?;
    gp.scale(1.0 / (2.0 * h));
    Ok(gp)
}

/// One outer update: sums the per-task meta-gradients and applies the
/// adaptive optimizer. Returns the mean post-adaptation validation loss.
pub fn meta_outer_step(
    tagger: &Tagger,
    params: &mut ParamSet,
    optimizer: &mut OptimizerState,
    tasks: &[TaskSets<'_>],
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("meta batch is empty".into()));
    }
    let theta: &ParamSet = params;
    let parts: Vec<(f64, ParamSet)> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| meta_gradient(tagger, theta, task, cfg, derive_seed(step_seed, &[i as u64])))
        .collect::<Result<_>>()?;
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for (v, g) in &parts {
        loss += v;
        grad.add_scaled(g, 1.0)?;
    }
    optimizer.step(params, &grad)?;
    Ok(loss / tasks.len() as f64)
}

/// Validation loss recorded during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub steps: usize,
    pub snapshots: Vec<Snapshot>,
}

/// Fixed posts used for validation snapshots: the validation sets of two
/// training tasks drawn from a dedicated stream.
fn monitor_posts<'a>(data: &'a Dataset, split: &TimeSplit, cfg: &TrainConfig) -> Result<Vec<&'a Instance>> {
    let mut rng = rng_from(cfg.seed, &[STREAM_MONITOR]);
    let mut idx = Vec::new();
    for _ in 0..2 {
        idx.extend(sample_train_task(split, cfg.k, cfg.eval_size, &mut rng)?.eval);
    }
    Ok(data.select(&idx))
}

fn run_training<'a, F>(
    tagger: &Tagger,
    data: &'a Dataset,
    split: &TimeSplit,
    cfg: &TrainConfig,
    init: ParamSet,
    on_snapshot: &mut dyn FnMut(&Snapshot),
    mut step_fn: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&mut ParamSet, &mut OptimizerState, usize) -> Result<()>,
{
    cfg.validate()?;
    let mut params = init;
    let mut snapshots = Vec::new();
    if cfg.max_steps == 0 {
        return Ok(TrainOutcome {
            params,
            steps: 0,
            snapshots,
        });
    }
    let monitor = if cfg.snapshot_every > 0 {
        monitor_posts(data, split, cfg)?
    } else {
        Vec::new()
    };
    let mut record = |params: &ParamSet, step: usize, out: &mut Vec<Snapshot>| -> Result<()> {
        if !monitor.is_empty() {
            let s = Snapshot {
                step,
                val_loss: task_loss(tagger, params, &monitor)?,
            };
            on_snapshot(&s);
            out.push(s);
        }
        Ok(())
    };
    record(&params, 0, &mut snapshots)?;
    let mut optimizer = OptimizerState::adamw(cfg.beta, cfg.weight_decay);
    for step in 0..cfg.max_steps {
        step_fn(&mut params, &mut optimizer, step)?;
        let done = step + 1;
        if cfg.snapshot_every > 0 && (done % cfg.snapshot_every == 0 || done == cfg.max_steps) {
            record(&params, done, &mut snapshots)?;
        }
    }
    Ok(TrainOutcome {
        params,
        steps: cfg.max_steps,
        snapshots,
    })
}

/// Episodic first-order MAML over the past periods of `split`.
pub fn meta_train(
    tagger: &Tagger,
    data: &Dataset,
    split: &TimeSplit,
    cfg: &TrainConfig,
    init: ParamSet,
    on_snapshot: &mut dyn FnMut(&Snapshot),
) -> Result<TrainOutcome> {
    let mut task_rng = rng_from(cfg.seed, &[STREAM_TASKS]);
    run_training(tagger, data, split, cfg, init, on_snapshot, |params, opt, step| {
        let mut batch = Vec::with_capacity(cfg.meta_batch);
        for _ in 0..cfg.meta_batch {
            let t = sample_train_task(split, cfg.k, cfg.eval_size, &mut task_rng)?;
            batch.push(TaskSets {
                support: data.select(&t.support),
                eval: data.select(&t.eval),
            });
        }
        let seed = derive_seed(cfg.seed, &[STREAM_DROPOUT, step as u64]);
        meta_outer_step(tagger, params, opt, &batch, cfg, seed)?;
        Ok(())
    })
}

/// Supervised training on pooled past posts without episodes or inner
/// loop. Each step draws as many posts as one meta batch touches.
pub fn train_scratch_baseline(
    tagger: &Tagger,
    data: &Dataset,
    split: &TimeSplit,
    cfg: &TrainConfig,
    init: ParamSet,
    on_snapshot: &mut dyn FnMut(&Snapshot),
) -> Result<TrainOutcome> {
    let pool = split.past_labeled();
    if pool.is_empty() && cfg.max_steps > 0 {
        return Err(Error::Sampling("no labeled posts in past periods".into()));
    }
    let batch_size = (cfg.meta_batch * (cfg.k + cfg.eval_size)).min(pool.len());
    let mut rng = rng_from(cfg.seed, &[STREAM_POOL]);
    run_training(tagger, data, split, cfg, init, on_snapshot, |params, opt, step| {
        let idx: Vec<usize> = sample(&mut rng, pool.len(), batch_size)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        let seed = derive_seed(cfg.seed, &[STREAM_DROPOUT, step as u64]);
        let (_, g) = task_loss_grad(tagger, params, &data.select(&idx), Some(seed))?;
        opt.step(params, &g)
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::crf::{nll_loss, Transitions};
    use crate::encoder::EncoderConfig;
    use crate::episodes::{split_periods, Corpus, Post};
    use crate::meta::model::{Input, ModelConfig};
    use crate::numcore::central_difference;
    use crate::tagging::{parse_tags, Tag, NUM_TAGS};
    use rand::Rng;

    pub(crate) fn tiny_tagger_with(vocab: usize, dropout: f64) -> Tagger {
        Tagger::new(ModelConfig::encoder(
            vocab,
            EncoderConfig {
                embed_dim: 3,
                hidden: 2,
                dropout,
                init_scale: 0.5,
            },
        ))
    }

    pub(crate) fn tiny_tagger(vocab: usize) -> Tagger {
        tiny_tagger_with(vocab, 0.1)
    }

    pub(crate) fn random_post(rng: &mut impl Rng, vocab: usize, n: usize) -> Instance {
        let ids = (0..n).map(|_| rng.gen_range(2..vocab)).collect();
        let tags = (0..n).map(|_| Tag::ALL[rng.gen_range(0..NUM_TAGS)]).collect();
        Instance::new(Input::Ids(ids), Some(tags)).unwrap()
    }

    fn posts(seed: u64, count: usize) -> Vec<Instance> {
        let mut rng = rng_from(seed, &[]);
        (0..count).map(|i| random_post(&mut rng, 6, 2 + i % 3)).collect()
    }

    #[test]
    fn task_loss_is_a_mean_of_post_nlls() {
        let tagger = tiny_tagger(6);
        let params = tagger.init_params(1).unwrap();
        let set = posts(2, 5);
        let refs: Vec<&Instance> = set.iter().collect();
        let oracle: Vec<f64> = set
            .iter()
            .map(|p| {
                let em = tagger.emissions(&params, &p.input).unwrap();
                nll_loss(&em, &Transitions::new(params.get("crf.transitions").unwrap()), p.gold().unwrap()).unwrap()
            })
            .collect();
        let mean = oracle.iter().sum::<f64>() / 5.0;
        assert!((task_loss(&tagger, &params, &refs).unwrap() - mean).abs() < 1e-12);
        assert_eq!(task_loss(&tagger, &params, &refs[..1]).unwrap(), oracle[0]);
        let doubled: Vec<&Instance> = refs.iter().chain(&refs).copied().collect();
        assert!((task_loss(&tagger, &params, &doubled).unwrap() - mean).abs() < 1e-12);
        assert!(task_loss(&tagger, &params, &[]).is_err());
    }

    #[test]
    fn inner_adapt_matches_a_finite_difference_step() {
        let tagger = tiny_tagger(6);
        let params = tagger.init_params(3).unwrap();
        let set = posts(4, 3);
        let refs: Vec<&Instance> = set.iter().collect();
        assert!(inner_adapt(&tagger, &params, &refs, 3, 0.0, None).unwrap().bit_eq(&params));

        let alpha = 0.05;
        let stepped = inner_adapt(&tagger, &params, &refs, 1, alpha, None).unwrap();
        let g = central_difference(|q| task_loss(&tagger, q, &refs), &params, 1e-5).unwrap();
        let mut expected = params.clone();
        expected.add_scaled(&g, -alpha).unwrap();
        for ((_, a), (_, b)) in stepped.iter().zip(expected.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-4 * y.abs().max(1e-3), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn small_steps_descend() {
        let tagger = tiny_tagger(6);
        let params = tagger.init_params(5).unwrap();
        let set = posts(6, 4);
        let refs: Vec<&Instance> = set.iter().collect();
        let before = task_loss(&tagger, &params, &refs).unwrap();
        let mut alpha = 1.0;
        loop {
            let after = task_loss(&tagger, &inner_adapt(&tagger, &params, &refs, 1, alpha, None).unwrap(), &refs).unwrap();
            if after <= before {
                break;
            }
            alpha /= 2.0;
            assert!(alpha > 1e-12, "no descent step found");
        }
    }

    #[test]
    fn degenerate_outer_step_is_a_supervised_step() {
        let tagger = tiny_tagger_with(6, 0.0);
        let params = tagger.init_params(7).unwrap();
        let set = posts(8, 4);
        let refs: Vec<&Instance> = set.iter().collect();
        let cfg = TrainConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let mut meta = params.clone();
        let mut opt = OptimizerState::adamw(cfg.beta, cfg.weight_decay);
        let task = TaskSets {
            support: refs.clone(),
            eval: refs.clone(),
        };
        meta_outer_step(&tagger, &mut meta, &mut opt, &[task], &cfg, 1).unwrap();

        let mut sup = params.clone();
        let mut opt2 = OptimizerState::adamw(cfg.beta, cfg.weight_decay);
        let (_, g) = task_loss_grad(&tagger, &sup, &refs, None).unwrap();
        opt2.step(&mut sup, &g).unwrap();
        assert!(meta.bit_eq(&sup));
    }

    #[test]
    fn first_order_gradient_is_linear_in_tasks() {
        let tagger = tiny_tagger(6);
        let params = tagger.init_params(9).unwrap();
        let a = posts(10, 6);
        let b = posts(11, 6);
        let cfg = TrainConfig {
            alpha: 0.1,
            ..Default::default()
        };
        let ta = TaskSets {
            support: a[..3].iter().collect(),
            eval: a[3..].iter().collect(),
        };
        let tb = TaskSets {
            support: b[..3].iter().collect(),
            eval: b[3..].iter().collect(),
        };
        let (_, ga) = meta_gradient(&tagger, &params, &ta, &cfg, derive_seed(5, &[0])).unwrap();
        let (_, gb) = meta_gradient(&tagger, &params, &tb, &cfg, derive_seed(5, &[1])).unwrap();
        let mut sum = ga.clone();
        sum.add_scaled(&gb, 1.0).unwrap();

        // A plain optimizer with unit rate exposes the summed gradient.
        let mut stepped = params.clone();
        let mut opt = OptimizerState::plain(1.0);
        meta_outer_step(&tagger, &mut stepped, &mut opt, &[ta, tb], &cfg, 5).unwrap();
        let mut expected = params.clone();
        expected.add_scaled(&sum, -1.0).unwrap();
        assert!(stepped.bit_eq(&expected));
    }

    #[test]
    fn second_order_matches_differentiating_the_whole_inner_loop() {
        let tagger = tiny_tagger(6);
        let params = tagger.init_params(12).unwrap();
        assert!(params.num_values() <= SECOND_ORDER_MAX_PARAMS);
        let set = posts(13, 6);
        let task = TaskSets {
            support: set[..3].iter().collect(),
            eval: set[3..].iter().collect(),
        };
        let cfg = TrainConfig {
            alpha: 0.3,
            inner_steps: 2,
            second_order: true,
            ..Default::default()
        };
        let (_, so) = meta_gradient(&tagger, &params, &task, &cfg, 0).unwrap();
        let objective = |q: &ParamSet| {
            let adapted = inner_adapt(&tagger, q, &task.support, 2, 0.3, None)?;
            task_loss(&tagger, &adapted, &task.eval)
        };
        let fd = central_difference(objective, &params, 1e-5).unwrap();
        let (a, b) = (so.flatten(), fd.flatten());
        let worst = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");

        // The first-order direction stays close for a small inner rate.
        let small = TrainConfig { alpha: 1e-3, ..cfg };
        let (_, so) = meta_gradient(&tagger, &params, &task, &small, 0).unwrap();
        let fo_cfg = TrainConfig {
            second_order: false,
            ..small
        };
        let (_, fo) = meta_gradient(&tiny_tagger_with(6, 0.0), &params, &task, &fo_cfg, 0).unwrap();
        let mut diff = so.clone();
        diff.add_scaled(&fo, -1.0).unwrap();
        assert!(diff.norm() < 0.01 * so.norm(), "{} vs {}", diff.norm(), so.norm());
    }

    #[test]
    fn second_order_refuses_large_models() {
        let tagger = Tagger::new(ModelConfig::encoder(50, EncoderConfig::default()));
        let params = tagger.init_params(0).unwrap();
        let set = posts(1, 2);
        let task = TaskSets {
            support: vec![&set[0]],
            eval: vec![&set[1]],
        };
        let cfg = TrainConfig {
            second_order: true,
            ..Default::default()
        };
        assert!(matches!(
            meta_gradient(&tagger, &params, &task, &cfg, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    fn two_period_fixture() -> (Corpus, Vocabulary) {
        // Period-specific tokens tagged S, everything else O.
        let mut rng = rng_from(21, &[]);
        let mut posts = Vec::new();
        for period in ["2020H1", "2020H2"] {
            for _ in 0..40 {
                let n = rng.gen_range(3..7);
                let mut tokens: Vec<String> = (0..n).map(|_| format!("f{}", rng.gen_range(0..8))).collect();
                let mut tags = vec!["O"; n];
                let at = rng.gen_range(0..n);
                tokens[at] = format!("x{}", rng.gen_range(0..3));
                tags[at] = "S";
                posts.push(Post {
                    tokens,
                    tags: Some(parse_tags(&tags).unwrap()),
                    period: period.into(),
                });
            }
        }
        let corpus = Corpus::new(posts);
        let vocab = Vocabulary::build(corpus.posts.iter().flat_map(|p| p.tokens.iter().map(String::as_str)));
        (corpus, vocab)
    }

    use crate::encoder::Vocabulary;

    fn fixture_setup(max_steps: usize) -> (Tagger, Dataset, TimeSplit, TrainConfig) {
        let (corpus, vocab) = two_period_fixture();
        let data = Dataset::from_corpus(&corpus, &vocab).unwrap();
        let split = split_periods(&corpus).unwrap();
        let tagger = Tagger::new(ModelConfig::encoder(
            vocab.len(),
            EncoderConfig {
                embed_dim: 8,
                hidden: 8,
                ..Default::default()
            },
        ));
        let cfg = TrainConfig {
            max_steps,
            meta_batch: 2,
            eval_size: 5,
            snapshot_every: 50,
            ..Default::default()
        };
        (tagger, data, split, cfg)
    }

    #[test]
    fn meta_training_lowers_validation_loss() {
        let (tagger, data, split, cfg) = fixture_setup(200);
        let init = tagger.init_params(cfg.seed).unwrap();
        let out = meta_train(&tagger, &data, &split, &cfg, init, &mut |_| {}).unwrap();
        let first = out.snapshots.first().unwrap();
        let last = out.snapshots.last().unwrap();
        assert_eq!((first.step, last.step, out.snapshots.len()), (0, 200, 5));
        assert!(last.val_loss < first.val_loss, "{:?}", out.snapshots);
    }

    #[test]
    fn training_is_deterministic_and_zero_steps_is_identity() {
        let (tagger, data, split, cfg) = fixture_setup(5);
        let init = tagger.init_params(cfg.seed).unwrap();
        let a = meta_train(&tagger, &data, &split, &cfg, init.clone(), &mut |_| {}).unwrap();
        let b = meta_train(&tagger, &data, &split, &cfg, init.clone(), &mut |_| {}).unwrap();
        assert!(a.params.bit_eq(&b.params));
        assert!(!a.params.bit_eq(&init));
        let s1 = train_scratch_baseline(&tagger, &data, &split, &cfg, init.clone(), &mut |_| {}).unwrap();
        let s2 = train_scratch_baseline(&tagger, &data, &split, &cfg, init.clone(), &mut |_| {}).unwrap();
        assert!(s1.params.bit_eq(&s2.params));

        let zero = TrainConfig { max_steps: 0, ..cfg };
        let m = meta_train(&tagger, &data, &split, &zero, init.clone(), &mut |_| {}).unwrap();
        let s = train_scratch_baseline(&tagger, &data, &split, &zero, init.clone(), &mut |_| {}).unwrap();
        assert!(m.params.bit_eq(&init) && s.params.bit_eq(&init));
        assert_eq!(m.steps, 0);
    }

    #[test]
    fn infeasible_sampling_propagates() {
        let (tagger, data, split, mut cfg) = fixture_setup(3);
        cfg.eval_size = 100;
        let init = tagger.init_params(0).unwrap();
        assert!(matches!(
            meta_train(&tagger, &data, &split, &cfg, init, &mut |_| {}),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let tagger = tiny_tagger(6);
        let mut params = tagger.init_params(1).unwrap();
        params.get_mut("crf.transitions").unwrap().data_mut()[0] = f64::NAN;
        let set = posts(2, 2);
        let refs: Vec<&Instance> = set.iter().collect();
        let err = inner_adapt(&tagger, &params, &refs, 1, 0.1, None).unwrap_err();
        assert_eq!(err.class(), crate::error::ErrorClass::Numeric);
    }
}
