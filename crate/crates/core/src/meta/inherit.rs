//! Knowledge inheritance at meta-test time.
//!
//! The frozen meta-model labels the query posts with temperature-softened
//! emission distributions. The student starts from the meta-model and
//! descends a blend of the support CRF loss and the divergence between its
//! own softened distributions and the teacher's.

use serde::{Deserialize, Serialize};

use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::numcore::rng::derive_seed;
use crate::numcore::{value_and_grad, ParamSet, Tape, Tensor, Var};
use crate::tagging::NUM_TAGS;

use super::config::{check_lambda, check_temperature, KiReduction, TrainConfig};
use super::model::{Instance, Sealed, Tagger};
use super::train::task_loss_grad;

/// Row-wise softmax of `logits / t`.
pub fn softmax_rows(logits: &Tensor, t: f64) -> Tensor {
    let cols = logits.cols();
    let mut data = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
        let exps: Vec<f64> = row.iter().map(|&v| (v / t - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|e| e / z));
    }
    Tensor::new(vec![logits.rows(), cols], data).expect("same shape as logits")
}

/// Row-wise log-softmax of `logits / t`.
fn log_softmax_rows(logits: &Tensor, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
        let lse = max + row.iter().map(|&v| (v / t - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&v| v / t - lse));
    }
    out
}

/// Teacher distributions over the five tags, one `n x 5` matrix per query
/// post.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelGrid {
    pub rows: Vec<Tensor>,
    pub temperature: f64,
}

impl SoftLabelGrid {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Softened emission distributions of a frozen teacher on the query posts.
pub fn soft_labels(tagger: &Tagger, teacher: &ParamSet, query: Sealed<'_>, t: f64) -> Result<SoftLabelGrid> {
    check_temperature(t)?;
    let rows = query
        .inputs()
        .map(|input| Ok(softmax_rows(&tagger.emissions(teacher, input)?, t)))
        .collect::<Result<_>>()?;
    Ok(SoftLabelGrid { rows, temperature: t })
}

/// Records `t² Σ_tokens KL(teacher ‖ softmax(logits / t))` as one node.
pub fn ki_on_tape(tape: &mut Tape<'_>, logits: Var, teacher: &Tensor, t: f64) -> Result<Var> {
    let z = tape.value(logits);
    if z.shape() != teacher.shape() || z.cols() != NUM_TAGS {
        return Err(Error::shape("soft labels", z.shape(), teacher.shape()));
    }
    let log_student = log_softmax_rows(z, t);
    let mut value = 0.0;
    let mut partial = Vec::with_capacity(z.len());
    for (&pm, &lpi) in teacher.data().iter().zip(&log_student) {
        if pm > 0.0 {
            value += pm * (pm.ln() - lpi);
        }
        partial.push(t * (lpi.exp() - pm));
    }
    let partial = Tensor::new(z.shape().to_vec(), partial)?;
    Ok(tape.fused_scalar("ki", &[logits], t * t * value, vec![partial]))
}

fn check_alignment(query: Sealed<'_>, grid: &SoftLabelGrid) -> Result<()> {
    if query.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "soft labels cover {} posts, query has {}",
            grid.len(),
            query.len()
        )));
    }
    Ok(())
}

/// Inheritance loss of `student` against `grid`, summed over query posts.
pub fn ki_loss(tagger: &Tagger, student: &ParamSet, query: Sealed<'_>, grid: &SoftLabelGrid) -> Result<f64> {
    Ok(ki_loss_grad(tagger, student, query, grid, None)?.0)
}

pub fn ki_loss_grad(
    tagger: &Tagger,
    student: &ParamSet,
    query: Sealed<'_>,
    grid: &SoftLabelGrid,
    dropout_seed: Option<u64>,
) -> Result<(f64, ParamSet)> {
    check_alignment(query, grid)?;
    let mut total = 0.0;
    let mut grad = student.zeros_like();
    for (i, (input, teacher)) in query.inputs().zip(&grid.rows).enumerate() {
        let mode = match dropout_seed {
            Some(s) => Mode::Train {
                seed: derive_seed(s, &[i as u64]),
            },
            None => Mode::Eval,
        };
        let (v, g) = value_and_grad(student, |tape, p| {
            let logits = tagger.emissions_on_tape(tape, p, input, mode)?;
            ki_on_tape(tape, logits, teacher, grid.temperature)
        })?;
        total += v;
        grad.add_scaled(&g, 1.0)?;
    }
    Ok((total, grad))
}

/// `(1 − λ)·crf + λ·ki`
pub fn total_loss(crf: f64, ki: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 - lambda) * crf + lambda * ki)
}

/// Loss components at one adaptation step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptStep {
    pub crf: f64,
    pub ki: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptOptions {
    /// Seed for dropout masks when adaptation dropout is on.
    pub seed: u64,
    /// Keep the parameters after every step.
    pub record: bool,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub params: ParamSet,
    pub trace: Vec<AdaptStep>,
    /// Parameters before the first step and after each step, if recorded.
    pub trajectory: Vec<ParamSet>,
}

/// Blended objective and its gradient at `params`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_grad(
    tagger: &Tagger,
    params: &ParamSet,
    support: &[&Instance],
    query: Sealed<'_>,
    grid: &SoftLabelGrid,
    lambda: f64,
    reduction: KiReduction,
    dropout_seed: Option<u64>,
) -> Result<(AdaptStep, ParamSet)> {
    check_lambda(lambda)?;
    let (crf, mut grad) = task_loss_grad(tagger, params, support, dropout_seed.map(|s| derive_seed(s, &[0])))?;
    let (mut ki, mut gk) = ki_loss_grad(tagger, params, query, grid, dropout_seed.map(|s| derive_seed(s, &[1])))?;
    if reduction == KiReduction::PostMean && !query.is_empty() {
        let n = query.len() as f64;
        ki /= n;
        gk.scale(1.0 / n);
    }
    grad.scale(1.0 - lambda);
    grad.add_scaled(&gk, lambda)?;
    let step = AdaptStep {
        crf,
        ki,
        total: total_loss(crf, ki, lambda)?,
    };
    if !step.total.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite {
            op: "adaptation loss".into(),
        });
    }
    Ok((step, grad))
}

fn dropout_seed(cfg: &TrainConfig, opts: AdaptOptions, step: usize) -> Option<u64> {
    cfg.adapt_dropout.then(|| derive_seed(opts.seed, &[step as u64]))
}

/// Adapts a clone of the meta-model on a test task. The query set enters
/// only through the teacher's soft labels; its gold tags are unreachable.
pub fn adapt_with_inheritance(
    tagger: &Tagger,
    meta: &ParamSet,
    support: &[&Instance],
    query: Sealed<'_>,
    cfg: &TrainConfig,
    opts: AdaptOptions,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let grid = soft_labels(tagger, meta, query, cfg.temperature)?;
    let mut params = meta.clone();
    let mut trace = Vec::with_capacity(cfg.adapt_steps);
    let mut trajectory = Vec::new();
    if opts.record {
        trajectory.push(params.clone());
    }
    for s in 0..cfg.adapt_steps {
        let (step, grad) = total_loss_grad(
            tagger,
            &params,
            support,
            query,
            &grid,
            cfg.lambda,
            cfg.ki_reduction,
            dropout_seed(cfg, opts, s),
        )?;
        params.add_scaled(&grad, -cfg.alpha)?;
        trace.push(step);
        if opts.record {
            trajectory.push(params.clone());
        }
    }
    Ok(AdaptOutcome {
        params,
        trace,
        trajectory,
    })
}

/// Plain fine-tuning on the support set, the comparator without
/// inheritance.
pub fn fine_tune(
    tagger: &Tagger,
    init: &ParamSet,
    support: &[&Instance],
    cfg: &TrainConfig,
    opts: AdaptOptions,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let mut params = init.clone();
    let mut trace = Vec::with_capacity(cfg.adapt_steps);
    let mut trajectory = Vec::new();
    if opts.record {
        trajectory.push(params.clone());
    }
    for s in 0..cfg.adapt_steps {
        let seed = dropout_seed(cfg, opts, s).map(|d| derive_seed(d, &[0]));
        let (crf, grad) = task_loss_grad(tagger, &params, support, seed)?;
        params.add_scaled(&grad, -cfg.alpha)?;
        trace.push(AdaptStep {
            crf,
            ki: 0.0,
            total: crf,
        });
        if opts.record {
            trajectory.push(params.clone());
        }
    }
    Ok(AdaptOutcome {
        params,
        trace,
        trajectory,
    })
}
