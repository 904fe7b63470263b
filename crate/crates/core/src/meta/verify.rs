//! Gradient self-check over a family of tiny seeded models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::numcore::rng::{derive_seed, rng_from};
use crate::numcore::grad_check;
use crate::tagging::{Tag, NUM_TAGS};

use super::config::KiReduction;
use super::inherit::{ki_loss_grad, soft_labels, total_loss_grad};
use super::model::{Input, Instance, ModelConfig, Sealed, Tagger};
use super::train::task_loss_grad;

const VOCAB: usize = 6;
const EPS: f64 = 1e-5;

/// Worst relative gradient error per loss for one seeded model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub seed: u64,
    pub params: usize,
    pub nll: f64,
    pub ki: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSuite {
    pub rows: Vec<GradCheckRow>,
    pub max_rel_error: f64,
}

/// The model every suite entry uses: a two-unit recurrent encoder over a
/// six-token vocabulary, under 100 parameters.
pub fn tiny_model() -> Tagger {
    Tagger::new(ModelConfig::encoder(
        VOCAB,
        EncoderConfig {
            embed_dim: 3,
            hidden: 2,
            dropout: 0.0,
            init_scale: 0.5,
        },
    ))
}

fn post(rng: &mut impl Rng, labeled: bool) -> Result<Instance> {
    let len = rng.gen_range(1..5);
    let ids = (0..len).map(|_| rng.gen_range(2..VOCAB)).collect();
    let tags = labeled.then(|| (0..len).map(|_| Tag::ALL[rng.gen_range(0..NUM_TAGS)]).collect());
    Instance::new(Input::Ids(ids), tags)
}

/// Checks the CRF loss, the inheritance loss and the blended objective on
/// `models` tiny models with random parameters, posts and hyperparameters.
pub fn gradient_suite(models: usize, seed: u64) -> Result<GradSuite> {
    let tagger = tiny_model();
    let mut rows = Vec::with_capacity(models);
    for m in 0..models {
        let s = derive_seed(seed, &[m as u64]);
        let mut rng = rng_from(s, &[]);
        let support = (0..2).map(|_| post(&mut rng, true)).collect::<Result<Vec<_>>>()?;
        let query = (0..2).map(|_| post(&mut rng, false)).collect::<Result<Vec<_>>>()?;
        let s_refs: Vec<&Instance> = support.iter().collect();
        let q_refs: Vec<&Instance> = query.iter().collect();
        let sealed = Sealed::new(&q_refs);
        let teacher = tagger.init_params(derive_seed(s, &[1]))?;
        let student = tagger.init_params(derive_seed(s, &[2]))?;
        let t = rng.gen_range(1.0..9.0);
        let lambda = rng.gen_range(0.1..0.9);
        let grid = soft_labels(&tagger, &teacher, sealed, t)?;

        let nll = grad_check(|p| task_loss_grad(&tagger, p, &s_refs, None), &student, EPS)?;
        let ki = grad_check(|p| ki_loss_grad(&tagger, p, sealed, &grid, None), &student, EPS)?;
        let total = grad_check(
            |p| {
                let (step, g) = total_loss_grad(&tagger, p, &s_refs, sealed, &grid, lambda, KiReduction::PostMean, None)?;
                Ok((step.total, g))
            },
            &student,
            EPS,
        )?;
        rows.push(GradCheckRow {
            seed: s,
            params: student.num_values(),
            nll: nll.max_rel_error,
            ki: ki.max_rel_error,
            total: total.max_rel_error,
        });
    }
    let max_rel_error = rows.iter().map(|r| r.nll.max(r.ki).max(r.total)).fold(0.0, f64::max);
    Ok(GradSuite { rows, max_rel_error })
}
