use serde::{Deserialize, Serialize};

use crate::episodes::DEFAULT_EVAL_SIZE;
use crate::error::{Error, Result};

/// How the inheritance loss is reduced over query posts inside the
/// adaptation objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KiReduction {
    /// Summed over posts and tokens.
    Sum,
    /// Summed over tokens, averaged over posts, like the support loss.
    PostMean,
}

impl std::str::FromStr for KiReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(KiReduction::Sum),
            "post-mean" => Ok(KiReduction::PostMean),
            other => Err(Error::InvalidArgument(format!(
                "unknown KI reduction '{other}' (expected sum or post-mean)"
            ))),
        }
    }
}

/// Hyperparameters of meta-training and meta-test adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Inner-loop and adaptation learning rate.
    pub alpha: f64,
    /// Outer learning rate.
    pub beta: f64,
    pub k: usize,
    pub eval_size: usize,
    pub meta_batch: usize,
    pub max_steps: usize,
    pub inner_steps: usize,
    pub adapt_steps: usize,
    pub lambda: f64,
    pub temperature: f64,
    pub ki_reduction: KiReduction,
    pub weight_decay: f64,
    /// Keep embedding dropout on while adapting at meta-test time.
    pub adapt_dropout: bool,
    /// Differentiate through the inner update with finite-difference
    /// Hessian-vector products. Tiny models only.
    pub second_order: bool,
    /// Outer steps between validation snapshots; 0 disables them.
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e-2,
            beta: 5e-3,
            k: 5,
            eval_size: DEFAULT_EVAL_SIZE,
            meta_batch: 4,
            max_steps: 5000,
            inner_steps: 1,
            adapt_steps: 10,
            lambda: 0.2,
            temperature: 5.0,
            ki_reduction: KiReduction::PostMean,
            weight_decay: 0.01,
            adapt_dropout: false,
            second_order: false,
            snapshot_every: 250,
            seed: 42,
        }
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        check_lambda(self.lambda)?;
        check_temperature(self.temperature)?;
        for (name, v) in [("k", self.k), ("eval size", self.eval_size), ("meta batch", self.meta_batch)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }
}
