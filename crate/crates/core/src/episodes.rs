//! Time-partitioned corpora and meta-task sampling.
//!
//! Posts carry a half-year label (`2019H1`, `2019H2`, ...). The latest label
//! forms the adaptation pool `D_l`; every earlier label is a past period in
//! `D_p`. Training tasks draw support and validation posts from one past
//! period, test tasks draw support and query posts from `D_l`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagging::TagSequence;

pub const DEFAULT_EVAL_SIZE: usize = 15;

/// A half-year period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Period {
    pub year: u16,
    /// 1 for January-June, 2 for July-December.
    pub half: u8,
}

impl Period {
    pub fn new(year: u16, half: u8) -> Result<Self> {
        if half != 1 && half != 2 {
            return Err(Error::Data(format!("half must be 1 or 2, got {half}")));
        }
        Ok(Period { year, half })
    }

    pub fn next(self) -> Period {
        if self.half == 1 {
            Period { year: self.year, half: 2 }
        } else {
            Period { year: self.year + 1, half: 1 }
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}H{}", self.year, self.half)
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("unparseable period label `{s}` (expected YYYYH1 or YYYYH2)"));
        let (year, half) = s.split_once('H').ok_or_else(bad)?;
        if year.len() != 4 || half.len() != 1 {
            return Err(bad());
        }
        let year: u16 = year.parse().map_err(|_| bad())?;
        let half: u8 = half.parse().map_err(|_| bad())?;
        Period::new(year, half).map_err(|_| bad())
    }
}

/// A tokenized post with optional gold tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Post {
    pub tokens: Vec<String>,
    pub tags: Option<TagSequence>,
    pub period: String,
}

impl Post {
    pub fn is_labeled(&self) -> bool {
        self.tags.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub posts: Vec<Post>,
}

impl Corpus {
    pub fn new(posts: Vec<Post>) -> Self {
        Corpus { posts }
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.posts.iter().map(|p| p.tokens.len()).collect()
    }
}

/// Posts of one period, as indices into the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeriodPosts {
    pub period: Period,
    pub posts: Vec<usize>,
    /// The labeled subset, the only posts tasks are sampled from.
    pub labeled: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TimeSplit {
    /// Past periods in chronological order.
    pub past: Vec<PeriodPosts>,
    pub latest: PeriodPosts,
}

impl TimeSplit {
    /// Post counts per period label, past first.
    pub fn counts(&self) -> Vec<(String, usize)> {
        self.past
            .iter()
            .chain(std::iter::once(&self.latest))
            .map(|p| (p.period.to_string(), p.posts.len()))
            .collect()
    }

    pub fn past_labeled(&self) -> Vec<usize> {
        self.past.iter().flat_map(|p| p.labeled.iter().copied()).collect()
    }

    /// Randomly removes `fraction` of the labeled past posts (pooled across
    /// periods). Returns the reduced split and the held-out indices.
    pub fn hold_out_past<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Result<(TimeSplit, Vec<usize>)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "holdout fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let pool = self.past_labeled();
        let n_hold = (fraction * pool.len() as f64).round() as usize;
        if n_hold == 0 || n_hold == pool.len() {
            return Err(Error::Sampling(format!(
                "cannot hold out {fraction} of {} labeled past posts",
                pool.len()
            )));
        }
        let mut held: Vec<usize> = sample(rng, pool.len(), n_hold).into_iter().map(|i| pool[i]).collect();
        held.sort_unstable();
        let reduced = TimeSplit {
            past: self
                .past
                .iter()
                .map(|p| PeriodPosts {
                    period: p.period,
                    posts: p.posts.iter().copied().filter(|i| held.binary_search(i).is_err()).collect(),
                    labeled: p.labeled.iter().copied().filter(|i| held.binary_search(i).is_err()).collect(),
                })
                .collect(),
            latest: self.latest.clone(),
        };
        Ok((reduced, held))
    }
}

/// Groups posts by half-year label; the maximal label becomes `D_l`.
pub fn split_periods(corpus: &Corpus) -> Result<TimeSplit> {
    let mut groups: BTreeMap<Period, PeriodPosts> = BTreeMap::new();
    for (i, post) in corpus.posts.iter().enumerate() {
        let period: Period = post
            .period
            .parse()
            .map_err(|e| Error::Data(format!("post {i}: {e}")))?;
        let entry = groups.entry(period).or_insert_with(|| PeriodPosts {
            period,
            posts: Vec::new(),
            labeled: Vec::new(),
        });
        entry.posts.push(i);
        if post.is_labeled() {
            entry.labeled.push(i);
        }
    }
    if groups.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 time periods for a past/latest split, found {}",
            groups.len()
        )));
    }
    let mut past: Vec<PeriodPosts> = groups.into_values().collect();
    let latest = past.pop().expect("at least two periods");
    Ok(TimeSplit { past, latest })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Train,
    Test,
}

/// One episode: `K` support posts plus a disjoint evaluation set (validation
/// for training tasks, query for test tasks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetaTask {
    pub kind: TaskKind,
    pub period: Period,
    pub support: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Partial Fisher-Yates over `pool`: the evaluation set comes first, then
/// the support set. For a fixed generator state the picks for a smaller
/// `k` are a prefix of those for a larger one, so tasks with different shot
/// counts share their evaluation set and nest their supports.
fn draw<R: Rng + ?Sized>(pool: &[usize], k: usize, eval_size: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut order = pool.to_vec();
    for i in 0..eval_size + k {
        let j = rng.gen_range(i..order.len());
        order.swap(i, j);
    }
    let eval = order[..eval_size].to_vec();
    let support = order[eval_size..eval_size + k].to_vec();
    (support, eval)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(())
}

/// Picks a past period uniformly among those with at least `k + eval_size`
/// labeled posts, then draws support and validation without replacement.
pub fn sample_train_task<R: Rng + ?Sized>(split: &TimeSplit, k: usize, eval_size: usize, rng: &mut R) -> Result<MetaTask> {
    check_k(k)?;
    let eligible: Vec<&PeriodPosts> = split
        .past
        .iter()
        .filter(|p| p.labeled.len() >= k + eval_size)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Sampling(format!(
            "no past period has {} labeled posts (K={k}, eval={eval_size})",
            k + eval_size
        )));
    }
    let chosen = eligible[rng.gen_range(0..eligible.len())];
    let (support, eval) = draw(&chosen.labeled, k, eval_size, rng);
    Ok(MetaTask {
        kind: TaskKind::Train,
        period: chosen.period,
        support,
        eval,
    })
}

/// Draws disjoint support and query sets from the latest period.
pub fn sample_test_task<R: Rng + ?Sized>(split: &TimeSplit, k: usize, eval_size: usize, rng: &mut R) -> Result<MetaTask> {
    check_k(k)?;
    let pool = &split.latest;
    if pool.labeled.len() < k + eval_size {
        return Err(Error::Sampling(format!(
            "latest period {} has {} labeled posts, needs {} (K={k}, query={eval_size})",
            pool.period,
            pool.labeled.len(),
            k + eval_size
        )));
    }
    let (support, eval) = draw(&pool.labeled, k, eval_size, rng);
    Ok(MetaTask {
        kind: TaskKind::Test,
        period: pool.period,
        support,
        eval,
    })
}
