//! Synthetic continual-stressor corpora.
//!
//! Each post is filler text with zero to two embedded stressor spans. A
//! stressor class owns a few surface tokens and realizes itself through one
//! of two short patterns. Class frequencies in past periods follow a Zipf
//! law; the latest period draws a configured share of its spans from classes
//! that never occur earlier. Spans are preceded by generic cue tokens and
//! followed by a class-specific context token with fixed probabilities, so
//! that context generalizes to unseen classes.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episodes::{Corpus, Period, Post};
use crate::error::{Error, Result};
use crate::numcore::rng::{rng_from, LabRng};
use crate::tagging::{encode_spans, Span};

const CUE_TOKENS: usize = 10;
const TOKENS_PER_CLASS: usize = 3;
const PATTERNS_PER_CLASS: usize = 2;
const MIN_FILLERS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vocab_size: usize,
    /// Classes that occur in past periods.
    pub num_classes: usize,
    /// Classes reserved for the latest period.
    pub novel_classes: usize,
    pub zipf_exponent: f64,
    pub num_periods: usize,
    pub first_period: String,
    /// Share of latest-period spans drawn from novel classes.
    pub novel_fraction: f64,
    pub posts_per_period: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a span is preceded by a generic cue token.
    pub cue_rate: f64,
    /// Probability that a span is followed by its class context token.
    pub context_rate: f64,
    /// Probability that a post mentions a stressor token outside any span.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 1200,
            num_classes: 40,
            novel_classes: 8,
            zipf_exponent: 1.1,
            num_periods: 8,
            first_period: "2018H2".into(),
            novel_fraction: 0.3,
            posts_per_period: 150,
            min_len: 8,
            max_len: 20,
            cue_rate: 0.7,
            context_rate: 0.5,
            distractor_rate: 0.15,
            seed: 13,
        }
    }
}

impl SynthConfig {
    fn total_classes(&self) -> usize {
        self.num_classes + self.novel_classes
    }

    /// Tokens reserved for cues, class context and class surface forms.
    fn reserved_tokens(&self) -> usize {
        CUE_TOKENS + self.total_classes() * (1 + TOKENS_PER_CLASS)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.zipf_exponent > 0.0) {
            return bad(format!("zipf exponent must be positive, got {}", self.zipf_exponent));
        }
        if !(0.0..=1.0).contains(&self.novel_fraction) {
            return bad(format!("novel fraction must lie in [0, 1], got {}", self.novel_fraction));
        }
        for (name, p) in [
            ("cue rate", self.cue_rate),
            ("context rate", self.context_rate),
            ("distractor rate", self.distractor_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.num_classes == 0 {
            return bad("at least one past class is required".into());
        }
        if self.novel_fraction > 0.0 && self.novel_classes == 0 {
            return bad("a positive novel fraction needs novel classes".into());
        }
        if self.num_periods < 2 {
            return bad("at least two periods are required".into());
        }
        if self.posts_per_period == 0 {
            return bad("posts per period must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("invalid post length range {}..={}", self.min_len, self.max_len));
        }
        if self.vocab_size < self.reserved_tokens() + MIN_FILLERS {
            return bad(format!(
                "vocabulary of {} cannot hold {} classes (needs at least {})",
                self.vocab_size,
                self.total_classes(),
                self.reserved_tokens() + MIN_FILLERS
            ));
        }
        self.first_period.parse::<Period>()?;
        Ok(())
    }

    pub fn periods(&self) -> Result<Vec<Period>> {
        let mut p: Period = self.first_period.parse()?;
        let mut out = Vec::with_capacity(self.num_periods);
        for _ in 0..self.num_periods {
            out.push(p);
            p = p.next();
        }
        Ok(out)
    }
}

/// Surface inventory drawn once per corpus.
struct Lexicon {
    cues: Vec<String>,
    context: Vec<String>,
    /// `patterns[class][variant]` is a token sequence.
    patterns: Vec<Vec<Vec<String>>>,
    class_tokens: Vec<Vec<String>>,
    fillers: Vec<String>,
    filler_dist: WeightedIndex<f64>,
}

impl Lexicon {
    fn new(cfg: &SynthConfig, rng: &mut LabRng) -> Result<Self> {
        let classes = cfg.total_classes();
        let cues = (0..CUE_TOKENS).map(|i| format!("cue{i:02}")).collect();
        let context = (0..classes).map(|c| format!("ctx{c:03}")).collect();
        let class_tokens: Vec<Vec<String>> = (0..classes)
            .map(|c| (0..TOKENS_PER_CLASS).map(|j| format!("s{c:03}{}", (b'a' + j as u8) as char)).collect())
            .collect();
        let len_dist = WeightedIndex::new([0.35, 0.4, 0.25]).expect("static weights");
        let patterns = class_tokens
            .iter()
            .map(|pool| {
                (0..PATTERNS_PER_CLASS)
                    .map(|_| {
                        let len = len_dist.sample(rng) + 1;
                        pool.choose_multiple(rng, len).cloned().collect()
                    })
                    .collect()
            })
            .collect();
        let n_fill = cfg.vocab_size - cfg.reserved_tokens();
        let fillers = (0..n_fill).map(|i| format!("w{i:04}")).collect();
        let filler_dist = zipf_weights(n_fill, 1.0)?;
        Ok(Lexicon {
            cues,
            context,
            patterns,
            class_tokens,
            fillers,
            filler_dist,
        })
    }
}

fn zipf_weights(n: usize, exponent: f64) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new((1..=n).map(|r| (r as f64).powf(-exponent)))
        .map_err(|e| Error::InvalidArgument(format!("zipf weights: {e}")))
}

/// A stressor mention about to be placed in a post.
struct Mention {
    tokens: Vec<String>,
    /// Offset and length of the span inside `tokens`.
    span_offset: usize,
    span_len: usize,
}

/// Generates a labeled corpus; deterministic in `cfg.seed`.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    Ok(generate_with_classes(cfg)?.0)
}

/// Like [`generate_corpus`], additionally returning the class id of every
/// span in post order.
pub fn generate_with_classes(cfg: &SynthConfig) -> Result<(Corpus, Vec<Vec<usize>>)> {
    cfg.validate()?;
    let periods = cfg.periods()?;
    let lexicon = Lexicon::new(cfg, &mut rng_from(cfg.seed, &[0]))?;
    let past_dist = zipf_weights(cfg.num_classes, cfg.zipf_exponent)?;
    let mut posts = Vec::with_capacity(cfg.num_periods * cfg.posts_per_period);
    let mut classes = Vec::with_capacity(posts.capacity());
    for (pi, period) in periods.iter().enumerate() {
        let latest = pi + 1 == periods.len();
        let mut rng = rng_from(cfg.seed, &[1, pi as u64]);
        for _ in 0..cfg.posts_per_period {
            let (post, cls) = generate_post(cfg, &lexicon, &past_dist, latest, period, &mut rng)?;
            posts.push(post);
            classes.push(cls);
        }
    }
    Ok((Corpus::new(posts), classes))
}

fn generate_post(
    cfg: &SynthConfig,
    lex: &Lexicon,
    past_dist: &WeightedIndex<f64>,
    latest: bool,
    period: &Period,
    rng: &mut LabRng,
) -> Result<(Post, Vec<usize>)> {
    let n_spans = match rng.gen::<f64>() {
        x if x < 0.15 => 0,
        x if x < 0.75 => 1,
        _ => 2,
    };
    let mut mentions = Vec::with_capacity(n_spans);
    let mut span_classes = Vec::with_capacity(n_spans);
    for _ in 0..n_spans {
        let class = if latest && rng.gen::<f64>() < cfg.novel_fraction {
            cfg.num_classes + rng.gen_range(0..cfg.novel_classes)
        } else {
            past_dist.sample(rng)
        };
        span_classes.push(class);
        let pattern = &lex.patterns[class][rng.gen_range(0..PATTERNS_PER_CLASS)];
        let mut tokens = Vec::new();
        if rng.gen::<f64>() < cfg.cue_rate {
            tokens.push(lex.cues[rng.gen_range(0..lex.cues.len())].clone());
        }
        let span_offset = tokens.len();
        tokens.extend(pattern.iter().cloned());
        if rng.gen::<f64>() < cfg.context_rate {
            tokens.push(lex.context[class].clone());
        }
        mentions.push(Mention {
            tokens,
            span_offset,
            span_len: pattern.len(),
        });
    }

    let content: usize = mentions.iter().map(|m| m.tokens.len()).sum();
    let min_gaps = n_spans.saturating_sub(1);
    let len = rng.gen_range(cfg.min_len..=cfg.max_len).max(content + min_gaps);
    let mut gaps = vec![0usize; n_spans + 1];
    for g in gaps.iter_mut().take(n_spans).skip(1) {
        *g = 1;
    }
    for _ in 0..len - content - min_gaps {
        let g = rng.gen_range(0..gaps.len());
        gaps[g] += 1;
    }

    let mut tokens = Vec::with_capacity(len);
    let mut spans = Vec::with_capacity(n_spans);
    let mut filler_slots = Vec::new();
    let mut push_fillers = |tokens: &mut Vec<String>, count: usize, rng: &mut LabRng| {
        for _ in 0..count {
            filler_slots.push(tokens.len());
            tokens.push(lex.fillers[lex.filler_dist.sample(rng)].clone());
        }
    };
    for (m, gap) in mentions.iter().zip(&gaps) {
        push_fillers(&mut tokens, *gap, rng);
        let start = tokens.len() + m.span_offset;
        spans.push(Span::new(start, start + m.span_len - 1));
        tokens.extend(m.tokens.iter().cloned());
    }
    push_fillers(&mut tokens, gaps[n_spans], rng);

    if !filler_slots.is_empty() && rng.gen::<f64>() < cfg.distractor_rate {
        let slot = filler_slots[rng.gen_range(0..filler_slots.len())];
        let class = past_dist.sample(rng);
        let pool = &lex.class_tokens[class];
        tokens[slot] = pool[rng.gen_range(0..pool.len())].clone();
    }

    let tags = encode_spans(&spans, tokens.len())?;
    Ok((
        Post {
            tokens,
            tags: Some(tags),
            period: period.to_string(),
        },
        span_classes,
    ))
}
