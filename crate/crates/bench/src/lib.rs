//! Fixtures shared by the benchmarks.

use mise_core::data::{generate_corpus, SynthConfig};
use mise_core::encoder::{EncoderConfig, Vocabulary};
use mise_core::episodes::{sample_train_task, split_periods, TimeSplit};
use mise_core::meta::{Dataset, ModelConfig, Tagger};
use mise_core::numcore::rng::{rng_from, LabRng};
use mise_core::tagging::{Tag, TagSequence, NUM_TAGS};
use mise_core::Tensor;
use rand::Rng;

/// Random emissions, transitions and gold tags for a post of `n` tokens.
pub fn crf_fixture(n: usize, seed: u64) -> (Tensor, Tensor, TagSequence) {
    let mut rng = rng_from(seed, &[]);
    let mut random = |len: usize| (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
    let em = Tensor::new(vec![n, NUM_TAGS], random(n * NUM_TAGS)).expect("matching shape");
    let tr = Tensor::new(vec![NUM_TAGS, NUM_TAGS], random(NUM_TAGS * NUM_TAGS)).expect("matching shape");
    let mut rng = rng_from(seed, &[1]);
    let gold = (0..n).map(|_| Tag::ALL[rng.gen_range(0..NUM_TAGS)]).collect();
    (em, tr, gold)
}

/// A default-sized model over a small synthetic corpus.
pub struct Workload {
    pub tagger: Tagger,
    pub data: Dataset,
    pub split: TimeSplit,
    pub encoder: EncoderConfig,
}

impl Workload {
    pub fn new(posts_per_period: usize) -> Self {
        let corpus = generate_corpus(&SynthConfig {
            posts_per_period,
            ..SynthConfig::default()
        })
        .expect("valid generator settings");
        let vocab = Vocabulary::build(corpus.posts.iter().flat_map(|p| p.tokens.iter().map(String::as_str)));
        let data = Dataset::from_corpus(&corpus, &vocab).expect("generated corpus");
        let split = split_periods(&corpus).expect("generated periods");
        let encoder = EncoderConfig::default();
        Workload {
            tagger: Tagger::new(ModelConfig::encoder(vocab.len(), encoder)),
            data,
            split,
            encoder,
        }
    }

    /// Support and validation indices of `count` training tasks.
    pub fn tasks(&self, count: usize, k: usize, eval_size: usize, rng: &mut LabRng) -> Vec<(Vec<usize>, Vec<usize>)> {
        (0..count)
            .map(|_| {
                let t = sample_train_task(&self.split, k, eval_size, rng).expect("enough past posts");
                (t.support, t.eval)
            })
            .collect()
    }
}
