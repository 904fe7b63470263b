use serde::{Deserialize, Serialize};

use crate::crf::{self, TransitionVars, Transitions};
use crate::encoder::{encode_on_tape, EncodedPost, EncoderConfig, Mode, Vocabulary};
use crate::episodes::Corpus;
use crate::error::{Error, Result};
use crate::numcore::rng::rng_from;
use crate::numcore::{ParamSet, Tape, Tensor, Var};
use crate::tagging::{TagSequence, NUM_TAGS};

pub const EMISSION_WEIGHT: &str = "crf.emission.weight";
pub const EMISSION_BIAS: &str = "crf.emission.bias";
pub const TRANSITIONS: &str = "crf.transitions";
pub const START: &str = "crf.start";
pub const END: &str = "crf.end";

/// Where token representations come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backbone {
    /// The trainable recurrent encoder over a vocabulary of this size.
    Encoder { vocab_size: usize, config: EncoderConfig },
    /// Fixed external vectors of this width.
    Precomputed { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    /// Learned start and end scores in the CRF.
    pub boundaries: bool,
}

impl ModelConfig {
    pub fn encoder(vocab_size: usize, config: EncoderConfig) -> Self {
        ModelConfig {
            backbone: Backbone::Encoder { vocab_size, config },
            boundaries: false,
        }
    }

    pub fn precomputed(dim: usize) -> Self {
        ModelConfig {
            backbone: Backbone::Precomputed { dim },
            boundaries: false,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.backbone {
            Backbone::Encoder { config, .. } => config.output_dim(),
            Backbone::Precomputed { dim } => dim,
        }
    }
}

/// Model input for one post.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Ids(Vec<usize>),
    Reps(Tensor),
}

impl Input {
    pub fn len(&self) -> usize {
        match self {
            Input::Ids(ids) => ids.len(),
            Input::Reps(r) => r.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of precomputed representations; `None` for token ids.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Input::Ids(_) => None,
            Input::Reps(r) => Some(r.cols()),
        }
    }
}

/// A post prepared for the model, with its gold tags if labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub input: Input,
    gold: Option<TagSequence>,
}

impl Instance {
    pub fn new(input: Input, gold: Option<TagSequence>) -> Result<Self> {
        if let Some(g) = &gold {
            if g.len() != input.len() {
                return Err(Error::Data(format!(
                    "{} tags for a post of {} tokens",
                    g.len(),
                    input.len()
                )));
            }
        }
        Ok(Instance { input, gold })
    }

    pub fn is_labeled(&self) -> bool {
        self.gold.is_some()
    }

    pub fn gold(&self) -> Result<&TagSequence> {
        self.gold
            .as_ref()
            .ok_or_else(|| Error::Data("post has no gold tags".into()))
    }
}

/// A set of posts whose gold tags must not be read. Only the inputs are
/// reachable; asking for labels fails.
#[derive(Debug, Clone, Copy)]
pub struct Sealed<'a> {
    posts: &'a [&'a Instance],
}

impl<'a> Sealed<'a> {
    pub fn new(posts: &'a [&'a Instance]) -> Self {
        Sealed { posts }
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn input(&self, i: usize) -> &'a Input {
        &self.posts[i].input
    }

    pub fn inputs(&self) -> impl Iterator<Item = &'a Input> + 'a {
        self.posts.iter().map(|p| &p.input)
    }

    pub fn gold(&self, _i: usize) -> Result<&'a TagSequence> {
        Err(Error::GoldLabelAccess)
    }
}

/// Model inputs for every post of a corpus, indexed like the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn from_corpus(corpus: &Corpus, vocab: &Vocabulary) -> Result<Self> {
        let instances = corpus
            .posts
            .iter()
            .map(|p| Instance::new(Input::Ids(vocab.ids(&p.tokens)), p.tags.clone()))
            .collect::<Result<_>>()?;
        Ok(Dataset { instances })
    }

    pub fn from_precomputed(corpus: &Corpus, reps: Vec<EncodedPost>) -> Result<Self> {
        if reps.len() != corpus.len() {
            return Err(Error::Data(format!(
                "{} precomputed posts for a corpus of {}",
                reps.len(),
                corpus.len()
            )));
        }
        let instances = corpus
            .posts
            .iter()
            .zip(reps)
            .map(|(p, r)| Instance::new(Input::Reps(r.reps), p.tags.clone()))
            .collect::<Result<_>>()?;
        Ok(Dataset { instances })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Vec<&Instance> {
        idx.iter().map(|&i| &self.instances[i]).collect()
    }
}

/// Encoder plus linear emission layer plus CRF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tagger {
    pub config: ModelConfig,
}

impl Tagger {
    pub fn new(config: ModelConfig) -> Self {
        Tagger { config }
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        let mut p = match self.config.backbone {
            Backbone::Encoder { vocab_size, config } => config.init_params(vocab_size, seed)?,
            Backbone::Precomputed { dim } => {
                if dim == 0 {
                    return Err(Error::InvalidArgument("representation width must be positive".into()));
                }
                ParamSet::new()
            }
        };
        let mut rng = rng_from(seed, &[0x637266]);
        let d = self.config.feature_dim();
        p.insert(EMISSION_WEIGHT, Tensor::uniform(&[d, NUM_TAGS], -0.1, 0.1, &mut rng))?;
        p.insert(EMISSION_BIAS, Tensor::zeros(&[NUM_TAGS]))?;
        p.insert(TRANSITIONS, Tensor::zeros(&[NUM_TAGS, NUM_TAGS]))?;
        if self.config.boundaries {
            p.insert(START, Tensor::zeros(&[NUM_TAGS]))?;
            p.insert(END, Tensor::zeros(&[NUM_TAGS]))?;
        }
        Ok(p)
    }

    /// Records the `n x 5` emission scores of one post.
    pub fn emissions_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        input: &Input,
        mode: Mode,
    ) -> Result<Var> {
        let h = match (&self.config.backbone, input) {
            (Backbone::Encoder { config, .. }, Input::Ids(ids)) => encode_on_tape(tape, params, config, ids, mode)?,
            (Backbone::Precomputed { dim }, Input::Reps(reps)) => {
                if reps.rows() == 0 {
                    return Err(Error::InvalidArgument("cannot tag an empty post".into()));
                }
                reps.require_shape("precomputed representations", &[reps.rows(), *dim])?;
                tape.constant(reps.clone())
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "input kind does not match the model backbone".into(),
                ))
            }
        };
        let d = self.config.feature_dim();
        let w = params.require(EMISSION_WEIGHT)?;
        w.require_shape(EMISSION_WEIGHT, &[d, NUM_TAGS])?;
        let b = params.require(EMISSION_BIAS)?;
        b.require_shape(EMISSION_BIAS, &[NUM_TAGS])?;
        let (wv, bv) = (tape.param(EMISSION_WEIGHT, w), tape.param(EMISSION_BIAS, b));
        let logits = tape.matmul(h, wv);
        Ok(tape.add_bias(logits, bv))
    }

    pub fn emissions(&self, params: &ParamSet, input: &Input) -> Result<Tensor> {
        let mut tape = Tape::new();
        let em = self.emissions_on_tape(&mut tape, params, input, Mode::Eval)?;
        tape.check()?;
        Ok(tape.value(em).clone())
    }

    pub fn transitions<'a>(&self, params: &'a ParamSet) -> Result<Transitions<'a>> {
        let m = params.require(TRANSITIONS)?;
        m.require_shape(TRANSITIONS, &[NUM_TAGS, NUM_TAGS])?;
        Ok(if self.config.boundaries {
            Transitions::with_boundaries(m, params.require(START)?, params.require(END)?)
        } else {
            Transitions::new(m)
        })
    }

    pub fn transition_vars<'p>(&self, tape: &mut Tape<'p>, params: &'p ParamSet) -> Result<TransitionVars> {
        let tr = self.transitions(params)?;
        Ok(TransitionVars {
            matrix: tape.param(TRANSITIONS, tr.matrix),
            start: tr.start.map(|s| tape.param(START, s)),
            end: tr.end.map(|e| tape.param(END, e)),
        })
    }

    /// Records the CRF negative log-likelihood of one labeled post.
    pub fn nll_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        post: &Instance,
        mode: Mode,
    ) -> Result<Var> {
        let em = self.emissions_on_tape(tape, params, &post.input, mode)?;
        let tv = self.transition_vars(tape, params)?;
        crf::nll_on_tape(tape, em, tv, post.gold()?)
    }

    pub fn nll(&self, params: &ParamSet, post: &Instance) -> Result<f64> {
        crf::nll_loss(&self.emissions(params, &post.input)?, &self.transitions(params)?, post.gold()?)
    }

    pub fn decode(&self, params: &ParamSet, input: &Input, constrain: bool) -> Result<TagSequence> {
        let em = self.emissions(params, input)?;
        Ok(crf::viterbi(&em, &self.transitions(params)?, constrain)?.0)
    }
}
