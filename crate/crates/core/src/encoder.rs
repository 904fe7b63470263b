//! Token encoder: embeddings followed by a bidirectional Elman layer.
//!
//! The encoder maps a post of token ids to one row per token. Forward and
//! backward recurrent states are concatenated, so the output width is twice
//! the hidden size. Representations exported by an external model can be
//! loaded instead through [`load_precomputed`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::rng::rng_from;
use crate::numcore::{dropout_mask, ParamSet, Tape, Tensor, Var};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

pub const EMBEDDING: &str = "encoder.embedding";

/// Dense token ids, with padding at 0 and the unknown token at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Collects every distinct token, sorted so that ids do not depend on
    /// corpus order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let distinct: BTreeSet<&str> = tokens.into_iter().filter(|t| *t != PAD && *t != UNK).collect();
        let list: Vec<String> = [PAD, UNK].into_iter().chain(distinct).map(str::to_string).collect();
        Vocabulary::from(list)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub init_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            hidden: 64,
            dropout: 0.1,
            init_scale: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("encoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Fresh encoder parameters drawn uniformly from `[-init_scale, init_scale]`.
    pub fn init_params(&self, vocab_size: usize, seed: u64) -> Result<ParamSet> {
        self.validate()?;
        let mut rng = rng_from(seed, &[0x656e63]);
        let s = self.init_scale;
        let (e, h) = (self.embed_dim, self.hidden);
        let mut p = ParamSet::new();
        p.insert(EMBEDDING, Tensor::uniform(&[vocab_size, e], -s, s, &mut rng))?;
        for dir in ["fwd", "bwd"] {
            p.insert(format!("encoder.{dir}.w_in"), Tensor::uniform(&[e, h], -s, s, &mut rng))?;
            p.insert(format!("encoder.{dir}.w_hid"), Tensor::uniform(&[h, h], -s, s, &mut rng))?;
            p.insert(format!("encoder.{dir}.bias"), Tensor::uniform(&[h], -s, s, &mut rng))?;
        }
        Ok(p)
    }
}

/// Whether dropout is applied. Training masks are drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Records the encoder forward pass on `tape` and returns the `n x 2h`
/// representation node.
pub fn encode_on_tape<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    cfg: &EncoderConfig,
    ids: &[usize],
    mode: Mode,
) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty post".into()));
    }
    let table = params.require(EMBEDDING)?;
    table.require_shape(EMBEDDING, &[table.rows(), cfg.embed_dim])?;
    if let Some(&bad) = ids.iter().find(|&&id| id >= table.rows()) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} exceeds vocabulary size {}",
            table.rows()
        )));
    }
    let emb = tape.param(EMBEDDING, table);
    let mut x = tape.gather(emb, ids);
    if let Mode::Train { seed } = mode {
        if cfg.dropout > 0.0 {
            let mask = dropout_mask(&[ids.len(), cfg.embed_dim], cfg.dropout, &mut rng_from(seed, &[0x64726f70]))?;
            let m = tape.constant(mask);
            x = tape.mul(x, m);
        }
    }
    let mut dirs = Vec::with_capacity(2);
    for (dir, reverse) in [("fwd", false), ("bwd", true)] {
        let name = |p: &str| format!("encoder.{dir}.{p}");
        let (h, e) = (cfg.hidden, cfg.embed_dim);
        let w_in = params.require(&name("w_in"))?;
        w_in.require_shape(&name("w_in"), &[e, h])?;
        let w_hid = params.require(&name("w_hid"))?;
        w_hid.require_shape(&name("w_hid"), &[h, h])?;
        let bias = params.require(&name("bias"))?;
        bias.require_shape(&name("bias"), &[h])?;
        let (wi, wh, b) = (
            tape.param(&name("w_in"), w_in),
            tape.param(&name("w_hid"), w_hid),
            tape.param(&name("bias"), bias),
        );
        dirs.push(tape.recurrent(x, wi, wh, b, reverse));
    }
    Ok(tape.concat_cols(dirs[0], dirs[1]))
}

/// Per-token representations of one post.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPost {
    pub reps: Tensor,
}

impl EncodedPost {
    pub fn len(&self) -> usize {
        self.reps.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.reps.cols()
    }
}

/// Encodes a post outside any training graph.
pub fn encode(params: &ParamSet, cfg: &EncoderConfig, ids: &[usize], mode: Mode) -> Result<EncodedPost> {
    let mut tape = Tape::new();
    let out = encode_on_tape(&mut tape, params, cfg, ids, mode)?;
    tape.check()?;
    Ok(EncodedPost {
        reps: tape.value(out).clone(),
    })
}

/// Reads externally computed representations, checking them against the
/// corpus post lengths.
pub fn load_precomputed(path: &Path, lengths: &[usize]) -> Result<Vec<EncodedPost>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_precomputed(&text, lengths, &path.display().to_string())
}

pub fn parse_precomputed(text: &str, lengths: &[usize], source: &str) -> Result<Vec<EncodedPost>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let dim = match lines.next() {
        Some((_, header)) => header
            .strip_prefix("dim=")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| parse_err(1, format!("expected header 'dim=<d>', found '{header}'")))?,
        None => return Err(parse_err(1, "empty embedding file".into())),
    };

    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); lengths.len()];
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let mut index = |what: &str| {
            fields
                .next()
                .and_then(|f| f.parse::<usize>().ok())
                .ok_or_else(|| parse_err(lineno, format!("missing or invalid {what}")))
        };
        let post = index("post index")?;
        let token = index("token index")?;
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(lineno, format!("invalid float '{f}'"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(parse_err(lineno, format!("expected {dim} values, found {}", values.len())));
        }
        let slot = rows.get_mut(post).ok_or_else(|| {
            Error::Data(format!(
                "post {post}: index beyond the corpus of {} posts",
                lengths.len()
            ))
        })?;
        if token != slot.len() {
            return Err(parse_err(
                lineno,
                format!("post {post}: expected token {} but found token {token}", slot.len()),
            ));
        }
        slot.push(values);
    }

    rows.into_iter()
        .zip(lengths)
        .enumerate()
        .map(|(post, (r, &n))| {
            if r.len() != n {
                return Err(Error::Data(format!(
                    "post {post}: expected {n} token rows, found {}",
                    r.len()
                )));
            }
            let data = r.into_iter().flatten().collect();
            Ok(EncodedPost {
                reps: Tensor::new(vec![n, dim], data)?,
            })
        })
        .collect()
}

pub fn render_precomputed(posts: &[EncodedPost]) -> Result<String> {
    let dim = posts.first().map_or(0, EncodedPost::dim);
    let mut out = format!("dim={dim}\n");
    for (p, post) in posts.iter().enumerate() {
        if post.dim() != dim {
            return Err(Error::shape("precomputed post", &[dim], &[post.dim()]));
        }
        for t in 0..post.len() {
            write!(out, "{p} {t}").expect("string write");
            for v in post.reps.row(t) {
                write!(out, " {v}").expect("string write");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_precomputed(path: &Path, posts: &[EncodedPost]) -> Result<()> {
    fs::write(path, render_precomputed(posts)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng_from;
    use crate::numcore::{grad_check, value_and_grad};
    use rand::Rng;

    fn small() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 6,
            hidden: 5,
            ..Default::default()
        }
    }

    fn linear_loss(params: &ParamSet, cfg: &EncoderConfig, ids: &[usize], weights: &Tensor) -> Result<(f64, ParamSet)> {
        value_and_grad(params, |tape, p| {
            let h = encode_on_tape(tape, p, cfg, ids, Mode::Eval)?;
            let w = tape.constant(weights.clone());
            let prod = tape.mul(h, w);
            Ok(tape.sum(prod))
        })
    }

    #[test]
    fn vocabulary_reserves_pad_and_unk() {
        let v = Vocabulary::build(["b", "a", "b", "<unk>"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.token(PAD_ID), Some("<pad>"));
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.id("zzz"), UNK_ID);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }

    #[test]
    fn output_shape_and_determinism() {
        let cfg = EncoderConfig::default();
        let p = cfg.init_params(20, 1).unwrap();
        let ids = [2, 3, 4, 5, 6, 7, 8];
        let a = encode(&p, &cfg, &ids, Mode::Eval).unwrap();
        assert_eq!(a.reps.shape(), [7, 128]);
        assert_eq!(a, encode(&p, &cfg, &ids, Mode::Eval).unwrap());
    }

    #[test]
    fn swapping_tokens_changes_their_rows() {
        let cfg = small();
        let p = cfg.init_params(10, 3).unwrap();
        let a = encode(&p, &cfg, &[2, 3, 4, 5], Mode::Eval).unwrap();
        let b = encode(&p, &cfg, &[2, 5, 4, 3], Mode::Eval).unwrap();
        assert_ne!(a.reps.row(1), b.reps.row(1));
        assert_ne!(a.reps.row(3), b.reps.row(3));
    }

    #[test]
    fn train_mode_masks_are_seeded() {
        let cfg = EncoderConfig { dropout: 0.5, ..small() };
        let p = cfg.init_params(10, 3).unwrap();
        let ids = [2, 3, 4, 5, 6];
        let eval = encode(&p, &cfg, &ids, Mode::Eval).unwrap();
        let t1 = encode(&p, &cfg, &ids, Mode::Train { seed: 9 }).unwrap();
        let t2 = encode(&p, &cfg, &ids, Mode::Train { seed: 9 }).unwrap();
        let t3 = encode(&p, &cfg, &ids, Mode::Train { seed: 10 }).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, eval);
        assert_ne!(t1, t3);
        let no_drop = EncoderConfig { dropout: 0.0, ..cfg };
        assert_eq!(encode(&p, &no_drop, &ids, Mode::Train { seed: 9 }).unwrap(), eval);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = small();
        let p = cfg.init_params(8, 5).unwrap();
        let ids = [2, 7, 3, 2];
        let w = Tensor::uniform(&[4, 10], -1.0, 1.0, &mut rng_from(5, &[1]));
        let report = grad_check(|q| linear_loss(q, &cfg, &ids, &w), &p, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn absent_tokens_get_zero_embedding_gradient() {
        let cfg = small();
        let p = cfg.init_params(8, 5).unwrap();
        let ids = [2, 4, 4];
        let w = Tensor::uniform(&[3, 10], -1.0, 1.0, &mut rng_from(5, &[2]));
        let (_, g) = linear_loss(&p, &cfg, &ids, &w).unwrap();
        let ge = g.get(EMBEDDING).unwrap();
        for row in 0..8 {
            let nonzero = ge.row(row).iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, row == 2 || row == 4, "row {row}");
        }
    }

    #[test]
    fn long_posts_stay_bounded() {
        let cfg = EncoderConfig {
            init_scale: 1.0,
            ..Default::default()
        };
        let mut rng = rng_from(2, &[]);
        for seed in 0..3 {
            let p = cfg.init_params(50, seed).unwrap();
            let ids: Vec<usize> = (0..128).map(|_| rng.gen_range(0..50)).collect();
            let out = encode(&p, &cfg, &ids, Mode::Eval).unwrap();
            let bound = (cfg.output_dim() as f64).sqrt();
            for t in 0..128 {
                let norm = out.reps.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm.is_finite() && norm <= bound);
            }
        }
    }

    #[test]
    fn invalid_posts_are_rejected() {
        let cfg = small();
        let p = cfg.init_params(8, 5).unwrap();
        assert!(matches!(encode(&p, &cfg, &[], Mode::Eval), Err(Error::InvalidArgument(_))));
        assert!(matches!(encode(&p, &cfg, &[2, 8], Mode::Eval), Err(Error::InvalidArgument(_))));
    }

    fn fixture() -> Vec<EncodedPost> {
        let mut rng = rng_from(4, &[]);
        [2, 4, 3]
            .iter()
            .map(|&n| EncodedPost {
                reps: Tensor::uniform(&[n, 16], -3.0, 3.0, &mut rng),
            })
            .collect()
    }

    #[test]
    fn precomputed_shapes_follow_the_corpus() {
        let text = render_precomputed(&fixture()).unwrap();
        let posts = parse_precomputed(&text, &[2, 4, 3], "mem").unwrap();
        let shapes: Vec<&[usize]> = posts.iter().map(|p| p.reps.shape()).collect();
        assert_eq!(shapes, [&[2, 16][..], &[4, 16], &[3, 16]]);
    }

    #[test]
    fn precomputed_length_mismatch_names_the_post() {
        let text = render_precomputed(&fixture()).unwrap();
        let err = parse_precomputed(&text, &[2, 5, 3], "mem").unwrap_err();
        assert!(err.to_string().contains("post 1"), "{err}");
        let bad_dim = text.replacen("dim=16", "dim=15", 1);
        assert!(matches!(
            parse_precomputed(&bad_dim, &[2, 4, 3], "mem"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn precomputed_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let posts = fixture();
        write_precomputed(&path, &posts).unwrap();
        let back = load_precomputed(&path, &[2, 4, 3]).unwrap();
        for (a, b) in posts.iter().zip(&back) {
            assert!(a.reps.data().iter().zip(b.reps.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
