//! Linear-chain CRF over the five BIOES classes.
//!
//! A sequence `y` scores `Σ_i U(y_i, h_i) + Σ_i T(y_i, y_{i+1})`, where the
//! emission matrix holds `U` row by row and `T` is a 5×5 transition matrix.
//! Boundaries are unscored unless optional start/end vectors are supplied.
//! All dynamic programs run in log space.

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};
use crate::tagging::{Tag, TagSequence, NUM_TAGS};

const K: usize = NUM_TAGS;

/// Transition parameters of the chain.
#[derive(Debug, Clone, Copy)]
pub struct Transitions<'a> {
    pub matrix: &'a Tensor,
    pub start: Option<&'a Tensor>,
    pub end: Option<&'a Tensor>,
}

impl<'a> Transitions<'a> {
    pub fn new(matrix: &'a Tensor) -> Self {
        Transitions {
            matrix,
            start: None,
            end: None,
        }
    }

    pub fn with_boundaries(matrix: &'a Tensor, start: &'a Tensor, end: &'a Tensor) -> Self {
        Transitions {
            matrix,
            start: Some(start),
            end: Some(end),
        }
    }

    fn check(&self) -> Result<()> {
        self.matrix.require_shape("transition matrix", &[K, K])?;
        if let Some(s) = self.start {
            s.require_shape("start scores", &[K])?;
        }
        if let Some(e) = self.end {
            e.require_shape("end scores", &[K])?;
        }
        Ok(())
    }

    fn t(&self, a: usize, b: usize) -> f64 {
        self.matrix.data()[a * K + b]
    }

    fn start(&self, c: usize) -> f64 {
        self.start.map_or(0.0, |s| s.data()[c])
    }

    fn end(&self, c: usize) -> f64 {
        self.end.map_or(0.0, |e| e.data()[c])
    }
}

fn check_emissions(em: &Tensor) -> Result<usize> {
    if em.shape().len() != 2 || em.shape()[1] != K {
        return Err(Error::shape("emission scores", &[em.rows(), K], em.shape()));
    }
    Ok(em.rows())
}

fn check_len(em_rows: usize, tags: &[Tag]) -> Result<()> {
    if tags.len() != em_rows {
        return Err(Error::shape("tag sequence", &[em_rows], &[tags.len()]));
    }
    Ok(())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unnormalized log score of one tag sequence.
pub fn path_score(em: &Tensor, tr: &Transitions<'_>, tags: &[Tag]) -> Result<f64> {
    let n = check_emissions(em)?;
    tr.check()?;
    check_len(n, tags)?;
    let Some(&first) = tags.first() else {
        return Ok(0.0);
    };
    let mut s = tr.start(first.index());
    for (i, t) in tags.iter().enumerate() {
        s += em.at(i, t.index());
    }
    for w in tags.windows(2) {
        s += tr.t(w[0].index(), w[1].index());
    }
    Ok(s + tr.end(tags[n - 1].index()))
}

/// Forward messages `alpha[i][c]`: log-sum of all prefixes ending in `c` at `i`.
fn forward(em: &Tensor, tr: &Transitions<'_>) -> Vec<[f64; K]> {
    let n = em.rows();
    let mut alpha = vec![[0.0; K]; n];
    for c in 0..K {
        alpha[0][c] = tr.start(c) + em.at(0, c);
    }
    let mut buf = [0.0; K];
    for i in 1..n {
        for c in 0..K {
            for a in 0..K {
                buf[a] = alpha[i - 1][a] + tr.t(a, c);
            }
            alpha[i][c] = em.at(i, c) + log_sum_exp(&buf);
        }
    }
    alpha
}

/// Backward messages `beta[i][a]`: log-sum of all suffixes after `a` at `i`.
fn backward(em: &Tensor, tr: &Transitions<'_>) -> Vec<[f64; K]> {
    let n = em.rows();
    let mut beta = vec![[0.0; K]; n];
    for a in 0..K {
        beta[n - 1][a] = tr.end(a);
    }
    let mut buf = [0.0; K];
    for i in (0..n.saturating_sub(1)).rev() {
        for a in 0..K {
            for c in 0..K {
                buf[c] = tr.t(a, c) + em.at(i + 1, c) + beta[i + 1][c];
            }
            beta[i][a] = log_sum_exp(&buf);
        }
    }
    beta
}

fn finish(alpha_last: &[f64; K], tr: &Transitions<'_>) -> f64 {
    let mut buf = [0.0; K];
    for c in 0..K {
        buf[c] = alpha_last[c] + tr.end(c);
    }
    log_sum_exp(&buf)
}

/// Log of the sum of `exp(path_score)` over all `5^n` sequences.
pub fn log_partition(em: &Tensor, tr: &Transitions<'_>) -> Result<f64> {
    let n = check_emissions(em)?;
    tr.check()?;
    if n == 0 {
        return Err(Error::InvalidArgument("empty emission matrix".into()));
    }
    let alpha = forward(em, tr);
    Ok(finish(&alpha[n - 1], tr))
}

/// `-log p(gold | emissions)`.
pub fn nll_loss(em: &Tensor, tr: &Transitions<'_>, gold: &[Tag]) -> Result<f64> {
    Ok(log_partition(em, tr)? - path_score(em, tr, gold)?)
}

/// Negative log-likelihood with its partial derivatives.
#[derive(Debug, Clone)]
pub struct NllGrad {
    pub value: f64,
    pub d_emissions: Tensor,
    pub d_transitions: Tensor,
    pub d_start: Tensor,
    pub d_end: Tensor,
}

/// NLL and its gradient (expected minus observed feature counts, from
/// forward-backward marginals).
pub fn nll_with_grad(em: &Tensor, tr: &Transitions<'_>, gold: &[Tag]) -> Result<NllGrad> {
    let n = check_emissions(em)?;
    tr.check()?;
    check_len(n, gold)?;
    if n == 0 {
        return Err(Error::InvalidArgument("empty emission matrix".into()));
    }
    let alpha = forward(em, tr);
    let beta = backward(em, tr);
    let log_z = finish(&alpha[n - 1], tr);
    let gold_score = path_score(em, tr, gold)?;

    let mut d_em = vec![0.0; n * K];
    let mut d_tr = vec![0.0; K * K];
    let mut d_start = vec![0.0; K];
    let mut d_end = vec![0.0; K];
    for i in 0..n {
        for c in 0..K {
            d_em[i * K + c] = (alpha[i][c] + beta[i][c] - log_z).exp();
        }
    }
    for i in 0..n.saturating_sub(1) {
        for a in 0..K {
            for c in 0..K {
                d_tr[a * K + c] +=
                    (alpha[i][a] + tr.t(a, c) + em.at(i + 1, c) + beta[i + 1][c] - log_z).exp();
            }
        }
    }
    d_start.copy_from_slice(&d_em[..K]);
    d_end.copy_from_slice(&d_em[(n - 1) * K..]);

    for (i, t) in gold.iter().enumerate() {
        d_em[i * K + t.index()] -= 1.0;
    }
    for w in gold.windows(2) {
        d_tr[w[0].index() * K + w[1].index()] -= 1.0;
    }
    d_start[gold[0].index()] -= 1.0;
    d_end[gold[n - 1].index()] -= 1.0;

    Ok(NllGrad {
        value: log_z - gold_score,
        d_emissions: Tensor::from_parts(vec![n, K], d_em),
        d_transitions: Tensor::from_parts(vec![K, K], d_tr),
        d_start: Tensor::from_parts(vec![K], d_start),
        d_end: Tensor::from_parts(vec![K], d_end),
    })
}

/// Tape handles of the CRF parameters.
#[derive(Debug, Clone, Copy)]
pub struct TransitionVars {
    pub matrix: Var,
    pub start: Option<Var>,
    pub end: Option<Var>,
}

/// Records the sequence NLL as one fused node on `tape`.
pub fn nll_on_tape(tape: &mut Tape<'_>, emissions: Var, tv: TransitionVars, gold: &[Tag]) -> Result<Var> {
    let grad = {
        let em = tape.value(emissions);
        let tr = Transitions {
            matrix: tape.value(tv.matrix),
            start: tv.start.map(|v| tape.value(v)),
            end: tv.end.map(|v| tape.value(v)),
        };
        nll_with_grad(em, &tr, gold)?
    };
    let mut inputs = vec![emissions, tv.matrix];
    let mut partials = vec![grad.d_emissions, grad.d_transitions];
    if let Some(s) = tv.start {
        inputs.push(s);
        partials.push(grad.d_start);
    }
    if let Some(e) = tv.end {
        inputs.push(e);
        partials.push(grad.d_end);
    }
    Ok(tape.fused_scalar("crf_nll", &inputs, grad.value, partials))
}

/// Highest-scoring tag sequence and its score. With `constrain`, forbidden
/// BIOES transitions and boundaries are masked out. Ties go to the lowest
/// class index.
pub fn viterbi(em: &Tensor, tr: &Transitions<'_>, constrain: bool) -> Result<(TagSequence, f64)> {
    let n = check_emissions(em)?;
    tr.check()?;
    if n == 0 {
        return Err(Error::InvalidArgument("empty emission matrix".into()));
    }
    let tags = Tag::ALL;
    let trans = |a: usize, b: usize| {
        if constrain && !tags[a].can_precede(tags[b]) {
            f64::NEG_INFINITY
        } else {
            tr.t(a, b)
        }
    };

    let mut score = [0.0; K];
    for c in 0..K {
        score[c] = if constrain && !tags[c].can_start() {
            f64::NEG_INFINITY
        } else {
            tr.start(c) + em.at(0, c)
        };
    }
    let mut back = vec![[0usize; K]; n];
    for i in 1..n {
        let mut next = [0.0; K];
        for c in 0..K {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for a in 0..K {
                let s = score[a] + trans(a, c);
                if s > best {
                    best = s;
                    arg = a;
                }
            }
            next[c] = best + em.at(i, c);
            back[i][c] = arg;
        }
        score = next;
    }
    let (mut best, mut last) = (f64::NEG_INFINITY, 0);
    for c in 0..K {
        let s = if constrain && !tags[c].can_end() {
            f64::NEG_INFINITY
        } else {
            score[c] + tr.end(c)
        };
        if s > best {
            best = s;
            last = c;
        }
    }
    let mut path = vec![Tag::O; n];
    let mut cur = last;
    for i in (0..n).rev() {
        path[i] = tags[cur];
        cur = back[i][cur];
    }
    Ok((path, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check, ParamSet};
    use crate::tagging::validate_transitions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fixture(n: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
        (
            Tensor::uniform(&[n, K], -2.0, 2.0, rng),
            Tensor::uniform(&[K, K], -2.0, 2.0, rng),
        )
    }

    fn all_paths(n: usize) -> Vec<TagSequence> {
        (0..K.pow(n as u32))
            .map(|mut code| {
                (0..n)
                    .map(|_| {
                        let t = Tag::ALL[code % K];
                        code /= K;
                        t
                    })
                    .collect()
            })
            .collect()
    }

    /// Brute-force log partition: log-sum-exp over every path.
    fn brute_log_z(em: &Tensor, tr: &Transitions<'_>) -> f64 {
        let scores: Vec<f64> = all_paths(em.rows())
            .iter()
            .map(|p| path_score(em, tr, p).unwrap())
            .collect();
        log_sum_exp(&scores)
    }

    #[test]
    fn single_token_cases() {
        let em = Tensor::matrix(1, K, vec![0.1, 2.0, -1.0, 0.5, 2.0]).unwrap();
        let t = Tensor::zeros(&[K, K]);
        let tr = Transitions::new(&t);
        assert_eq!(path_score(&em, &tr, &[Tag::E]).unwrap(), 0.5);
        let lz = log_partition(&em, &tr).unwrap();
        assert!((lz - log_sum_exp(em.data())).abs() < 1e-15);
        let (path, s) = viterbi(&em, &tr, false).unwrap();
        // B and S tie at 2.0; the lower index wins.
        assert_eq!(path, vec![Tag::B]);
        assert_eq!(s, 2.0);
    }

    #[test]
    fn uniform_scores() {
        let t = Tensor::zeros(&[K, K]);
        let tr = Transitions::new(&t);
        let em3 = Tensor::zeros(&[3, K]);
        assert!((log_partition(&em3, &tr).unwrap() - 125f64.ln()).abs() < 1e-12);
        let em2 = Tensor::zeros(&[2, K]);
        let nll = nll_loss(&em2, &tr, &[Tag::S, Tag::I]).unwrap();
        assert!((nll - 25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_sum_on_a_three_token_fixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (em, t) = random_fixture(3, &mut rng);
        let tr = Transitions::new(&t);
        let tags = [Tag::B, Tag::E, Tag::O];
        let hand = em.at(0, 1) + em.at(1, 3) + em.at(2, 0) + t.at(1, 3) + t.at(3, 0);
        assert!((path_score(&em, &tr, &tags).unwrap() - hand).abs() < 1e-15);
    }

    #[test]
    fn concatenation_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (em, t) = random_fixture(5, &mut rng);
        let tr = Transitions::new(&t);
        let tags = [Tag::O, Tag::B, Tag::E, Tag::S, Tag::O];
        let a = Tensor::matrix(2, K, em.data()[..2 * K].to_vec()).unwrap();
        let b = Tensor::matrix(3, K, em.data()[2 * K..].to_vec()).unwrap();
        let whole = path_score(&em, &tr, &tags).unwrap();
        let parts = path_score(&a, &tr, &tags[..2]).unwrap()
            + path_score(&b, &tr, &tags[2..]).unwrap()
            + t.at(Tag::B.index(), Tag::E.index());
        assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=4 {
            let (em, t) = random_fixture(n, &mut rng);
            let tr = Transitions::new(&t);
            let fast = log_partition(&em, &tr).unwrap();
            assert!((fast - brute_log_z(&em, &tr)).abs() < 1e-9);
        }
        let (em, t) = random_fixture(3, &mut rng);
        let s = Tensor::uniform(&[K], -1.0, 1.0, &mut rng);
        let e = Tensor::uniform(&[K], -1.0, 1.0, &mut rng);
        let tr = Transitions::with_boundaries(&t, &s, &e);
        assert!((log_partition(&em, &tr).unwrap() - brute_log_z(&em, &tr)).abs() < 1e-9);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=6 {
            let (em, t) = random_fixture(n, &mut rng);
            let tr = Transitions::new(&t);
            let lz = log_partition(&em, &tr).unwrap();
            let mut total = 0.0;
            for p in all_paths(n) {
                let pr = (path_score(&em, &tr, &p).unwrap() - lz).exp();
                assert!(pr > 0.0 && pr <= 1.0);
                total += pr;
            }
            assert!((total - 1.0).abs() < 1e-9, "n={n}: {total}");
        }
    }

    #[test]
    fn shift_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut em, t) = random_fixture(4, &mut rng);
        let tr = Transitions::new(&t);
        let before = log_partition(&em, &tr).unwrap();
        for c in 0..K {
            em.data_mut()[2 * K + c] += 3.25;
        }
        let after = log_partition(&em, &tr).unwrap();
        assert!((after - before - 3.25).abs() < 1e-12);
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (em, t) = random_fixture(5, &mut rng);
            let tr = Transitions::new(&t);
            let best = all_paths(5)
                .iter()
                .map(|p| path_score(&em, &tr, p).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            let (path, score) = viterbi(&em, &tr, false).unwrap();
            assert!((score - best).abs() < 1e-12);
            assert!((path_score(&em, &tr, &path).unwrap() - best).abs() < 1e-12);
            let gold: Vec<Tag> = (0..5).map(|_| Tag::ALL[rng.gen_range(0..K)]).collect();
            assert!(score >= path_score(&em, &tr, &gold).unwrap());
        }
    }

    #[test]
    fn constrained_viterbi_is_always_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=8);
            let (em, t) = random_fixture(n, &mut rng);
            let (path, score) = viterbi(&em, &Transitions::new(&t), true).unwrap();
            assert!(validate_transitions(&path).is_empty(), "{path:?}");
            assert!(score.is_finite());
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (em, t) = random_fixture(3, &mut rng);
        let mut p = ParamSet::new();
        p.insert("em", em).unwrap();
        p.insert("t", t).unwrap();
        p.insert("s", Tensor::uniform(&[K], -1.0, 1.0, &mut rng)).unwrap();
        p.insert("e", Tensor::uniform(&[K], -1.0, 1.0, &mut rng)).unwrap();
        let gold = [Tag::S, Tag::B, Tag::E];
        let f = |q: &ParamSet| {
            let tr = Transitions::with_boundaries(q.require("t")?, q.require("s")?, q.require("e")?);
            let g = nll_with_grad(q.require("em")?, &tr, &gold)?;
            let grads: ParamSet = [
                ("em".to_string(), g.d_emissions),
                ("t".to_string(), g.d_transitions),
                ("s".to_string(), g.d_start),
                ("e".to_string(), g.d_end),
            ]
            .into_iter()
            .collect();
            Ok((g.value, grads))
        };
        let r = grad_check(f, &p, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(f(&p).unwrap().0 > 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let em = Tensor::zeros(&[3, K]);
        let t = Tensor::zeros(&[K, K]);
        assert!(path_score(&em, &Transitions::new(&t), &[Tag::O]).is_err());
        assert!(nll_loss(&em, &Transitions::new(&t), &[Tag::O; 4]).is_err());
        let bad = Tensor::zeros(&[3, 4]);
        assert!(log_partition(&bad, &Transitions::new(&t)).is_err());
    }
}
