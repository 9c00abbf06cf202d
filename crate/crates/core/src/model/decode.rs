//! Constrained decoding: ε-dithered sampling, greedy and beam search.

use std::cmp::Ordering;

use rand::Rng;

use super::{DecoderState, Encoding, Model};
use crate::ltl::{continuation_mask, Token, NUM_TOKENS};

fn uniform_valid<R: Rng + ?Sized>(mask: &[bool; NUM_TOKENS], rng: &mut R) -> Token {
    let valid: Vec<usize> = (0..NUM_TOKENS).filter(|&i| mask[i]).collect();
    Token::ALL[valid[rng.gen_range(0..valid.len())]]
}

fn sample_from<R: Rng + ?Sized>(logp: &[f64; NUM_TOKENS], mask: &[bool; NUM_TOKENS], rng: &mut R) -> Token {
    let mut u: f64 = rng.gen();
    let mut last = None;
    for i in 0..NUM_TOKENS {
        if !mask[i] {
            continue;
        }
        let p = logp[i].exp();
        if u < p {
            return Token::ALL[i];
        }
        u -= p;
        last = Some(i);
    }
    Token::ALL[last.expect("mask is never empty")]
}

/// Sample a complete formula of at most `max_len` tokens (EOS excluded).
/// At each step, with probability `1 - eps` the token comes from the model,
/// otherwise uniformly from the valid continuations.
pub fn sample_formula_eps<R: Rng + ?Sized>(
    model: &Model,
    enc: &Encoding,
    eps: f64,
    max_len: usize,
    rng: &mut R,
) -> Vec<Token> {
    let mut state = model.parser_start(enc, max_len.max(1));
    loop {
        let mask = state.mask();
        let (lp, hidden, c) = model.parser_step(enc, &state);
        let t = if rng.gen::<f64>() < eps {
            uniform_valid(&mask, rng)
        } else {
            sample_from(&lp, &mask, rng)
        };
        if t == Token::Eos {
            return state.prefix;
        }
        state = Model::advance(&state, t, hidden, c);
    }
}

/// A complete formula drawn by uniform valid-continuation sampling; no model
/// involved.
pub fn sample_uniform_formula<R: Rng + ?Sized>(max_len: usize, rng: &mut R) -> Vec<Token> {
    let max_len = max_len.max(1);
    let mut prefix = Vec::new();
    let mut depth = 0usize;
    loop {
        let mask = continuation_mask(depth, max_len - prefix.len());
        let t = uniform_valid(&mask, rng);
        match t.arity() {
            None => return prefix,
            Some(a) => depth = depth + 1 - a,
        }
        prefix.push(t);
    }
}

/// Most likely token at every step.
pub fn greedy_decode(model: &Model, enc: &Encoding, max_len: usize) -> (Vec<Token>, f64) {
    let mut state = model.parser_start(enc, max_len.max(1));
    let mut total = 0.0;
    loop {
        let (lp, hidden, c) = model.parser_step(enc, &state);
        let mut best = None;
        for (i, &v) in lp.iter().enumerate() {
            if v > f64::NEG_INFINITY && best.is_none_or(|b: usize| v > lp[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("mask is never empty");
        total += lp[b];
        let t = Token::ALL[b];
        if t == Token::Eos {
            return (state.prefix, total);
        }
        state = Model::advance(&state, t, hidden, c);
    }
}

struct Beam {
    state: DecoderState,
    log_prob: f64,
    done: bool,
}

fn rank(a: (&[Token], f64), b: (&[Token], f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| {
        let ka: Vec<usize> = a.0.iter().map(|t| t.index()).collect();
        let kb: Vec<usize> = b.0.iter().map(|t| t.index()).collect();
        ka.cmp(&kb)
    })
}

/// Beam search over total log-probability without length normalization.
/// Returns up to `width` complete formulas, best first. The greedy
/// hypothesis is always considered, so the top result is never worse than
/// greedy decoding.
pub fn beam_decode(model: &Model, enc: &Encoding, width: usize, max_len: usize) -> Vec<(Vec<Token>, f64)> {
    let width = width.max(1);
    let mut beams = vec![Beam {
        state: model.parser_start(enc, max_len.max(1)),
        log_prob: 0.0,
        done: false,
    }];
    while beams.iter().any(|b| !b.done) {
        // (parent beam, appended token, score)
        let mut pool: Vec<(usize, Option<Token>, f64)> = Vec::new();
        let mut outputs = Vec::with_capacity(beams.len());
        for (i, b) in beams.iter().enumerate() {
            if b.done {
                pool.push((i, None, b.log_prob));
                outputs.push(None);
                continue;
            }
            let (lp, hidden, c) = model.parser_step(enc, &b.state);
            for (ti, &v) in lp.iter().enumerate() {
                if v > f64::NEG_INFINITY {
                    pool.push((i, Some(Token::ALL[ti]), b.log_prob + v));
                }
            }
            outputs.push(Some((hidden, c)));
        }
        let key = |&(i, t, s): &(usize, Option<Token>, f64)| {
            let mut toks = beams[i].state.prefix.clone();
            if let Some(t) = t {
                toks.push(t);
            }
            (toks, s)
        };
        pool.sort_by(|a, b| {
            let (ta, sa) = key(a);
            let (tb, sb) = key(b);
            rank((&ta, sa), (&tb, sb))
        });
        pool.truncate(width);
        beams = pool
            .into_iter()
            .map(|(i, t, s)| match t {
                None => Beam {
                    state: beams[i].state.clone(),
                    log_prob: s,
                    done: true,
                },
                Some(Token::Eos) => Beam {
                    state: beams[i].state.clone(),
                    log_prob: s,
                    done: true,
                },
                Some(t) => {
                    let (hidden, c) = outputs[i].clone().expect("live beam has output");
                    Beam {
                        state: Model::advance(&beams[i].state, t, hidden, c),
                        log_prob: s,
                        done: false,
                    }
                }
            })
            .collect();
    }
    let mut out: Vec<(Vec<Token>, f64)> = beams.into_iter().map(|b| (b.state.prefix, b.log_prob)).collect();
    if width > 1 {
        let greedy = greedy_decode(model, enc, max_len);
        if !out.iter().any(|(t, _)| *t == greedy.0) {
            out.push(greedy);
            out.sort_by(|a, b| rank((&a.0, a.1), (&b.0, b.1)));
            out.truncate(width);
        }
    }
    out
}

/// `k` independent draws of [`sample_formula_eps`]. Draws that share a prefix
/// share the decoder computation for it.
pub fn sample_formulas_eps<R: Rng + ?Sized>(
    model: &Model,
    enc: &Encoding,
    eps: f64,
    max_len: usize,
    k: usize,
    rng: &mut R,
) -> Vec<Vec<Token>> {
    let mut out = Vec::with_capacity(k);
    let mut groups = vec![(model.parser_start(enc, max_len.max(1)), k)];
    while let Some((state, count)) = groups.pop() {
        let mask = state.mask();
        let (lp, hidden, c) = model.parser_step(enc, &state);
        let mut counts = [0usize; NUM_TOKENS];
        for _ in 0..count {
            let t = if rng.gen::<f64>() < eps {
                uniform_valid(&mask, rng)
            } else {
                sample_from(&lp, &mask, rng)
            };
            counts[t.index()] += 1;
        }
        for i in (0..NUM_TOKENS).rev() {
            if counts[i] == 0 {
                continue;
            }
            let t = Token::ALL[i];
            if t == Token::Eos {
                out.extend(std::iter::repeat_n(state.prefix.clone(), counts[i]));
            } else {
                groups.push((Model::advance(&state, t, hidden.clone(), c.clone()), counts[i]));
            }
        }
    }
    out
}
