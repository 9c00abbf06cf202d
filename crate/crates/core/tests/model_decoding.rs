//! Validity, normalization and search checks of the constrained decoders.

use std::collections::HashMap;

use ltlground::ltl::{decode_postorder, stack_depth, valid_continuations, Token, NUM_TOKENS};
use ltlground::model::{beam_decode, greedy_decode, sample_formula_eps, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(seed: u64, scale: f64) -> Model {
    let cfg = ModelConfig {
        word_dim: 8,
        token_dim: 8,
        hidden: 8,
        layers: 1,
        dropout: 0.0,
        lr: 1e-3,
    };
    let mut m = Model::new(cfg, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    for t in m.params_mut() {
        for x in &mut t.data {
            *x = rng.gen_range(-scale..scale);
        }
    }
    m
}

fn sentence(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rng.gen_range(1..12);
    (0..n).map(|_| rng.gen_range(0..10)).collect()
}

#[test]
fn eps_samples_always_parse() {
    let m = model(0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..10_000 {
        let x = sentence(&mut rng);
        let enc = m.encode(&x).unwrap();
        let max_len = 1 + i % 15;
        let toks = sample_formula_eps(&m, &enc, 0.15, max_len, &mut rng);
        assert!(toks.len() <= max_len);
        decode_postorder(&toks).unwrap();
    }
}

#[test]
fn max_len_one_gives_atoms() {
    let m = model(1, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let enc = m.encode(&[1, 2, 3]).unwrap();
    for _ in 0..500 {
        let toks = sample_formula_eps(&m, &enc, 0.15, 1, &mut rng);
        assert_eq!(toks.len(), 1);
        assert_eq!(toks[0].arity(), Some(0));
    }
}

#[test]
fn eps_one_is_uniform_over_valid() {
    // a sharply peaked model, so any leak of model probability shows up
    let m = model(2, 4.0);
    let enc = m.encode(&[4, 5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 18_000;
    let mut first: HashMap<Token, usize> = HashMap::new();
    let mut second: HashMap<Token, usize> = HashMap::new();
    for _ in 0..n {
        let toks = sample_formula_eps(&m, &enc, 1.0, 5, &mut rng);
        *first.entry(toks[0]).or_default() += 1;
        let next = toks.get(1).copied().unwrap_or(Token::Eos);
        *second.entry(next).or_default() += 1;
    }
    for (counts, valid) in [
        (&first, valid_continuations(&[], 5)),
        (&second, valid_continuations(&[Token::Apple], 4)),
    ] {
        let p = 1.0 / valid.len() as f64;
        let expected = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for t in &valid {
            let c = *counts.get(t).unwrap_or(&0) as f64;
            assert!((c - expected).abs() < 3.0 * sigma + 1.0, "{t}: {c} vs {expected}");
            chi2 += (c - expected).powi(2) / expected;
        }
        assert_eq!(counts.values().sum::<usize>(), n);
        assert!(counts.keys().all(|t| valid.contains(t)));
        // 0.999 quantile of chi-square with up to 14 degrees of freedom
        assert!(chi2 < 36.1, "chi2 {chi2}");
    }
}

#[test]
fn distributions_normalize_and_respect_mask() {
    let m = model(3, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let x = sentence(&mut rng);
        let enc = m.encode(&x).unwrap();
        let max_len = rng.gen_range(1..12);
        let mut state = m.parser_start(&enc, max_len);
        let stop = rng.gen_range(0..max_len);
        while state.prefix.len() < stop {
            let (lp, hidden, c) = m.parser_step(&enc, &state);
            let valid: Vec<usize> = (0..NUM_TOKENS)
                .filter(|&i| lp[i] > f64::NEG_INFINITY && i != Token::Eos.index())
                .collect();
            if valid.is_empty() {
                break;
            }
            let t = Token::ALL[valid[rng.gen_range(0..valid.len())]];
            state = Model::advance(&state, t, hidden, c);
        }
        let p = m.decode_distribution(&enc, &state);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let allowed = valid_continuations(&state.prefix, state.budget());
        for t in Token::ALL {
            if !allowed.contains(&t) {
                assert_eq!(p[t.index()], 0.0);
            }
        }
        assert_eq!(stack_depth(&state.prefix), Some(state.depth));
        if state.depth == 1 {
            assert_eq!(p[Token::And.index()], 0.0);
        }
    }
}

#[test]
fn beam_outputs_parse() {
    let m = model(4, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let x = sentence(&mut rng);
        let enc = m.encode(&x).unwrap();
        let hyps = beam_decode(&m, &enc, 10, 3 + i % 10);
        assert!(!hyps.is_empty() && hyps.len() <= 10);
        for (toks, lp) in &hyps {
            decode_postorder(toks).unwrap();
            assert!((m.sequence_log_prob(&enc, toks, 3 + i % 10) - lp).abs() < 1e-9);
        }
        assert!(hyps.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}

#[test]
fn beam_width_one_is_greedy_and_wider_dominates() {
    let m = model(5, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let x = sentence(&mut rng);
        let enc = m.encode(&x).unwrap();
        let (g, glp) = greedy_decode(&m, &enc, 9);
        let b1 = beam_decode(&m, &enc, 1, 9);
        assert_eq!(b1.len(), 1);
        assert_eq!(b1[0].0, g);
        assert!((b1[0].1 - glp).abs() < 1e-12);
        let b10 = beam_decode(&m, &enc, 10, 9);
        assert!(b10[0].1 >= glp - 1e-12);
    }
}

/// All complete postorder sequences of 1..=max_len tokens.
fn enumerate(max_len: usize) -> Vec<Vec<Token>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<Token>> = vec![vec![]];
    let body: Vec<Token> = Token::ALL.iter().copied().filter(|t| *t != Token::Eos).collect();
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &layer {
            for &t in &body {
                let mut q = p.clone();
                q.push(t);
                if stack_depth(&q).is_some() {
                    next.push(q);
                }
            }
        }
        out.extend(next.iter().filter(|q| decode_postorder(q).is_ok()).cloned());
        layer = next;
    }
    out
}

#[test]
fn beam_ranking_matches_enumeration() {
    let all = enumerate(3);
    // 9 atoms, 9·2 unary, 9·9·3 + 9·2·2 binary/unary-unary
    assert_eq!(all.len(), 9 + 18 + 243 + 36);
    for seed in 0..5 {
        let m = model(10 + seed, 2.0);
        let enc = m.encode(&[1, 2, 3]).unwrap();
        let mut scored: Vec<(Vec<Token>, f64)> = all
            .iter()
            .map(|t| (t.clone(), m.sequence_log_prob(&enc, t, 3)))
            .collect();
        let total: f64 = scored.iter().map(|s| s.1.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9, "sequence probabilities sum to {total}");
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let full = beam_decode(&m, &enc, all.len(), 3);
        assert_eq!(full.len(), all.len());
        for (a, b) in full.iter().zip(&scored) {
            assert!((a.1 - b.1).abs() < 1e-9);
        }
        assert_eq!(full[0].0, scored[0].0);
        let top = beam_decode(&m, &enc, 10, 3);
        assert!((top[0].1 - scored[0].1).abs() < 1e-9);
    }
}

#[test]
fn batched_sampler_matches_single_draw_marginals() {
    use ltlground::model::sample_formulas_eps;
    let m = model(6, 1.5);
    let enc = m.encode(&[2, 7, 1]).unwrap();
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut single: HashMap<Vec<Token>, usize> = HashMap::new();
    for _ in 0..n {
        *single
            .entry(sample_formula_eps(&m, &enc, 0.15, 4, &mut rng))
            .or_default() += 1;
    }
    let mut batched: HashMap<Vec<Token>, usize> = HashMap::new();
    for _ in 0..n / 100 {
        let draws = sample_formulas_eps(&m, &enc, 0.15, 4, 100, &mut rng);
        assert_eq!(draws.len(), 100);
        for d in draws {
            decode_postorder(&d).unwrap();
            *batched.entry(d).or_default() += 1;
        }
    }
    // compare against exact probabilities of the mixture policy for the
    // frequent sequences
    for (seq, &c) in &single {
        if c < 400 {
            continue;
        }
        let b = *batched.get(seq).unwrap_or(&0) as f64;
        let p = c as f64 / n as f64;
        let sigma = (2.0 * n as f64 * p * (1.0 - p)).sqrt();
        assert!((b - c as f64).abs() < 4.0 * sigma, "{seq:?}: {b} vs {c}");
    }
}
