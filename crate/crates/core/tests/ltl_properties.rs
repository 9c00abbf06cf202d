mod support;

use ltlground::ltl::{decode_postorder, encode_postorder, stack_depth, valid_continuations, Formula, Token};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn postorder_round_trip_10k() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let f = support::random_deep_formula(&mut rng, 8);
        let toks = encode_postorder(&f);
        assert_eq!(toks.len(), f.len());
        assert_eq!(decode_postorder(&toks).unwrap(), f);
    }
}

/// Whether `prefix` can be completed with at most `budget` further tokens,
/// by brute-force enumeration of every continuation string.
fn completable(prefix: &[Token], budget: usize) -> bool {
    if decode_postorder(prefix).is_ok() {
        return true;
    }
    if budget == 0 || stack_depth(prefix).is_none() {
        return false;
    }
    Token::ALL.iter().filter(|&&t| t != Token::Eos).any(|&t| {
        let mut p = prefix.to_vec();
        p.push(t);
        completable(&p, budget - 1)
    })
}

// Symbol set reduced to one representative per arity for the exhaustive
// check; the continuation rule depends only on arity.
const REPS: [Token; 3] = [Token::Apple, Token::Eventually, Token::And];

fn prefixes(max_len: usize) -> Vec<Vec<Token>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &layer {
            for &t in &REPS {
                let mut q: Vec<Token> = p.clone();
                q.push(t);
                if stack_depth(&q).is_some() {
                    next.push(q);
                }
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

#[test]
fn continuations_sound_and_complete() {
    for prefix in prefixes(5) {
        for budget in 0..=6 {
            let allowed = valid_continuations(&prefix, budget);
            for t in Token::ALL {
                let ok = if t == Token::Eos {
                    decode_postorder(&prefix).is_ok()
                } else if budget == 0 {
                    false
                } else {
                    let mut p = prefix.clone();
                    p.push(t);
                    stack_depth(&p).is_some() && completable(&p, budget - 1)
                };
                assert_eq!(allowed.contains(&t), ok, "prefix {prefix:?} budget {budget} token {t}");
            }
        }
    }
}

#[test]
fn sampling_from_continuations_always_parses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5_000 {
        let max_len = rng.gen_range(1..16);
        let mut prefix = Vec::new();
        loop {
            let opts = valid_continuations(&prefix, max_len - prefix.len());
            assert!(!opts.is_empty());
            let t = opts[rng.gen_range(0..opts.len())];
            if t == Token::Eos {
                break;
            }
            prefix.push(t);
        }
        assert!(prefix.len() <= max_len);
        decode_postorder(&prefix).unwrap();
    }
}

fn arb_formula() -> impl Strategy<Value = Formula> {
    let leaf = (0usize..9).prop_map(|i| Formula::atom(ltlground::ltl::Predicate::ALL[i]));
    leaf.prop_recursive(8, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::until(a, b)),
            inner.clone().prop_map(Formula::eventually),
            inner.prop_map(Formula::always),
        ]
    })
}

proptest! {
    #[test]
    fn text_format_round_trips(f in arb_formula()) {
        let text = f.to_postorder_string();
        prop_assert_eq!(Formula::parse_postorder(&text).unwrap(), f);
    }
}
