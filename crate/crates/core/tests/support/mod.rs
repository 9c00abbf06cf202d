//! Independent oracles shared by the integration tests. Nothing here calls
//! into the automaton compiler or the product planner.
#![allow(dead_code)]

use ltlground::automata::Valuation;
use ltlground::ltl::{Formula, Predicate};
use ltlground::world::{self, Action, Environment};
use rand::seq::SliceRandom;
use rand::Rng;

/// Direct recursive LTL_f semantics: does suffix `i..` of `trace` satisfy `f`?
pub fn holds(f: &Formula, trace: &[Valuation], i: usize) -> bool {
    let n = trace.len();
    match f {
        Formula::Atom(p) => trace[i].get(*p),
        Formula::And(a, b) => holds(a, trace, i) && holds(b, trace, i),
        Formula::Or(a, b) => holds(a, trace, i) || holds(b, trace, i),
        Formula::Eventually(a) => (i..n).any(|j| holds(a, trace, j)),
        Formula::Always(a) => (i..n).all(|j| holds(a, trace, j)),
        Formula::Until(a, b) => (i..n).any(|j| holds(b, trace, j) && (i..j).all(|k| holds(a, trace, k))),
    }
}

pub fn satisfies(f: &Formula, trace: &[Valuation]) -> bool {
    !trace.is_empty() && holds(f, trace, 0)
}

/// Random formula with at most `max_len` nodes over `atoms`.
pub fn random_formula<R: Rng>(rng: &mut R, atoms: &[Predicate], max_len: usize) -> Formula {
    assert!(max_len >= 1);
    if max_len < 2 || rng.gen_bool(0.25) {
        return Formula::atom(*atoms.choose(rng).unwrap());
    }
    let unary = max_len < 3 || rng.gen_bool(0.4);
    if unary {
        let inner = random_formula(rng, atoms, max_len - 1);
        if rng.gen_bool(0.5) {
            Formula::eventually(inner)
        } else {
            Formula::always(inner)
        }
    } else {
        let budget = max_len - 1;
        let left_max = rng.gen_range(1..budget);
        let l = random_formula(rng, atoms, left_max);
        let r = random_formula(rng, atoms, budget - l.len());
        match rng.gen_range(0..3) {
            0 => Formula::and(l, r),
            1 => Formula::or(l, r),
            _ => Formula::until(l, r),
        }
    }
}

/// Random formula of depth at most `depth` over all predicates.
pub fn random_deep_formula<R: Rng>(rng: &mut R, depth: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.3) {
        return Formula::atom(*Predicate::ALL.choose(rng).unwrap());
    }
    match rng.gen_range(0..5) {
        0 => Formula::and(random_deep_formula(rng, depth - 1), random_deep_formula(rng, depth - 1)),
        1 => Formula::or(random_deep_formula(rng, depth - 1), random_deep_formula(rng, depth - 1)),
        2 => Formula::until(random_deep_formula(rng, depth - 1), random_deep_formula(rng, depth - 1)),
        3 => Formula::eventually(random_deep_formula(rng, depth - 1)),
        _ => Formula::always(random_deep_formula(rng, depth - 1)),
    }
}

pub fn random_trace<R: Rng>(rng: &mut R, atoms: &[Predicate], len: usize) -> Vec<Valuation> {
    (0..len)
        .map(|_| {
            let mut v = Valuation::empty();
            for &p in atoms {
                v.set(p, rng.gen_bool(0.5));
            }
            v
        })
        .collect()
}

/// All traces of length 1..=max_len over `atoms` (as valuations).
pub fn all_traces(atoms: &[Predicate], max_len: usize) -> Vec<Vec<Valuation>> {
    let letters: Vec<Valuation> = (0..1usize << atoms.len())
        .map(|bits| {
            let mut v = Valuation::empty();
            for (i, &p) in atoms.iter().enumerate() {
                v.set(p, bits & (1 << i) != 0);
            }
            v
        })
        .collect();
    let mut out = Vec::new();
    let mut layer: Vec<Vec<Valuation>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(layer.len() * letters.len());
        for t in &layer {
            for &l in &letters {
                let mut t2 = t.clone();
                t2.push(l);
                next.push(t2);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Languages of `f1` and `f2` agree on every trace up to `max_len` over the
/// joint support.
pub fn bounded_equal(f1: &Formula, f2: &Formula, max_len: usize) -> bool {
    let mut atoms = f1.support();
    atoms.extend(f2.support());
    atoms.sort();
    atoms.dedup();
    all_traces(&atoms, max_len)
        .iter()
        .all(|t| satisfies(f1, t) == satisfies(f2, t))
}

/// Shortest k ≤ depth such that some action string `s` of length k makes
/// `prefix ++ s` satisfy `f`, by plain enumeration.
pub fn shortest_accepting_suffix(f: &Formula, env: &Environment, prefix: &[Action], depth: usize) -> Option<usize> {
    let mut frontier: Vec<Vec<Action>> = vec![prefix.to_vec()];
    for k in 0..=depth {
        for y in &frontier {
            if !y.is_empty() && satisfies(f, &world::trace_of(env, y)) {
                return Some(k);
            }
        }
        if k == depth {
            break;
        }
        let mut next = Vec::with_capacity(frontier.len() * 5);
        for y in &frontier {
            for a in Action::ALL {
                let mut y2 = y.clone();
                y2.push(a);
                next.push(y2);
            }
        }
        frontier = next;
    }
    None
}
