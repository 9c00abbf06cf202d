//! Synchronous grammar for machine-generated commands. Each derivation
//! expands to a sentence and, in lockstep, to a formula in one of the six
//! temporal classes. Negated productions are never generated.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ltl::{Formula, Predicate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MannaClass {
    Safety,
    Guarantee,
    Persistence,
    Recurrence,
    Obligation,
    Reactivity,
}

impl MannaClass {
    pub const ALL: [MannaClass; 6] = [
        MannaClass::Safety,
        MannaClass::Guarantee,
        MannaClass::Persistence,
        MannaClass::Recurrence,
        MannaClass::Obligation,
        MannaClass::Reactivity,
    ];

    /// Class counts per 1000 machine sentences.
    pub fn weight(self) -> u32 {
        match self {
            MannaClass::Guarantee => 204,
            MannaClass::Safety => 264,
            MannaClass::Recurrence => 243,
            MannaClass::Persistence => 214,
            MannaClass::Obligation => 52,
            MannaClass::Reactivity => 23,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MannaClass::Safety => "safety",
            MannaClass::Guarantee => "guarantee",
            MannaClass::Persistence => "persistence",
            MannaClass::Recurrence => "recurrence",
            MannaClass::Obligation => "obligation",
            MannaClass::Reactivity => "reactivity",
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> MannaClass {
        let total: u32 = Self::ALL.iter().map(|c| c.weight()).sum();
        let mut u = rng.gen_range(0..total);
        for c in Self::ALL {
            if u < c.weight() {
                return c;
            }
            u -= c.weight();
        }
        unreachable!()
    }
}

impl fmt::Display for MannaClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MannaClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown class `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    And,
    Or,
}

impl BinOp {
    fn word(self) -> &'static str {
        match self {
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    fn apply(self, a: Formula, b: Formula) -> Formula {
        match self {
            BinOp::And => Formula::and(a, b),
            BinOp::Or => Formula::or(a, b),
        }
    }

    fn sample<R: Rng + ?Sized>(rng: &mut R) -> BinOp {
        if rng.gen_bool(0.5) {
            BinOp::And
        } else {
            BinOp::Or
        }
    }
}

/// `P`: a predicate or two predicates joined by a connective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PDeriv {
    Single(Predicate),
    Binary(Predicate, BinOp, Predicate),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SafetyDeriv {
    Prefix(PDeriv),
    Suffix(PDeriv),
    Bin(Box<SafetyDeriv>, BinOp, Box<SafetyDeriv>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuaranteeDeriv {
    Prefix(PDeriv),
    Will(Predicate),
    Bin(Box<GuaranteeDeriv>, BinOp, Box<GuaranteeDeriv>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObligationDeriv {
    SafetyGuarantee(SafetyDeriv, BinOp, GuaranteeDeriv),
    WithSafety(Box<ObligationDeriv>, BinOp, SafetyDeriv),
    WithGuarantee(Box<ObligationDeriv>, BinOp, GuaranteeDeriv),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecurrenceDeriv {
    Base(PDeriv),
    Bin(Box<RecurrenceDeriv>, BinOp, Box<RecurrenceDeriv>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PersistenceDeriv {
    Base(PDeriv),
    Bin(Box<PersistenceDeriv>, BinOp, Box<PersistenceDeriv>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReactivityDeriv {
    RecurrencePersistence(RecurrenceDeriv, BinOp, PersistenceDeriv),
    WithRecurrence(Box<ReactivityDeriv>, BinOp, RecurrenceDeriv),
    WithPersistence(Box<ReactivityDeriv>, BinOp, PersistenceDeriv),
}

/// A derivation from the start symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Derivation {
    Safety(SafetyDeriv),
    Guarantee(GuaranteeDeriv),
    Obligation(ObligationDeriv),
    Recurrence(RecurrenceDeriv),
    Persistence(PersistenceDeriv),
    Reactivity(ReactivityDeriv),
}

impl Derivation {
    pub fn class(&self) -> MannaClass {
        match self {
            Derivation::Safety(_) => MannaClass::Safety,
            Derivation::Guarantee(_) => MannaClass::Guarantee,
            Derivation::Obligation(_) => MannaClass::Obligation,
            Derivation::Recurrence(_) => MannaClass::Recurrence,
            Derivation::Persistence(_) => MannaClass::Persistence,
            Derivation::Reactivity(_) => MannaClass::Reactivity,
        }
    }

    /// Formula side of the derivation, before the closer rewrite.
    pub fn formula(&self) -> Formula {
        match self {
            Derivation::Safety(d) => d.formula(),
            Derivation::Guarantee(d) => d.formula(),
            Derivation::Obligation(d) => d.formula(),
            Derivation::Recurrence(d) => d.formula(),
            Derivation::Persistence(d) => d.formula(),
            Derivation::Reactivity(d) => d.formula(),
        }
    }
}

impl PDeriv {
    fn formula(&self) -> Formula {
        match self {
            PDeriv::Single(p) => Formula::atom(*p),
            PDeriv::Binary(a, op, b) => op.apply(Formula::atom(*a), Formula::atom(*b)),
        }
    }
}

impl SafetyDeriv {
    fn formula(&self) -> Formula {
        match self {
            SafetyDeriv::Prefix(p) | SafetyDeriv::Suffix(p) => Formula::always(p.formula()),
            SafetyDeriv::Bin(a, op, b) => op.apply(a.formula(), b.formula()),
        }
    }
}

impl GuaranteeDeriv {
    fn formula(&self) -> Formula {
        match self {
            GuaranteeDeriv::Prefix(p) => Formula::eventually(p.formula()),
            GuaranteeDeriv::Will(p) => Formula::eventually(Formula::atom(*p)),
            GuaranteeDeriv::Bin(a, op, b) => op.apply(a.formula(), b.formula()),
        }
    }
}

impl ObligationDeriv {
    fn formula(&self) -> Formula {
        match self {
            ObligationDeriv::SafetyGuarantee(s, op, g) => op.apply(s.formula(), g.formula()),
            ObligationDeriv::WithSafety(o, op, s) => op.apply(o.formula(), s.formula()),
            ObligationDeriv::WithGuarantee(o, op, g) => op.apply(o.formula(), g.formula()),
        }
    }
}

impl RecurrenceDeriv {
    fn formula(&self) -> Formula {
        match self {
            RecurrenceDeriv::Base(p) => Formula::always(Formula::eventually(p.formula())),
            RecurrenceDeriv::Bin(a, op, b) => op.apply(a.formula(), b.formula()),
        }
    }
}

impl PersistenceDeriv {
    fn formula(&self) -> Formula {
        match self {
            PersistenceDeriv::Base(p) => Formula::eventually(Formula::always(p.formula())),
            PersistenceDeriv::Bin(a, op, b) => op.apply(a.formula(), b.formula()),
        }
    }
}

impl ReactivityDeriv {
    fn formula(&self) -> Formula {
        match self {
            ReactivityDeriv::RecurrencePersistence(r, op, p) => op.apply(r.formula(), p.formula()),
            ReactivityDeriv::WithRecurrence(x, op, r) => op.apply(x.formula(), r.formula()),
            ReactivityDeriv::WithPersistence(x, op, p) => op.apply(x.formula(), p.formula()),
        }
    }
}

/// Which predicates the grammar may mention and how deep same-class
/// recursion may go.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarConfig {
    pub items: Vec<Predicate>,
    pub landmarks: Vec<Predicate>,
    /// Maximum nesting of recursive productions; beyond it only base
    /// productions are drawn.
    pub max_depth: usize,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            items: Predicate::OBJECTS.to_vec(),
            landmarks: Predicate::DESTINATIONS.to_vec(),
            max_depth: 2,
        }
    }
}

impl GrammarConfig {
    /// Grammar restricted to a subset of the object and destination atoms.
    pub fn restricted(preds: &[Predicate]) -> GrammarConfig {
        GrammarConfig {
            items: Predicate::OBJECTS
                .iter()
                .copied()
                .filter(|p| preds.contains(p))
                .collect(),
            landmarks: Predicate::DESTINATIONS
                .iter()
                .copied()
                .filter(|p| preds.contains(p))
                .collect(),
            max_depth: 2,
        }
    }

    fn predicates(&self) -> Vec<Predicate> {
        self.items.iter().chain(&self.landmarks).copied().collect()
    }
}

struct Sampler<'a, R: ?Sized> {
    cfg: &'a GrammarConfig,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Sampler<'_, R> {
    fn predicate(&mut self) -> Predicate {
        *self.cfg.predicates().choose(self.rng).expect("grammar has predicates")
    }

    fn p(&mut self) -> PDeriv {
        if self.rng.gen_bool(0.5) {
            PDeriv::Single(self.predicate())
        } else {
            let a = self.predicate();
            let op = BinOp::sample(self.rng);
            PDeriv::Binary(a, op, self.predicate())
        }
    }

    /// Uniform over `n` productions, of which the last `recursive` recurse;
    /// past the depth cap only the base ones remain.
    fn production(&mut self, n: usize, recursive: usize, depth: usize) -> usize {
        let allowed = if depth >= self.cfg.max_depth { n - recursive } else { n };
        self.rng.gen_range(0..allowed)
    }

    fn safety(&mut self, depth: usize) -> SafetyDeriv {
        match self.production(3, 1, depth) {
            0 => SafetyDeriv::Prefix(self.p()),
            1 => SafetyDeriv::Suffix(self.p()),
            _ => {
                let a = self.safety(depth + 1);
                let op = BinOp::sample(self.rng);
                SafetyDeriv::Bin(Box::new(a), op, Box::new(self.safety(depth + 1)))
            }
        }
    }

    fn guarantee(&mut self, depth: usize) -> GuaranteeDeriv {
        match self.production(3, 1, depth) {
            0 => GuaranteeDeriv::Prefix(self.p()),
            1 => GuaranteeDeriv::Will(self.predicate()),
            _ => {
                let a = self.guarantee(depth + 1);
                let op = BinOp::sample(self.rng);
                GuaranteeDeriv::Bin(Box::new(a), op, Box::new(self.guarantee(depth + 1)))
            }
        }
    }

    fn obligation(&mut self, depth: usize) -> ObligationDeriv {
        match self.production(3, 2, depth) {
            0 => {
                let s = self.safety(depth + 1);
                let op = BinOp::sample(self.rng);
                ObligationDeriv::SafetyGuarantee(s, op, self.guarantee(depth + 1))
            }
            1 => {
                let o = self.obligation(depth + 1);
                let op = BinOp::sample(self.rng);
                ObligationDeriv::WithSafety(Box::new(o), op, self.safety(depth + 1))
            }
            _ => {
                let o = self.obligation(depth + 1);
                let op = BinOp::sample(self.rng);
                ObligationDeriv::WithGuarantee(Box::new(o), op, self.guarantee(depth + 1))
            }
        }
    }

    fn recurrence(&mut self, depth: usize) -> RecurrenceDeriv {
        match self.production(2, 1, depth) {
            0 => RecurrenceDeriv::Base(self.p()),
            _ => {
                let a = self.recurrence(depth + 1);
                let op = BinOp::sample(self.rng);
                RecurrenceDeriv::Bin(Box::new(a), op, Box::new(self.recurrence(depth + 1)))
            }
        }
    }

    fn persistence(&mut self, depth: usize) -> PersistenceDeriv {
        match self.production(2, 1, depth) {
            0 => PersistenceDeriv::Base(self.p()),
            _ => {
                let a = self.persistence(depth + 1);
                let op = BinOp::sample(self.rng);
                PersistenceDeriv::Bin(Box::new(a), op, Box::new(self.persistence(depth + 1)))
            }
        }
    }

    fn reactivity(&mut self, depth: usize) -> ReactivityDeriv {
        match self.production(3, 2, depth) {
            0 => {
                let r = self.recurrence(depth + 1);
                let op = BinOp::sample(self.rng);
                ReactivityDeriv::RecurrencePersistence(r, op, self.persistence(depth + 1))
            }
            1 => {
                let x = self.reactivity(depth + 1);
                let op = BinOp::sample(self.rng);
                ReactivityDeriv::WithRecurrence(Box::new(x), op, self.recurrence(depth + 1))
            }
            _ => {
                let x = self.reactivity(depth + 1);
                let op = BinOp::sample(self.rng);
                ReactivityDeriv::WithPersistence(Box::new(x), op, self.persistence(depth + 1))
            }
        }
    }
}

/// Sample a derivation of the given class; returns the (pre-rewrite)
/// formula side and the derivation.
pub fn sample_formula<R: Rng + ?Sized>(class: MannaClass, cfg: &GrammarConfig, rng: &mut R) -> (Formula, Derivation) {
    let mut s = Sampler { cfg, rng };
    let d = match class {
        MannaClass::Safety => Derivation::Safety(s.safety(0)),
        MannaClass::Guarantee => Derivation::Guarantee(s.guarantee(0)),
        MannaClass::Obligation => Derivation::Obligation(s.obligation(0)),
        MannaClass::Recurrence => Derivation::Recurrence(s.recurrence(0)),
        MannaClass::Persistence => Derivation::Persistence(s.persistence(0)),
        MannaClass::Reactivity => Derivation::Reactivity(s.reactivity(0)),
    };
    (d.formula(), d)
}

fn entity_word(p: Predicate) -> &'static str {
    match p {
        Predicate::Apple => "apple",
        Predicate::Orange => "orange",
        Predicate::Pear => "pear",
        Predicate::Flag => "flag",
        Predicate::House => "house",
        Predicate::Tree => "tree",
        other => panic!("{other} has no surface form"),
    }
}

const LANDMARK_VERBS: [&str; 3] = ["be around the", "be near the", "go to the"];
const ITEM_VERBS: [&str; 3] = ["hold the", "take the", "possess the"];
const SAFETY_PREFIX: [&str; 2] = ["always", "at all times,"];
const SAFETY_SUFFIX: [&str; 3] = ["forever", "at all times", "all the time"];
const GUARANTEE_PREFIX: [&str; 2] = ["eventually", "at some point"];

struct Realizer<'a, R: ?Sized> {
    rng: &'a mut R,
    out: Vec<String>,
}

impl<R: Rng + ?Sized> Realizer<'_, R> {
    fn words(&mut self, phrase: &str) {
        self.out.extend(tokenize(phrase));
    }

    fn pick(&mut self, options: &[&str]) {
        let w = *options.choose(self.rng).unwrap();
        self.words(w);
    }

    fn predicate(&mut self, p: Predicate) {
        if Predicate::OBJECTS.contains(&p) {
            self.pick(&ITEM_VERBS);
        } else {
            self.pick(&LANDMARK_VERBS);
        }
        self.words(entity_word(p));
    }

    fn p(&mut self, d: &PDeriv) {
        match d {
            PDeriv::Single(p) => self.predicate(*p),
            PDeriv::Binary(a, op, b) => {
                self.predicate(*a);
                self.words(op.word());
                self.predicate(*b);
            }
        }
    }

    fn safety(&mut self, d: &SafetyDeriv) {
        match d {
            SafetyDeriv::Prefix(p) => {
                self.pick(&SAFETY_PREFIX);
                self.p(p);
            }
            SafetyDeriv::Suffix(p) => {
                self.p(p);
                self.pick(&SAFETY_SUFFIX);
            }
            SafetyDeriv::Bin(a, op, b) => {
                self.safety(a);
                self.words(op.word());
                self.safety(b);
            }
        }
    }

    fn guarantee(&mut self, d: &GuaranteeDeriv) {
        match d {
            GuaranteeDeriv::Prefix(p) => {
                self.pick(&GUARANTEE_PREFIX);
                self.p(p);
            }
            GuaranteeDeriv::Will(p) => {
                self.words("guarantee that you will");
                self.predicate(*p);
            }
            GuaranteeDeriv::Bin(a, op, b) => {
                self.guarantee(a);
                self.words(op.word());
                self.guarantee(b);
            }
        }
    }

    fn obligation(&mut self, d: &ObligationDeriv) {
        match d {
            ObligationDeriv::SafetyGuarantee(s, op, g) => {
                self.safety(s);
                self.words(op.word());
                self.guarantee(g);
            }
            ObligationDeriv::WithSafety(o, op, s) => {
                self.obligation(o);
                self.words(op.word());
                self.safety(s);
            }
            ObligationDeriv::WithGuarantee(o, op, g) => {
                self.obligation(o);
                self.words(op.word());
                self.guarantee(g);
            }
        }
    }

    fn recurrence(&mut self, d: &RecurrenceDeriv) {
        match d {
            RecurrenceDeriv::Base(p) => {
                self.words("eventually,");
                self.p(p);
                self.words("and do this repeatedly");
            }
            RecurrenceDeriv::Bin(a, op, b) => {
                self.recurrence(a);
                self.words(op.word());
                self.recurrence(b);
            }
        }
    }

    fn persistence(&mut self, d: &PersistenceDeriv) {
        match d {
            PersistenceDeriv::Base(p) => {
                self.words("at some point, start to");
                self.p(p);
                self.words("and keep doing it");
            }
            PersistenceDeriv::Bin(a, op, b) => {
                self.persistence(a);
                self.words(op.word());
                self.persistence(b);
            }
        }
    }

    fn reactivity(&mut self, d: &ReactivityDeriv) {
        match d {
            ReactivityDeriv::RecurrencePersistence(r, op, p) => {
                self.recurrence(r);
                self.words(op.word());
                self.persistence(p);
            }
            ReactivityDeriv::WithRecurrence(x, op, r) => {
                self.reactivity(x);
                self.words(op.word());
                self.recurrence(r);
            }
            ReactivityDeriv::WithPersistence(x, op, p) => {
                self.reactivity(x);
                self.words(op.word());
                self.persistence(p);
            }
        }
    }
}

/// Expand the natural-language side of a derivation, drawing each terminal
/// alternative uniformly.
pub fn realize_sentence<R: Rng + ?Sized>(d: &Derivation, rng: &mut R) -> Vec<String> {
    let mut r = Realizer { rng, out: Vec::new() };
    match d {
        Derivation::Safety(x) => r.safety(x),
        Derivation::Guarantee(x) => r.guarantee(x),
        Derivation::Obligation(x) => r.obligation(x),
        Derivation::Recurrence(x) => r.recurrence(x),
        Derivation::Persistence(x) => r.persistence(x),
        Derivation::Reactivity(x) => r.reactivity(x),
    }
    r.out
}

/// Lowercase and split on anything that is not a letter, digit or apostrophe.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Nt {
    Pred,
    P,
    Safety,
    Guarantee,
    Obligation,
    Recurrence,
    Persistence,
    Reactivity,
}

/// Cap on the formulas kept per chart cell.
const CELL_CAP: usize = 64;

struct Chart<'a> {
    words: &'a [String],
    memo: HashMap<(Nt, usize, usize), Vec<Formula>>,
}

impl Chart<'_> {
    fn matches(&self, i: usize, phrase: &str) -> Option<usize> {
        let toks = tokenize(phrase);
        if i + toks.len() <= self.words.len() && self.words[i..i + toks.len()] == toks[..] {
            Some(i + toks.len())
        } else {
            None
        }
    }

    fn binop(&self, k: usize) -> Option<BinOp> {
        match self.words.get(k).map(String::as_str) {
            Some("and") => Some(BinOp::And),
            Some("or") => Some(BinOp::Or),
            _ => None,
        }
    }

    fn get(&mut self, nt: Nt, i: usize, j: usize) -> Vec<Formula> {
        if i >= j {
            return Vec::new();
        }
        if let Some(v) = self.memo.get(&(nt, i, j)) {
            return v.clone();
        }
        self.memo.insert((nt, i, j), Vec::new());
        let mut out = self.compute(nt, i, j);
        out.sort();
        out.dedup();
        out.truncate(CELL_CAP);
        self.memo.insert((nt, i, j), out.clone());
        out
    }

    fn wrapped(&mut self, nt: Nt, i: usize, j: usize, prefix: &str, suffix: &str) -> Vec<Formula> {
        let Some(start) = self.matches(i, prefix) else {
            return Vec::new();
        };
        let suffix_len = tokenize(suffix).len();
        if j < start + suffix_len || self.matches(j - suffix_len, suffix) != Some(j) {
            return Vec::new();
        }
        self.get(nt, start, j - suffix_len)
    }

    fn combine(&mut self, left: Nt, right: Nt, i: usize, j: usize) -> Vec<Formula> {
        let mut out = Vec::new();
        for k in i + 1..j.saturating_sub(1) {
            let Some(op) = self.binop(k) else { continue };
            let ls = self.get(left, i, k);
            if ls.is_empty() {
                continue;
            }
            let rs = self.get(right, k + 1, j);
            for l in &ls {
                for r in &rs {
                    out.push(op.apply(l.clone(), r.clone()));
                }
            }
        }
        out
    }

    fn compute(&mut self, nt: Nt, i: usize, j: usize) -> Vec<Formula> {
        let mut out = Vec::new();
        match nt {
            Nt::Pred => {
                for p in Predicate::OBJECTS.iter().chain(&Predicate::DESTINATIONS) {
                    let verbs: &[&str] = if Predicate::OBJECTS.contains(p) {
                        &ITEM_VERBS
                    } else {
                        &LANDMARK_VERBS
                    };
                    for v in verbs {
                        if self.matches(i, &format!("{v} {}", entity_word(*p))) == Some(j) {
                            out.push(Formula::atom(*p));
                        }
                    }
                }
            }
            Nt::P => {
                out.extend(self.get(Nt::Pred, i, j));
                out.extend(self.combine(Nt::Pred, Nt::Pred, i, j));
            }
            Nt::Safety => {
                for pre in SAFETY_PREFIX {
                    out.extend(self.wrapped(Nt::P, i, j, pre, "").into_iter().map(Formula::always));
                }
                for suf in SAFETY_SUFFIX {
                    let suf_len = tokenize(suf).len();
                    if j >= i + suf_len && self.matches(j - suf_len, suf) == Some(j) {
                        out.extend(self.get(Nt::P, i, j - suf_len).into_iter().map(Formula::always));
                    }
                }
                out.extend(self.combine(Nt::Safety, Nt::Safety, i, j));
            }
            Nt::Guarantee => {
                for pre in GUARANTEE_PREFIX {
                    out.extend(self.wrapped(Nt::P, i, j, pre, "").into_iter().map(Formula::eventually));
                }
                out.extend(
                    self.wrapped(Nt::Pred, i, j, "guarantee that you will", "")
                        .into_iter()
                        .map(Formula::eventually),
                );
                out.extend(self.combine(Nt::Guarantee, Nt::Guarantee, i, j));
            }
            Nt::Obligation => {
                out.extend(self.combine(Nt::Safety, Nt::Guarantee, i, j));
                out.extend(self.combine(Nt::Obligation, Nt::Safety, i, j));
                out.extend(self.combine(Nt::Obligation, Nt::Guarantee, i, j));
            }
            Nt::Recurrence => {
                out.extend(
                    self.wrapped(Nt::P, i, j, "eventually", "and do this repeatedly")
                        .into_iter()
                        .map(|f| Formula::always(Formula::eventually(f))),
                );
                out.extend(self.combine(Nt::Recurrence, Nt::Recurrence, i, j));
            }
            Nt::Persistence => {
                out.extend(
                    self.wrapped(Nt::P, i, j, "at some point start to", "and keep doing it")
                        .into_iter()
                        .map(|f| Formula::eventually(Formula::always(f))),
                );
                out.extend(self.combine(Nt::Persistence, Nt::Persistence, i, j));
            }
            Nt::Reactivity => {
                out.extend(self.combine(Nt::Recurrence, Nt::Persistence, i, j));
                out.extend(self.combine(Nt::Reactivity, Nt::Recurrence, i, j));
                out.extend(self.combine(Nt::Reactivity, Nt::Persistence, i, j));
            }
        }
        out
    }
}

/// All formula readings of a machine sentence under the grammar (capped per
/// chart cell), in canonical order.
pub fn parse_sentence(words: &[String]) -> Vec<Formula> {
    let mut chart = Chart {
        words,
        memo: HashMap::new(),
    };
    let n = words.len();
    let mut out = Vec::new();
    for nt in [
        Nt::Safety,
        Nt::Guarantee,
        Nt::Obligation,
        Nt::Recurrence,
        Nt::Persistence,
        Nt::Reactivity,
    ] {
        out.extend(chart.get(nt, 0, n));
    }
    out.sort();
    out.dedup();
    out
}
