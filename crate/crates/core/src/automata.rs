//! Compilation of LTL_f formulas to finite automata by formula progression,
//! finite-trace acceptance, and language equivalence.
//!
//! A state is an obligation on the remaining suffix: a monotone boolean
//! combination of temporal subformulas kept as a minimal DNF (a sorted
//! antichain of sorted literal sets). Without negation the minimal DNF of a
//! monotone function is unique, so equal obligations always share a state.
//! Progression is deterministic, so the compiled automaton is already a DFA.
//!
//! Transitions are indexed by letters of the formula's own support: a
//! valuation over all nine predicates is projected onto the support atoms
//! before lookup.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::ltl::{Formula, Predicate};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutomatonError {
    #[error("trace is empty; LTL_f is defined over non-empty traces")]
    EmptyTrace,
    #[error("joint support has {atoms} atoms, more than the configured bound of {max}")]
    SupportTooLarge { atoms: usize, max: usize },
}

/// Truth assignment to the nine predicates; bit `i` is `Predicate::ALL[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Valuation(pub u16);

impl Valuation {
    pub fn empty() -> Self {
        Valuation(0)
    }

    pub fn from_preds(preds: &[Predicate]) -> Self {
        let mut v = Valuation(0);
        for &p in preds {
            v.set(p, true);
        }
        v
    }

    pub fn get(self, p: Predicate) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn set(&mut self, p: Predicate, value: bool) {
        if value {
            self.0 |= 1 << p.index();
        } else {
            self.0 &= !(1 << p.index());
        }
    }

    pub fn true_predicates(self) -> Vec<Predicate> {
        Predicate::ALL.iter().copied().filter(|&p| self.get(p)).collect()
    }
}

pub type StateId = usize;

type Clause = Vec<u32>;
type Dnf = Vec<Clause>;

fn dnf_true() -> Dnf {
    vec![Vec::new()]
}

fn dnf_false() -> Dnf {
    Vec::new()
}

fn is_subset(small: &[u32], big: &[u32]) -> bool {
    let mut it = big.iter();
    small.iter().all(|x| it.by_ref().any(|y| y == x))
}

fn minimize(mut clauses: Vec<Clause>) -> Dnf {
    for c in clauses.iter_mut() {
        c.sort_unstable();
        c.dedup();
    }
    clauses.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    clauses.dedup();
    let mut kept: Vec<Clause> = Vec::with_capacity(clauses.len());
    for c in clauses {
        if !kept.iter().any(|k| is_subset(k, &c)) {
            kept.push(c);
        }
    }
    kept.sort();
    kept
}

fn dnf_or(a: &Dnf, b: &Dnf) -> Dnf {
    let mut all = a.clone();
    all.extend(b.iter().cloned());
    minimize(all)
}

fn dnf_and(a: &Dnf, b: &Dnf) -> Dnf {
    let mut all = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            let mut c = x.clone();
            c.extend_from_slice(y);
            all.push(c);
        }
    }
    minimize(all)
}

/// Interned subformulas used as DNF literals, plus their progression cache.
struct Literals {
    formulas: Vec<Formula>,
    index: HashMap<Formula, u32>,
}

impl Literals {
    fn new() -> Self {
        Literals {
            formulas: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, f: &Formula) -> u32 {
        if let Some(&id) = self.index.get(f) {
            return id;
        }
        let id = self.formulas.len() as u32;
        self.formulas.push(f.clone());
        self.index.insert(f.clone(), id);
        id
    }

    fn lit(&mut self, f: &Formula) -> Dnf {
        vec![vec![self.intern(f)]]
    }
}

struct Compiler<'a> {
    support: &'a [Predicate],
    literals: Literals,
    prog_cache: HashMap<(u32, usize), Dnf>,
}

impl Compiler<'_> {
    fn letter_has(&self, letter: usize, p: Predicate) -> bool {
        match self.support.iter().position(|&q| q == p) {
            Some(i) => letter & (1 << i) != 0,
            None => false,
        }
    }

    /// Obligation on the suffix after reading `letter`, given that `f` must
    /// hold at the current position.
    fn prog_formula(&mut self, f: &Formula, letter: usize) -> Dnf {
        match f {
            Formula::Atom(p) => {
                if self.letter_has(letter, *p) {
                    dnf_true()
                } else {
                    dnf_false()
                }
            }
            Formula::And(a, b) => {
                let x = self.prog_formula(a, letter);
                if x.is_empty() {
                    return x;
                }
                let y = self.prog_formula(b, letter);
                dnf_and(&x, &y)
            }
            Formula::Or(a, b) => {
                let x = self.prog_formula(a, letter);
                let y = self.prog_formula(b, letter);
                dnf_or(&x, &y)
            }
            temporal => {
                let id = self.literals.intern(temporal);
                self.prog_literal(id, letter)
            }
        }
    }

    fn prog_literal(&mut self, id: u32, letter: usize) -> Dnf {
        if let Some(d) = self.prog_cache.get(&(id, letter)) {
            return d.clone();
        }
        let f = self.literals.formulas[id as usize].clone();
        let out = match &f {
            Formula::Eventually(a) => {
                let now = self.prog_formula(a, letter);
                dnf_or(&now, &self.literals.lit(&f))
            }
            Formula::Always(a) => {
                let now = self.prog_formula(a, letter);
                dnf_and(&now, &self.literals.lit(&f))
            }
            Formula::Until(a, b) => {
                let release = self.prog_formula(b, letter);
                let hold = self.prog_formula(a, letter);
                let keep = dnf_and(&hold, &self.literals.lit(&f));
                dnf_or(&release, &keep)
            }
            other => self.prog_formula(other, letter),
        };
        self.prog_cache.insert((id, letter), out.clone());
        out
    }

    fn prog_state(&mut self, state: &Dnf, letter: usize) -> Dnf {
        let mut acc = dnf_false();
        for clause in state {
            let mut conj = dnf_true();
            for &lit in clause {
                let p = self.prog_literal(lit, letter);
                conj = dnf_and(&conj, &p);
                if conj.is_empty() {
                    break;
                }
            }
            acc = dnf_or(&acc, &conj);
        }
        acc
    }

    /// Whether the empty suffix satisfies the obligation.
    fn is_final(&self, state: &Dnf) -> bool {
        state.iter().any(|clause| {
            clause
                .iter()
                .all(|&l| matches!(self.literals.formulas[l as usize], Formula::Always(_)))
        })
    }
}

/// Deterministic automaton over letters of the support alphabet. State 0 is
/// the pre-start state: it is never accepting, so the empty trace is rejected.
#[derive(Debug, Clone)]
pub struct Automaton {
    formula: Formula,
    support: Vec<Predicate>,
    support_bits: Vec<u16>,
    letters: usize,
    transitions: Vec<StateId>,
    accepting: Vec<bool>,
    labels: Vec<String>,
}

impl Automaton {
    /// Compile over the formula's own support.
    pub fn compile(f: &Formula) -> Automaton {
        Self::compile_with_support(f, &f.support())
    }

    /// Compile over an explicit alphabet (must contain the formula's atoms).
    pub fn compile_with_support(f: &Formula, support: &[Predicate]) -> Automaton {
        let mut support = support.to_vec();
        support.sort();
        support.dedup();
        let letters = 1usize << support.len();
        let mut compiler = Compiler {
            support: &support,
            literals: Literals::new(),
            prog_cache: HashMap::new(),
        };

        let mut states: Vec<Dnf> = Vec::new();
        let mut ids: HashMap<Dnf, StateId> = HashMap::new();
        let mut transitions: Vec<StateId> = vec![0; letters];
        states.push(Vec::new()); // placeholder for the pre-start state

        let mut queue = VecDeque::new();
        for letter in 0..letters {
            let next = compiler.prog_formula(f, letter);
            let id = *ids.entry(next.clone()).or_insert_with(|| {
                states.push(next.clone());
                transitions.extend(std::iter::repeat_n(0, letters));
                queue.push_back(states.len() - 1);
                states.len() - 1
            });
            transitions[letter] = id;
        }
        while let Some(s) = queue.pop_front() {
            let dnf = states[s].clone();
            for letter in 0..letters {
                let next = compiler.prog_state(&dnf, letter);
                let id = match ids.get(&next) {
                    Some(&id) => id,
                    None => {
                        states.push(next.clone());
                        transitions.extend(std::iter::repeat_n(0, letters));
                        let id = states.len() - 1;
                        ids.insert(next, id);
                        queue.push_back(id);
                        id
                    }
                };
                transitions[s * letters + letter] = id;
            }
        }

        let mut accepting = vec![false; states.len()];
        for (i, s) in states.iter().enumerate().skip(1) {
            accepting[i] = compiler.is_final(s);
        }
        let labels = states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i == 0 {
                    "init".to_string()
                } else {
                    render_dnf(s, &compiler.literals.formulas)
                }
            })
            .collect();
        let support_bits = support.iter().map(|p| 1u16 << p.index()).collect();
        Automaton {
            formula: f.clone(),
            support,
            support_bits,
            letters,
            transitions,
            accepting,
            labels,
        }
    }

    pub fn formula(&self) -> &Formula {
        &self.formula
    }

    pub fn support(&self) -> &[Predicate] {
        &self.support
    }

    pub fn num_states(&self) -> usize {
        self.accepting.len()
    }

    pub fn num_letters(&self) -> usize {
        self.letters
    }

    pub fn initial(&self) -> StateId {
        0
    }

    pub fn is_accepting(&self, s: StateId) -> bool {
        self.accepting[s]
    }

    /// Project a full valuation onto the support alphabet.
    pub fn letter(&self, v: Valuation) -> usize {
        let mut letter = 0;
        for (i, &bit) in self.support_bits.iter().enumerate() {
            if v.0 & bit != 0 {
                letter |= 1 << i;
            }
        }
        letter
    }

    pub fn next_letter(&self, s: StateId, letter: usize) -> StateId {
        self.transitions[s * self.letters + letter]
    }

    pub fn next(&self, s: StateId, v: Valuation) -> StateId {
        self.next_letter(s, self.letter(v))
    }

    /// State reached after reading `trace` from the initial state.
    pub fn run(&self, trace: &[Valuation]) -> StateId {
        trace.iter().fold(self.initial(), |s, &v| self.next(s, v))
    }

    pub fn accepts(&self, trace: &[Valuation]) -> Result<bool, AutomatonError> {
        if trace.is_empty() {
            return Err(AutomatonError::EmptyTrace);
        }
        Ok(self.is_accepting(self.run(trace)))
    }

    /// States with no path to an accepting state.
    pub fn dead_states(&self) -> Vec<bool> {
        let n = self.num_states();
        let mut live = self.accepting.clone();
        let mut changed = true;
        while changed {
            changed = false;
            for s in 0..n {
                if !live[s] && (0..self.letters).any(|l| live[self.next_letter(s, l)]) {
                    live[s] = true;
                    changed = true;
                }
            }
        }
        live.into_iter().map(|l| !l).collect()
    }

    /// Text dump: header, one line per state with its obligation, and one line
    /// per transition with its guard over the support atoms.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let names: Vec<_> = self.support.iter().map(|p| p.name()).collect();
        let _ = writeln!(out, "formula: {}", self.formula.to_postorder_string());
        let _ = writeln!(out, "ap: {}", names.join(" "));
        let _ = writeln!(out, "states: {}", self.num_states());
        let _ = writeln!(out, "start: 0");
        let acc: Vec<String> = (0..self.num_states())
            .filter(|&s| self.accepting[s])
            .map(|s| s.to_string())
            .collect();
        let _ = writeln!(out, "accepting: {}", acc.join(" "));
        for s in 0..self.num_states() {
            let _ = writeln!(out, "state {s} \"{}\"", self.labels[s]);
            for letter in 0..self.letters {
                let guard: Vec<String> = names
                    .iter()
                    .enumerate()
                    .map(|(i, n)| {
                        if letter & (1 << i) != 0 {
                            n.to_string()
                        } else {
                            format!("!{n}")
                        }
                    })
                    .collect();
                let guard = if guard.is_empty() {
                    "t".to_string()
                } else {
                    guard.join("&")
                };
                let _ = writeln!(out, "  [{guard}] {}", self.next_letter(s, letter));
            }
        }
        out
    }
}

fn render_dnf(d: &Dnf, lits: &[Formula]) -> String {
    if d.is_empty() {
        return "false".into();
    }
    d.iter()
        .map(|c| {
            if c.is_empty() {
                "true".to_string()
            } else {
                c.iter()
                    .map(|&l| lits[l as usize].to_infix())
                    .collect::<Vec<_>>()
                    .join(" ∧ ")
            }
        })
        .collect::<Vec<_>>()
        .join(" ∨ ")
}

pub fn compile(f: &Formula) -> Automaton {
    Automaton::compile(f)
}

pub fn accepts(a: &Automaton, trace: &[Valuation]) -> Result<bool, AutomatonError> {
    a.accepts(trace)
}

pub fn restrict_support(f: &Formula) -> Vec<Predicate> {
    f.support()
}

/// Default bound on the joint support of an equivalence query.
pub const DEFAULT_MAX_SUPPORT: usize = 6;

/// Language equivalence over the joint support (bounded by
/// [`DEFAULT_MAX_SUPPORT`] atoms).
pub fn equivalent(f1: &Formula, f2: &Formula) -> Result<bool, AutomatonError> {
    equivalent_with_bound(f1, f2, DEFAULT_MAX_SUPPORT)
}

pub fn equivalent_with_bound(f1: &Formula, f2: &Formula, max_support: usize) -> Result<bool, AutomatonError> {
    let mut joint = f1.support();
    joint.extend(f2.support());
    joint.sort();
    joint.dedup();
    if joint.len() > max_support {
        return Err(AutomatonError::SupportTooLarge {
            atoms: joint.len(),
            max: max_support,
        });
    }
    if f1 == f2 {
        return Ok(true);
    }
    let a = Automaton::compile_with_support(f1, &joint);
    let b = Automaton::compile_with_support(f2, &joint);
    Ok(hopcroft_karp(&a, &b))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Hopcroft–Karp equivalence of two DFAs over the same letter alphabet.
fn hopcroft_karp(a: &Automaton, b: &Automaton) -> bool {
    debug_assert_eq!(a.letters, b.letters);
    let offset = a.num_states();
    let mut uf = UnionFind::new(offset + b.num_states());
    let mut stack = vec![(a.initial(), b.initial())];
    uf.union(a.initial(), offset + b.initial());
    while let Some((p, q)) = stack.pop() {
        if a.is_accepting(p) != b.is_accepting(q) {
            return false;
        }
        for letter in 0..a.letters {
            let np = a.next_letter(p, letter);
            let nq = b.next_letter(q, letter);
            if uf.union(np, offset + nq) {
                stack.push((np, nq));
            }
        }
    }
    true
}
