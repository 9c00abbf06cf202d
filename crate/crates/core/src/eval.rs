//! Exec, Plan, Seq and Exact metrics, the random baseline and report types.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::{equivalent, Automaton, AutomatonError};
use crate::dataset::{Example, Lexicon};
use crate::ltl::{decode_postorder, Formula, Token};
use crate::model::{beam_decode, sample_uniform_formula, Model};
use crate::planner::{PolicyConfig, ProductPlanner, RolloutMode};
use crate::world::trace_of;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("example {0} has no ground-truth formula")]
    MissingGroundTruth(usize),
    #[error("{0} predictions for {1} examples")]
    LengthMismatch(usize, usize),
    #[error("report violates an invariant: {0}")]
    Invariant(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Metrics of one group of examples. Seq and Exact cover machine rows only;
/// Plan is absent when some row lacks a reference formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n_examples: usize,
    /// Rows with a machine ground truth.
    pub n_machine: usize,
    pub exec: f64,
    pub plan: Option<f64>,
    pub seq_f1: Option<f64>,
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_examples: usize,
    pub n_machine: usize,
    pub exec: f64,
    pub plan: Option<f64>,
    pub seq_f1: Option<f64>,
    pub exact: Option<f64>,
    /// Pairs whose joint support was too large to decide; counted as not
    /// equivalent.
    pub exact_undecided: usize,
    pub per_class: BTreeMap<String, GroupMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl MetricsReport {
    /// Fractions lie in [0, 1] and Exec bounds Exact from above whenever both
    /// are measured on the same rows.
    pub fn check(&self) -> Result<(), EvalError> {
        let groups = std::iter::once(("all".to_string(), self.group()))
            .chain(self.per_class.iter().map(|(k, v)| (k.clone(), v.clone())));
        for (name, g) in groups {
            for v in [Some(g.exec), g.plan, g.seq_f1, g.exact].into_iter().flatten() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(EvalError::Invariant(format!("{name}: fraction {v} outside [0, 1]")));
                }
            }
            if let Some(exact) = g.exact {
                if g.n_machine == g.n_examples && exact > g.exec + 1e-12 {
                    return Err(EvalError::Invariant(format!(
                        "{name}: Exact {exact} above Exec {}",
                        g.exec
                    )));
                }
            }
        }
        Ok(())
    }

    fn group(&self) -> GroupMetrics {
        GroupMetrics {
            n_examples: self.n_examples,
            n_machine: self.n_machine,
            exec: self.exec,
            plan: self.plan,
            seq_f1: self.seq_f1,
            exact: self.exact,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Does `pred` accept every demonstration of `ex`?
pub fn exec_ok(pred: &Formula, ex: &Example) -> bool {
    exec_ok_with(&Automaton::compile(pred), ex)
}

fn exec_ok_with(aut: &Automaton, ex: &Example) -> bool {
    ex.demos
        .iter()
        .all(|d| aut.accepts(&trace_of(&d.env, &d.actions)).unwrap_or(false))
}

pub fn metric_exec(preds: &[Formula], examples: &[&Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let ok = preds.iter().zip(examples).filter(|(p, e)| exec_ok(p, e)).count();
    ok as f64 / examples.len() as f64
}

/// Greedy rollouts of `pred` checked against the reference formula:
/// (successes, environments).
pub fn plan_successes(
    pred: &Formula,
    ex: &Example,
    idx: usize,
    policy: &PolicyConfig,
) -> Result<(usize, usize), EvalError> {
    let gold = ex.reference_formula().ok_or(EvalError::MissingGroundTruth(idx))?;
    Ok(plan_with(
        &Automaton::compile(pred),
        &Automaton::compile(gold),
        ex,
        policy,
    ))
}

fn plan_with(pred: &Automaton, gold: &Automaton, ex: &Example, policy: &PolicyConfig) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ok = 0;
    for d in &ex.demos {
        let r = ProductPlanner::new(pred, &d.env).rollout(policy, RolloutMode::Greedy, &mut rng);
        if !r.actions.is_empty() && gold.accepts(&trace_of(&d.env, &r.actions)).unwrap_or(false) {
            ok += 1;
        }
    }
    (ok, ex.demos.len())
}

pub fn metric_plan(preds: &[Formula], examples: &[&Example], policy: &PolicyConfig) -> Result<f64, EvalError> {
    let (mut ok, mut total) = (0, 0);
    for (i, (p, e)) in preds.iter().zip(examples).enumerate() {
        let (a, b) = plan_successes(p, e, i, policy)?;
        ok += a;
        total += b;
    }
    Ok(if total == 0 { 0.0 } else { ok as f64 / total as f64 })
}

/// Token-multiset F1.
pub fn metric_seq(pred: &[Token], gold: &[Token]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<Token, (usize, usize)> = HashMap::new();
    for t in pred {
        counts.entry(*t).or_default().0 += 1;
    }
    for t in gold {
        counts.entry(*t).or_default().1 += 1;
    }
    let m: usize = counts.values().map(|&(a, b)| a.min(b)).sum();
    2.0 * m as f64 / (pred.len() + gold.len()) as f64
}

/// Semantic equivalence; identical formulas are decided without compiling.
pub fn metric_exact(pred: &Formula, gold: &Formula) -> Result<bool, AutomatonError> {
    if pred == gold {
        return Ok(true);
    }
    equivalent(pred, gold)
}

#[derive(Default)]
struct Acc {
    n: usize,
    exec: usize,
    plan_ok: usize,
    plan_total: usize,
    plan_missing: bool,
    machine: usize,
    seq: f64,
    exact: usize,
}

impl Acc {
    fn finish(&self) -> GroupMetrics {
        let frac = |a: f64, n: usize| if n == 0 { 0.0 } else { a / n as f64 };
        GroupMetrics {
            n_examples: self.n,
            n_machine: self.machine,
            exec: frac(self.exec as f64, self.n),
            plan: (!self.plan_missing && self.n > 0).then(|| frac(self.plan_ok as f64, self.plan_total)),
            seq_f1: (self.machine > 0).then(|| frac(self.seq, self.machine)),
            exact: (self.machine > 0).then(|| frac(self.exact as f64, self.machine)),
        }
    }
}

/// All metrics for one prediction per example.
pub fn evaluate_predictions(
    preds: &[Formula],
    examples: &[&Example],
    policy: &PolicyConfig,
) -> Result<MetricsReport, EvalError> {
    if preds.len() != examples.len() {
        return Err(EvalError::LengthMismatch(preds.len(), examples.len()));
    }
    let mut all = Acc::default();
    let mut classes: BTreeMap<String, Acc> = BTreeMap::new();
    let mut undecided = 0;
    for (pred, ex) in preds.iter().zip(examples) {
        let aut = Automaton::compile(pred);
        let exec = exec_ok_with(&aut, ex);
        let plan = ex
            .reference_formula()
            .map(|g| plan_with(&aut, &Automaton::compile(g), ex, policy));
        let machine = ex.formula.as_ref().map(|gold| {
            let seq = metric_seq(&pred.to_tokens(), &gold.to_tokens());
            let exact = match metric_exact(pred, gold) {
                Ok(b) => b,
                Err(e) => {
                    log::warn!("exact match undecided for {pred} vs {gold}: {e}");
                    undecided += 1;
                    false
                }
            };
            (seq, exact)
        });
        let class = ex.class.map(|c| c.name().to_string());
        let mut accs = vec![&mut all];
        let class_acc = class.map(|c| classes.entry(c).or_default());
        if let Some(c) = class_acc {
            accs.push(c);
        }
        for acc in accs {
            acc.n += 1;
            acc.exec += exec as usize;
            match plan {
                Some((a, b)) => {
                    acc.plan_ok += a;
                    acc.plan_total += b;
                }
                None => acc.plan_missing = true,
            }
            if let Some((seq, exact)) = machine {
                acc.machine += 1;
                acc.seq += seq;
                acc.exact += exact as usize;
            }
        }
    }
    let g = all.finish();
    let report = MetricsReport {
        n_examples: g.n_examples,
        n_machine: g.n_machine,
        exec: g.exec,
        plan: g.plan,
        seq_f1: g.seq_f1,
        exact: g.exact,
        exact_undecided: undecided,
        per_class: classes.into_iter().map(|(k, a)| (k, a.finish())).collect(),
        seed: None,
    };
    report.check()?;
    Ok(report)
}

/// Beam top-1 prediction for every example.
pub fn predict(
    model: &Model,
    lexicon: &Lexicon,
    examples: &[&Example],
    max_len: usize,
    width: usize,
) -> Result<Vec<Formula>, EvalError> {
    examples
        .iter()
        .map(|ex| {
            let enc = model.encode(&lexicon.encode(&ex.sentence))?;
            let best = beam_decode(model, &enc, width, max_len).swap_remove(0).0;
            Ok(decode_postorder(&best).expect("decoder emits valid formulas"))
        })
        .collect()
}

pub fn evaluate_model(
    model: &Model,
    lexicon: &Lexicon,
    examples: &[&Example],
    max_len: usize,
    width: usize,
    policy: &PolicyConfig,
) -> Result<MetricsReport, EvalError> {
    let preds = predict(model, lexicon, examples, max_len, width)?;
    evaluate_predictions(&preds, examples, policy)
}

/// Length bound of the random baseline's formulas.
pub const RANDOM_BASELINE_MAX_LEN: usize = 9;

/// Formulas drawn by uniform valid-continuation sampling.
pub fn random_predictions(n: usize, seed: u64) -> Vec<Formula> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            decode_postorder(&sample_uniform_formula(RANDOM_BASELINE_MAX_LEN, &mut rng)).expect("valid by construction")
        })
        .collect()
}

pub fn random_baseline(examples: &[&Example], seed: u64, policy: &PolicyConfig) -> Result<MetricsReport, EvalError> {
    let preds = random_predictions(examples.len(), seed);
    let mut report = evaluate_predictions(&preds, examples, policy)?;
    report.seed = Some(seed);
    Ok(report)
}
