//! Training from demonstrations: the reward, REINFORCE, iterative maximum
//! likelihood with a pseudo-gold store, the length curriculum, the supervised
//! reference and model selection.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::{Automaton, Valuation};
use crate::dataset::{Dataset, Demo, Example, Lexicon, Split};
use crate::eval::{evaluate_model, EvalError};
use crate::ltl::{decode_postorder, Formula, Token};
use crate::model::checkpoint::Checkpoint;
use crate::model::{sample_formulas_eps, Adam, Grads, Model, ModelConfig, ModelError};
use crate::planner::{PolicyConfig, ProductPlanner};
use crate::world::trace_of;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("validation history is empty")]
    EmptyHistory,
    #[error("example {0} has no ground-truth formula")]
    MissingGroundTruth(usize),
    #[error("no training examples")]
    EmptyTrainingSet,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rl,
    Iml,
    Supervised,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rl" => Ok(Method::Rl),
            "iml" => Ok(Method::Iml),
            "supervised" => Ok(Method::Supervised),
            _ => Err(format!("unknown method `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub use_generator: bool,
    /// Candidates sampled per example.
    pub k_samples: usize,
    pub eps: f64,
    /// Demonstrations used per example.
    pub k_demos: usize,
    /// Epochs for RL and supervised training.
    pub epochs: usize,
    pub curriculum_start_len: usize,
    pub curriculum_step: usize,
    pub curriculum_every: usize,
    /// `(first epoch, α)` pairs; the last entry not after the epoch applies.
    pub alpha_schedule: Vec<(usize, f64)>,
    pub iml_rounds: usize,
    pub iml_inner_epochs: usize,
    /// Most tied pseudo-gold formulas kept per example.
    pub pseudo_gold_cap: usize,
    pub batch_size: usize,
    pub beam_width: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Iml,
            use_generator: true,
            k_samples: 128,
            eps: 0.15,
            k_demos: 3,
            epochs: 50,
            curriculum_start_len: 3,
            curriculum_step: 3,
            curriculum_every: 10,
            alpha_schedule: vec![(0, 0.1), (10, 1.0)],
            iml_rounds: 5,
            iml_inner_epochs: 10,
            pseudo_gold_cap: 8,
            batch_size: 16,
            beam_width: 10,
            seed: 0,
            model: ModelConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.k_samples == 0 {
            return bad("K must be at least 1");
        }
        if self.batch_size == 0 || self.beam_width == 0 || self.k_demos == 0 {
            return bad("batch size, beam width and demo count must be positive");
        }
        if !(0.0..=1.0).contains(&self.eps) {
            return bad("eps outside [0, 1]");
        }
        if self.curriculum_start_len == 0 || self.curriculum_every == 0 {
            return bad("curriculum start and period must be positive");
        }
        if self.alpha_schedule.windows(2).any(|w| w[0].0 > w[1].0) {
            return bad("alpha schedule epochs must be nondecreasing");
        }
        if !self.policy.validate() {
            return bad("planner policy");
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn alpha(&self, epoch: usize) -> f64 {
        self.alpha_schedule
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(0.0, |(_, a)| *a)
    }

    /// Largest length the curriculum ever allows within this configuration.
    pub fn final_len(&self) -> usize {
        let last = match self.method {
            Method::Iml => self.iml_rounds.saturating_sub(1) * self.iml_inner_epochs,
            _ => self.epochs.saturating_sub(1),
        };
        curriculum_len(last, self)
    }
}

/// Length cap on sampled formulas at `epoch`.
pub fn curriculum_len(epoch: usize, cfg: &TrainConfig) -> usize {
    cfg.curriculum_start_len + cfg.curriculum_step * (epoch / cfg.curriculum_every)
}

/// Index of the best validation score; ties go to the later entry.
pub fn select_model(val_history: &[f64]) -> Result<usize, TrainError> {
    if val_history.is_empty() {
        return Err(TrainError::EmptyHistory);
    }
    let mut best = 0;
    for (i, &v) in val_history.iter().enumerate() {
        if v >= val_history[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Reward of a single candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardReport {
    pub reward: f64,
    pub accepted_all: bool,
}

/// Zero unless the formula accepts every demonstration; otherwise the mean
/// over demonstrations of the planner's per-step likelihood.
pub fn reward(zhat: &Formula, demos: &[Demo], policy: &PolicyConfig) -> RewardReport {
    let aut = Automaton::compile(zhat);
    let traces: Vec<Vec<Valuation>> = demos.iter().map(|d| trace_of(&d.env, &d.actions)).collect();
    reward_with(&aut, demos, &traces, policy)
}

fn reward_with(aut: &Automaton, demos: &[Demo], traces: &[Vec<Valuation>], policy: &PolicyConfig) -> RewardReport {
    let rejected = RewardReport {
        reward: 0.0,
        accepted_all: false,
    };
    if demos.is_empty() || traces.iter().any(|t| !aut.accepts(t).unwrap_or(false)) {
        return rejected;
    }
    let mut total = 0.0;
    for d in demos {
        let planner = ProductPlanner::new(aut, &d.env);
        total += planner.trajectory_likelihood(&d.actions, policy).unwrap_or(0.0);
    }
    RewardReport {
        reward: total / demos.len() as f64,
        accepted_all: true,
    }
}

/// Training view of one example.
struct Prepared {
    words: Vec<usize>,
    demos: Vec<Demo>,
    traces: Vec<Vec<Valuation>>,
}

/// Memoized rewards keyed by (example, formula).
pub struct RewardCache {
    automata: HashMap<Vec<Token>, Automaton>,
    rewards: HashMap<(usize, Vec<Token>), f64>,
    policy: PolicyConfig,
}

impl RewardCache {
    pub fn new(policy: PolicyConfig) -> RewardCache {
        RewardCache {
            automata: HashMap::new(),
            rewards: HashMap::new(),
            policy,
        }
    }

    fn get(&mut self, idx: usize, ex: &Prepared, tokens: &[Token]) -> f64 {
        if let Some(&r) = self.rewards.get(&(idx, tokens.to_vec())) {
            return r;
        }
        let aut = self
            .automata
            .entry(tokens.to_vec())
            .or_insert_with(|| Automaton::compile(&decode_postorder(tokens).expect("sampled formulas are valid")));
        let r = reward_with(aut, &ex.demos, &ex.traces, &self.policy).reward;
        self.rewards.insert((idx, tokens.to_vec()), r);
        r
    }
}

/// Distinct candidates with multiplicities, in first-seen order.
fn group_candidates(cands: Vec<Vec<Token>>) -> Vec<(Vec<Token>, usize)> {
    let mut order: Vec<(Vec<Token>, usize)> = Vec::new();
    let mut pos: HashMap<Vec<Token>, usize> = HashMap::new();
    for c in cands {
        match pos.get(&c) {
            Some(&i) => order[i].1 += 1,
            None => {
                pos.insert(c.clone(), order.len());
                order.push((c, 1));
            }
        }
    }
    order
}

/// Per-candidate weights of the REINFORCE surrogate `-(1/K) Σ R(z) log p(z|x)`
/// for `k` draws given as distinct candidates with counts and rewards.
pub fn surrogate_targets(cands: &[(Vec<Token>, usize, f64)], k: usize) -> Vec<(Vec<Token>, f64)> {
    cands
        .iter()
        .filter(|c| c.2 > 0.0)
        .map(|(t, n, r)| (t.clone(), *n as f64 * r / k as f64))
        .collect()
}

/// Pseudo-gold formulas of one example.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoGold {
    pub reward: f64,
    pub formulas: Vec<Vec<Token>>,
}

impl PseudoGold {
    /// Keep the best reward seen so far: strictly better candidates replace
    /// the store, ties are added up to `cap`. Returns whether it changed.
    pub fn offer(&mut self, candidates: &[(Vec<Token>, f64)], cap: usize) -> bool {
        let best = candidates.iter().map(|c| c.1).fold(0.0, f64::max);
        if best <= 0.0 || best < self.reward {
            return false;
        }
        let mut changed = false;
        if best > self.reward {
            self.reward = best;
            self.formulas.clear();
            changed = true;
        }
        for (t, r) in candidates {
            if *r == best && self.formulas.len() < cap && !self.formulas.contains(t) {
                self.formulas.push(t.clone());
                changed = true;
            }
        }
        changed
    }
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub method: Method,
    pub max_len: usize,
    pub alpha: f64,
    pub loss: f64,
    pub mean_reward: Option<f64>,
    pub nonzero_fraction: Option<f64>,
    pub pseudo_gold: Option<usize>,
    pub val_exec: f64,
    pub val_plan: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Sampling statistics of an exploration pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleStats {
    pub mean_reward: f64,
    pub nonzero_fraction: f64,
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub model: Model,
    pub opt: Adam,
    lexicon: &'a Lexicon,
    train: Vec<Prepared>,
    gold: Vec<Option<Vec<Token>>>,
    val: Vec<&'a Example>,
    rng: ChaCha8Rng,
    pub rewards: RewardCache,
    pub pseudo_gold: Vec<PseudoGold>,
}

impl<'a> Trainer<'a> {
    pub fn new(ds: &'a Dataset, cfg: TrainConfig) -> Result<Trainer<'a>, TrainError> {
        cfg.validate()?;
        let train_ex = ds.split(Split::Train);
        if train_ex.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        let lexicon = &ds.lexicon;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::new(cfg.model.clone(), lexicon.len().max(1), &mut init_rng)?;
        let opt = Adam::new(cfg.model.lr, model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let train: Vec<Prepared> = train_ex
            .iter()
            .map(|ex| {
                let demos: Vec<Demo> = ex.demos.iter().take(cfg.k_demos).cloned().collect();
                let traces = demos.iter().map(|d| trace_of(&d.env, &d.actions)).collect();
                Prepared {
                    words: lexicon.encode(&ex.sentence),
                    demos,
                    traces,
                }
            })
            .collect();
        let gold = train_ex
            .iter()
            .map(|e| e.formula.as_ref().map(|f| f.to_tokens()))
            .collect();
        Ok(Trainer {
            rewards: RewardCache::new(cfg.policy),
            pseudo_gold: vec![PseudoGold::default(); train.len()],
            cfg,
            model,
            opt,
            lexicon,
            train,
            gold,
            val: ds.split(Split::Val),
            rng,
        })
    }

    pub fn num_train(&self) -> usize {
        self.train.len()
    }

    fn batches(&mut self, idx: Vec<usize>) -> Vec<Vec<usize>> {
        let mut idx = idx;
        idx.shuffle(&mut self.rng);
        idx.chunks(self.cfg.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Sample `K` candidates for example `i` and score them.
    pub fn explore(&mut self, i: usize, max_len: usize) -> Result<Vec<(Vec<Token>, usize, f64)>, TrainError> {
        let enc = self.model.encode(&self.train[i].words)?;
        let draws = sample_formulas_eps(
            &self.model,
            &enc,
            self.cfg.eps,
            max_len,
            self.cfg.k_samples,
            &mut self.rng,
        );
        let grouped = group_candidates(draws);
        Ok(grouped
            .into_iter()
            .map(|(t, n)| {
                let r = self.rewards.get(i, &self.train[i], &t);
                (t, n, r)
            })
            .collect())
    }

    /// Gradient for one example and its weighted parser targets, dropout on.
    fn example_grad(
        &mut self,
        i: usize,
        targets: &[(Vec<Token>, f64)],
        max_len: usize,
        gen_weight: f64,
        g: &mut Grads,
    ) -> Result<f64, TrainError> {
        let rng: &mut dyn RngCore = &mut self.rng;
        let parts = self
            .model
            .accumulate_example(&self.train[i].words, targets, max_len, gen_weight, Some(rng), g)?;
        Ok(parts.parser + gen_weight * parts.generator)
    }

    fn apply(&mut self, mut g: Grads, n: usize) -> Result<(), TrainError> {
        g.scale(1.0 / n.max(1) as f64);
        let names = self.model.block_names().to_vec();
        self.opt.step(self.model.params_mut(), &g, &names)?;
        Ok(())
    }

    /// One REINFORCE epoch.
    pub fn reinforce_epoch(&mut self, epoch: usize) -> Result<(f64, SampleStats), TrainError> {
        let max_len = curriculum_len(epoch, &self.cfg);
        let alpha = if self.cfg.use_generator {
            self.cfg.alpha(epoch)
        } else {
            0.0
        };
        let (mut loss, mut rsum, mut nonzero, mut draws) = (0.0, 0.0, 0usize, 0usize);
        for batch in self.batches((0..self.train.len()).collect()) {
            let mut g = self.model.zero_grads();
            for &i in &batch {
                let cands = self.explore(i, max_len)?;
                for (_, n, r) in &cands {
                    rsum += *n as f64 * r;
                    draws += n;
                    if *r > 0.0 {
                        nonzero += n;
                    }
                }
                let targets = surrogate_targets(&cands, self.cfg.k_samples);
                loss += self.example_grad(i, &targets, max_len, alpha, &mut g)?;
            }
            self.apply(g, batch.len())?;
        }
        let stats = SampleStats {
            mean_reward: rsum / draws.max(1) as f64,
            nonzero_fraction: nonzero as f64 / draws.max(1) as f64,
        };
        Ok((loss / self.train.len() as f64, stats))
    }

    /// Exploration phase of one IML round: refresh the pseudo-gold store.
    pub fn iml_explore(&mut self, max_len: usize) -> Result<SampleStats, TrainError> {
        let (mut rsum, mut nonzero, mut draws) = (0.0, 0usize, 0usize);
        for i in 0..self.train.len() {
            let cands = self.explore(i, max_len)?;
            for (_, n, r) in &cands {
                rsum += *n as f64 * r;
                draws += n;
                if *r > 0.0 {
                    nonzero += n;
                }
            }
            let scored: Vec<(Vec<Token>, f64)> = cands.into_iter().map(|(t, _, r)| (t, r)).collect();
            self.pseudo_gold[i].offer(&scored, self.cfg.pseudo_gold_cap);
        }
        Ok(SampleStats {
            mean_reward: rsum / draws.max(1) as f64,
            nonzero_fraction: nonzero as f64 / draws.max(1) as f64,
        })
    }

    /// Maximum-likelihood phase: one epoch over examples with pseudo-gold.
    pub fn iml_mle_epoch(&mut self, max_len: usize) -> Result<f64, TrainError> {
        let gen_weight = if self.cfg.use_generator { 1.0 } else { 0.0 };
        let idx: Vec<usize> = (0..self.train.len())
            .filter(|&i| !self.pseudo_gold[i].formulas.is_empty())
            .collect();
        let n = idx.len();
        let mut loss = 0.0;
        for batch in self.batches(idx) {
            let mut g = self.model.zero_grads();
            for &i in &batch {
                let pg = &self.pseudo_gold[i].formulas;
                let w = 1.0 / pg.len() as f64;
                let targets: Vec<(Vec<Token>, f64)> = pg.iter().map(|t| (t.clone(), w)).collect();
                loss += self.example_grad(i, &targets, max_len, gen_weight, &mut g)?;
            }
            self.apply(g, batch.len())?;
        }
        Ok(loss / n.max(1) as f64)
    }

    /// One IML round: explore, then `iml_inner_epochs` of maximum likelihood.
    pub fn iml_iteration(&mut self, round: usize) -> Result<(f64, SampleStats), TrainError> {
        let max_len = curriculum_len(round * self.cfg.iml_inner_epochs, &self.cfg);
        let stats = self.iml_explore(max_len)?;
        let mut loss = 0.0;
        for _ in 0..self.cfg.iml_inner_epochs {
            loss = self.iml_mle_epoch(max_len)?;
        }
        Ok((loss, stats))
    }

    /// Teacher-forced epoch on ground-truth formulas.
    pub fn supervised_epoch(&mut self) -> Result<f64, TrainError> {
        let max_len = self.cfg.final_len();
        let gen_weight = if self.cfg.use_generator { 1.0 } else { 0.0 };
        let mut loss = 0.0;
        for batch in self.batches((0..self.train.len()).collect()) {
            let mut g = self.model.zero_grads();
            for &i in &batch {
                let gold = self.gold[i].clone().ok_or(TrainError::MissingGroundTruth(i))?;
                loss += self.example_grad(i, &[(gold, 1.0)], max_len, gen_weight, &mut g)?;
            }
            self.apply(g, batch.len())?;
        }
        Ok(loss / self.train.len() as f64)
    }

    /// Exec and Plan of beam top-1 predictions on the validation split.
    pub fn validate(&self, max_len: usize) -> Result<(f64, Option<f64>), TrainError> {
        if self.val.is_empty() {
            return Ok((0.0, None));
        }
        let r = evaluate_model(
            &self.model,
            self.lexicon,
            &self.val,
            max_len,
            self.cfg.beam_width,
            &self.cfg.policy,
        )?;
        Ok((r.exec, r.plan))
    }

    pub fn checkpoint(&self, max_len: usize) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            lexicon: self.lexicon.clone(),
            max_len,
        }
    }
}

/// Train with the configured method, logging one JSON line per epoch (per
/// round for IML) and keeping the parameters with the best validation Exec.
pub fn train(ds: &Dataset, cfg: &TrainConfig, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome, TrainError> {
    let mut t = Trainer::new(ds, cfg.clone())?;
    if cfg.method == Method::Supervised {
        for (i, ex) in ds.split(Split::Train).iter().enumerate() {
            if ex.formula.is_none() {
                return Err(TrainError::MissingGroundTruth(i));
            }
        }
    }
    let periods = match cfg.method {
        Method::Iml => cfg.iml_rounds,
        _ => cfg.epochs,
    };
    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut best_epoch = 0;
    for e in 0..periods {
        let (epoch, max_len) = match cfg.method {
            Method::Iml => (e, curriculum_len(e * cfg.iml_inner_epochs, cfg)),
            Method::Rl => (e, curriculum_len(e, cfg)),
            Method::Supervised => (e, cfg.final_len()),
        };
        let (loss, stats, alpha) = match cfg.method {
            Method::Rl => {
                let (l, s) = t.reinforce_epoch(e)?;
                (l, Some(s), if cfg.use_generator { cfg.alpha(e) } else { 0.0 })
            }
            Method::Iml => {
                let (l, s) = t.iml_iteration(e)?;
                (l, Some(s), if cfg.use_generator { 1.0 } else { 0.0 })
            }
            Method::Supervised => (t.supervised_epoch()?, None, if cfg.use_generator { 1.0 } else { 0.0 }),
        };
        let decode_len = match cfg.method {
            Method::Supervised => max_len,
            _ => max_len.max(cfg.curriculum_start_len),
        };
        let (val_exec, val_plan) = t.validate(decode_len)?;
        let stats_line = EpochStats {
            epoch,
            method: cfg.method,
            max_len,
            alpha,
            loss,
            mean_reward: stats.map(|s| s.mean_reward),
            nonzero_fraction: stats.map(|s| s.nonzero_fraction),
            pseudo_gold: (cfg.method == Method::Iml)
                .then(|| t.pseudo_gold.iter().filter(|p| !p.formulas.is_empty()).count()),
            val_exec,
            val_plan,
        };
        log::info!(
            "epoch {epoch}: loss {loss:.4} reward {:?} val exec {val_exec:.3}",
            stats_line.mean_reward
        );
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&stats_line).expect("stats serialize"))?;
        }
        history.push(stats_line);
        if best.as_ref().is_none_or(|(b, _)| val_exec >= *b) {
            best = Some((val_exec, t.checkpoint(decode_len)));
            best_epoch = epoch;
        }
    }
    let vals: Vec<f64> = history.iter().map(|h| h.val_exec).collect();
    debug_assert_eq!(select_model(&vals).ok(), (!vals.is_empty()).then_some(best_epoch));
    let (_, checkpoint) = best.ok_or(TrainError::EmptyHistory)?;
    Ok(TrainOutcome {
        checkpoint,
        best_epoch,
        history,
    })
}

/// Teacher-forced training on ground-truth formulas; the reference upper
/// bound for the weakly supervised methods.
pub fn supervised_train(
    ds: &Dataset,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    let cfg = TrainConfig {
        method: Method::Supervised,
        ..cfg.clone()
    };
    train(ds, &cfg, log)
}
