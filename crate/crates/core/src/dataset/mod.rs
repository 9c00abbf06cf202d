//! Machine dataset generation and the dataset container.

pub mod grammar;
pub mod io;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::automata::Automaton;
use crate::ltl::Formula;
use crate::planner::ProductPlanner;
use crate::world::{sample_environment, trace_of, Action, Environment, HORIZON};

pub use grammar::{GrammarConfig, MannaClass};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no accepting trajectories after {0} environments")]
    GenerationStalled(usize),
    #[error("line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demo {
    pub env: Environment,
    pub actions: Vec<Action>,
}

/// One sentence with its demonstrations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub sentence: Vec<String>,
    /// Ground truth of machine data; only the supervised baseline and the
    /// metrics read it.
    pub formula: Option<Formula>,
    /// Generating formula of a human row; evaluation only.
    pub gt_formula: Option<Formula>,
    pub class: Option<MannaClass>,
    pub demos: Vec<Demo>,
    pub split: Split,
}

impl Example {
    /// Formula the Plan metric checks rollouts against.
    pub fn reference_formula(&self) -> Option<&Formula> {
        self.formula.as_ref().or(self.gt_formula.as_ref())
    }
}

pub const UNK: &str = "<unk>";

/// Word index built from the training split; index 0 is the unknown word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Lexicon {
        let set: BTreeSet<String> = words.into_iter().filter(|w| w != UNK).collect();
        let mut all = vec![UNK.to_string()];
        all.extend(set);
        let index = all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Lexicon { words: all, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn encode(&self, sentence: &[String]) -> Vec<usize> {
        sentence.iter().map(|w| self.id(w)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub lexicon: Lexicon,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Dataset {
        let lexicon = Lexicon::from_words(
            examples
                .iter()
                .filter(|e| e.split == Split::Train)
                .flat_map(|e| e.sentence.iter().cloned()),
        );
        Dataset { examples, lexicon }
    }

    pub fn split(&self, split: Split) -> Vec<&Example> {
        self.examples.iter().filter(|e| e.split == split).collect()
    }
}

/// Sizes of the train/val/test partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSizes {
    /// 70/15/15 by fraction.
    Standard,
    Counts {
        train: usize,
        val: usize,
        test: usize,
    },
}

impl SplitSizes {
    fn counts(self, n: usize) -> (usize, usize) {
        match self {
            SplitSizes::Standard => {
                let train = (n as f64 * 0.70).round() as usize;
                let val = (n as f64 * 0.15).round() as usize;
                (train.min(n), val.min(n - train.min(n)))
            }
            SplitSizes::Counts { train, val, .. } => (train, val),
        }
    }
}

/// Assign splits by a seeded shuffle.
pub fn assign_splits(examples: &mut [Example], sizes: SplitSizes, seed: u64) {
    let n = examples.len();
    let (train, val) = sizes.counts(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    for (rank, &i) in order.iter().enumerate() {
        examples[i].split = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub grammar: GrammarConfig,
    /// Upper bound on post-rewrite formula length.
    pub max_tokens: Option<usize>,
    pub max_env_attempts: usize,
    pub split: SplitSizes,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 1000,
            k: 3,
            seed: 0,
            grammar: GrammarConfig::default(),
            max_tokens: None,
            max_env_attempts: 200,
            split: SplitSizes::Standard,
        }
    }
}

/// Environments and accepting trajectories for `f` by rejection sampling.
pub fn build_demos<R: Rng + ?Sized>(
    f: &Formula,
    rng: &mut R,
    k: usize,
    max_env_attempts: usize,
) -> Result<Vec<Demo>, DatasetError> {
    let aut = Automaton::compile(f);
    let required = f.support();
    let mut demos = Vec::with_capacity(k);
    for _ in 0..max_env_attempts {
        let env = sample_environment(rng, &required);
        let planner = ProductPlanner::new(&aut, &env);
        if let Ok(actions) = planner.find_accepting(rng, HORIZON) {
            debug_assert!(aut.accepts(&trace_of(&env, &actions)).unwrap());
            demos.push(Demo { env, actions });
            if demos.len() == k {
                return Ok(demos);
            }
        }
    }
    Err(DatasetError::GenerationStalled(max_env_attempts))
}

/// Attach `k` demonstrations to a (rewritten) formula and its sentence.
pub fn build_example<R: Rng + ?Sized>(
    f: &Formula,
    sentence: Vec<String>,
    class: Option<MannaClass>,
    rng: &mut R,
    k: usize,
    max_env_attempts: usize,
) -> Result<Example, DatasetError> {
    let demos = build_demos(f, rng, k, max_env_attempts)?;
    Ok(Example {
        sentence,
        formula: Some(f.clone()),
        gt_formula: None,
        class,
        demos,
        split: Split::Train,
    })
}

/// Per-example random stream derived from (seed, index).
pub fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draw one machine example: class, derivation, sentence, rewrite, demos.
/// Formulas that exceed the length bound or stall are redrawn.
pub fn generate_example(cfg: &GenConfig, index: usize) -> Example {
    let mut rng = example_rng(cfg.seed, index);
    loop {
        let class = MannaClass::sample(&mut rng);
        let (raw, derivation) = grammar::sample_formula(class, &cfg.grammar, &mut rng);
        let formula = raw.rewrite_closer().expect("grammar emits no relation atoms");
        if cfg.max_tokens.is_some_and(|m| formula.len() > m) {
            continue;
        }
        let sentence = grammar::realize_sentence(&derivation, &mut rng);
        match build_example(&formula, sentence, Some(class), &mut rng, cfg.k, cfg.max_env_attempts) {
            Ok(ex) => return ex,
            Err(e) => log::debug!("example {index}: {e} for {formula}; redrawing"),
        }
    }
}

pub fn generate(cfg: &GenConfig) -> Dataset {
    let mut examples: Vec<Example> = (0..cfg.n).map(|i| generate_example(cfg, i)).collect();
    assign_splits(&mut examples, cfg.split, cfg.seed);
    let ds = Dataset::new(examples);
    let mean_len = mean_sentence_length(&ds);
    if cfg.grammar == GrammarConfig::default() && cfg.n >= 100 && (mean_len - 17.7).abs() > 3.0 {
        log::warn!("mean machine sentence length {mean_len:.1} outside 17.7 ± 3");
    }
    ds
}

pub fn mean_sentence_length(ds: &Dataset) -> f64 {
    if ds.examples.is_empty() {
        return 0.0;
    }
    ds.examples.iter().map(|e| e.sentence.len()).sum::<usize>() as f64 / ds.examples.len() as f64
}

/// Reduced setting used for desk-scale experiments: APPLE, FLAG and TREE
/// only, formulas of at most 7 tokens, 200/50/50 split.
pub fn reduced_config(seed: u64) -> GenConfig {
    use crate::ltl::Predicate;
    GenConfig {
        n: 300,
        k: 3,
        seed,
        grammar: GrammarConfig::restricted(&[Predicate::Apple, Predicate::Flag, Predicate::Tree]),
        max_tokens: Some(7),
        max_env_attempts: 200,
        split: SplitSizes::Counts {
            train: 200,
            val: 50,
            test: 50,
        },
    }
}
