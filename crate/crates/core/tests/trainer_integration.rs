mod support;

use ltlground::dataset::{generate, reduced_config, Dataset, Demo, GenConfig, Split, SplitSizes};
use ltlground::ltl::{Formula, Predicate, Token};
use ltlground::model::adam::Adam;
use ltlground::model::{Model, ModelConfig};
use ltlground::planner::{boltzmann, PolicyConfig};
use ltlground::trainer::{reward, surrogate_targets, train, Method, TrainConfig, Trainer};
use ltlground::world::{Action, Cell, EntityKind, Environment};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_dataset(seed: u64, train: usize) -> Dataset {
    generate(&GenConfig {
        n: train + 10,
        split: SplitSizes::Counts { train, val: 5, test: 5 },
        ..reduced_config(seed)
    })
}

fn small_model_config() -> ModelConfig {
    ModelConfig {
        word_dim: 8,
        token_dim: 8,
        hidden: 12,
        ..ModelConfig::default()
    }
}

fn tokens(s: &str) -> Vec<Token> {
    Formula::parse_postorder(s).unwrap().to_tokens()
}

#[test]
fn zero_rewards_leave_parser_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = Model::new(small_model_config(), 7, &mut rng).unwrap();
    let words = [1, 4, 2, 6];
    let cands = vec![(tokens("APPLE EVENTUALLY"), 5, 0.0), (tokens("TREE ALWAYS"), 3, 0.0)];
    let targets = surrogate_targets(&cands, 8);
    assert!(targets.is_empty());

    for alpha in [0.0, 1.0] {
        let before = model.params().to_vec();
        let mut g = model.zero_grads();
        model
            .accumulate_example(&words, &targets, 7, alpha, None, &mut g)
            .unwrap();
        for i in 0..g.blocks.len() {
            if model.is_parser_block(i) {
                assert!(g.blocks[i].is_zero(), "{}", model.block_names()[i]);
            }
        }
        let names = model.block_names().to_vec();
        let mut opt = Adam::new(1e-2, model.params());
        opt.step(model.params_mut(), &g, &names).unwrap();
        for i in 0..before.len() {
            let unchanged = before[i] == model.params()[i];
            if alpha == 0.0 || model.is_parser_block(i) {
                assert!(unchanged, "alpha {alpha}: {} moved", names[i]);
            } else if model.is_generator_block(i) && names[i].contains("out") {
                assert!(!unchanged, "generator block {} did not move", names[i]);
            }
        }
    }
}

#[test]
fn surrogate_gradient_is_reward_weighted_mle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::new(small_model_config(), 7, &mut rng).unwrap();
    let words = [2, 3, 5];
    let z = tokens("APPLE EVENTUALLY FLAG ALWAYS AND");

    let mut mle = model.zero_grads();
    model
        .accumulate_example(&words, &[(z.clone(), 1.0)], 7, 0.0, None, &mut mle)
        .unwrap();

    // One draw with reward 1 is plain maximum likelihood.
    let mut single = model.zero_grads();
    let t = surrogate_targets(&[(z.clone(), 1, 1.0)], 1);
    model.accumulate_example(&words, &t, 7, 0.0, None, &mut single).unwrap();
    assert_eq!(single.blocks, mle.blocks);

    // Three of eight draws at reward 0.4 scale it by 0.15.
    let mut mixed = model.zero_grads();
    let t = surrogate_targets(&[(z, 3, 0.4), (tokens("APPLE ALWAYS"), 5, 0.0)], 8);
    model.accumulate_example(&words, &t, 7, 0.0, None, &mut mixed).unwrap();
    for (a, b) in mixed.blocks.iter().zip(&mle.blocks) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - 0.15 * y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}

fn demo(tree: (usize, usize), start: (usize, usize), actions: &[Action]) -> Demo {
    Demo {
        env: Environment::new(
            &[
                (EntityKind::Tree, Cell::new(tree.0, tree.1)),
                (EntityKind::Apple, Cell::new(0, 6)),
            ],
            Cell::new(start.0, start.1),
        )
        .unwrap(),
        actions: actions.to_vec(),
    }
}

/// Per-step likelihood replayed with exhaustive shortest-suffix search.
fn replayed_likelihood(f: &Formula, d: &Demo, cfg: &PolicyConfig) -> f64 {
    let mut total = 0.0;
    for j in 0..d.actions.len() {
        let mut dists = [None; 5];
        for a in Action::ALL {
            let mut prefix = d.actions[..j].to_vec();
            prefix.push(a);
            dists[a.index()] = support::shortest_accepting_suffix(f, &d.env, &prefix, 5);
        }
        total += boltzmann(&dists, cfg)[d.actions[j].index()];
    }
    total / d.actions.len() as f64
}

fn tree_demos() -> Vec<Demo> {
    use Action::*;
    vec![
        demo((3, 3), (0, 3), &[Up, Right, Right, Down]),
        demo((4, 2), (4, 4), &[Up, Left]),
        demo((1, 1), (3, 1), &[Down, Left, Left, Grab]),
    ]
}

#[test]
fn reward_of_ground_truth_matches_replay() {
    let f = Formula::eventually(Formula::atom(Predicate::Tree));
    let demos = tree_demos();
    let cfg = PolicyConfig::default();
    let expected = demos.iter().map(|d| replayed_likelihood(&f, d, &cfg)).sum::<f64>() / 3.0;
    let got = reward(&f, &demos, &cfg);
    assert!(got.accepted_all);
    assert!((got.reward - expected).abs() < 1e-12, "{} vs {expected}", got.reward);
}

#[test]
fn reward_is_zero_when_one_demo_is_rejected() {
    let mut demos = tree_demos();
    // The second demo never gets near the tree.
    demos[1] = demo((4, 2), (4, 4), &[Action::Left]);
    let f = Formula::eventually(Formula::atom(Predicate::Tree));
    assert_eq!(reward(&f, &demos, &PolicyConfig::default()).reward, 0.0);
    let never = Formula::eventually(Formula::atom(Predicate::Apple));
    let r = reward(&never, &tree_demos(), &PolicyConfig::default());
    assert_eq!(r.reward, 0.0);
    assert!(!r.accepted_all);
}

#[test]
fn flat_policy_gives_one_fifth() {
    let cfg = PolicyConfig {
        beta: 1e-12,
        epsilon_floor: 0.0,
        ..PolicyConfig::default()
    };
    let f = Formula::eventually(Formula::atom(Predicate::Tree));
    let r = reward(&f, &tree_demos(), &cfg);
    assert!((r.reward - 0.2).abs() < 1e-9, "{}", r.reward);
}

fn quick_config(method: Method, seed: u64) -> TrainConfig {
    TrainConfig {
        method,
        seed,
        k_samples: 16,
        epochs: 2,
        iml_rounds: 2,
        iml_inner_epochs: 2,
        batch_size: 4,
        beam_width: 3,
        model: small_model_config(),
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let ds = small_dataset(5, 12);
    for method in [Method::Rl, Method::Iml, Method::Supervised] {
        let cfg = quick_config(method, 11);
        let run = || {
            let mut log = Vec::new();
            let out = train(&ds, &cfg, Some(&mut log)).unwrap();
            (out.checkpoint.to_json(), log)
        };
        let (ck1, log1) = run();
        let (ck2, log2) = run();
        assert_eq!(log1, log2, "{method:?}");
        assert!(ck1 == ck2, "{method:?}");
        assert_eq!(String::from_utf8(log1).unwrap().lines().count(), 2);
    }
}

#[test]
fn pseudo_gold_rewards_never_decrease() {
    let ds = small_dataset(6, 20);
    let mut cfg = quick_config(Method::Iml, 1);
    cfg.k_samples = 32;
    let mut t = Trainer::new(&ds, cfg).unwrap();
    let mut prev = vec![0.0; t.num_train()];
    for round in 0..4 {
        let before: Vec<Vec<Vec<Token>>> = t.pseudo_gold.iter().map(|p| p.formulas.clone()).collect();
        t.iml_iteration(round).unwrap();
        for (i, pg) in t.pseudo_gold.iter().enumerate() {
            assert!(pg.reward >= prev[i]);
            if pg.reward == prev[i] {
                // Ties only ever add formulas.
                assert!(before[i].iter().all(|f| pg.formulas.contains(f)));
            }
            assert_eq!(pg.formulas.is_empty(), pg.reward == 0.0);
            prev[i] = pg.reward;
        }
    }
    assert!(prev.iter().filter(|&&r| r > 0.0).count() >= 10);
}

#[test]
fn reinforce_raises_mean_reward() {
    let mut gains = Vec::new();
    for seed in 0..3 {
        let ds = small_dataset(seed, 20);
        let cfg = TrainConfig {
            method: Method::Rl,
            seed,
            curriculum_start_len: 7,
            batch_size: 4,
            k_samples: 64,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&ds, cfg).unwrap();
        let first = t.reinforce_epoch(0).unwrap().1.mean_reward;
        let mut last = first;
        for epoch in 1..30 {
            last = t.reinforce_epoch(epoch).unwrap().1.mean_reward;
        }
        gains.push(last - first);
    }
    gains.sort_by(f64::total_cmp);
    assert!(gains[1] > 0.0, "gains {gains:?}");
}

#[test]
fn supervised_memorizes_ten_pairs() {
    let ds = small_dataset(8, 10);
    let cfg = TrainConfig {
        method: Method::Supervised,
        batch_size: 1,
        model: ModelConfig {
            dropout: 0.0,
            lr: 5e-3,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(&ds, cfg.clone()).unwrap();
    let train: Vec<_> = ds.split(Split::Train);
    let max_len = cfg.final_len();
    let all_exact = |t: &Trainer| {
        train.iter().all(|ex| {
            let enc = t.model.encode(&ds.lexicon.encode(&ex.sentence)).unwrap();
            let (pred, _) = ltlground::model::decode::greedy_decode(&t.model, &enc, max_len);
            pred == ex.formula.as_ref().unwrap().to_tokens()
        })
    };
    let mut steps = 0;
    while !all_exact(&t) {
        assert!(steps < 1000, "not memorized after {steps} steps");
        t.supervised_epoch().unwrap();
        steps += train.len();
    }
}

#[test]
fn supervised_loss_decreases_early() {
    let ds = generate(&reduced_config(0));
    let cfg = TrainConfig {
        method: Method::Supervised,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(&ds, cfg).unwrap();
    let losses: Vec<f64> = (0..5).map(|_| t.supervised_epoch().unwrap()).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}
