use ltlground::dataset::{generate, Demo, Example, GenConfig, Split};
use ltlground::eval::{evaluate_predictions, metric_exec, metric_plan, random_baseline};
use ltlground::ltl::{Formula, Predicate};
use ltlground::planner::PolicyConfig;
use ltlground::world::{Action, Cell, EntityKind, Environment};

fn example(gold: Formula, demos: Vec<Demo>) -> Example {
    Example {
        sentence: vec!["go".into()],
        formula: Some(gold),
        gt_formula: None,
        class: None,
        demos,
        split: Split::Test,
    }
}

fn tree() -> Formula {
    Formula::atom(Predicate::Tree)
}

fn flag() -> Formula {
    Formula::atom(Predicate::Flag)
}

#[test]
fn ground_truth_predictions_score_one() {
    let ds = generate(&GenConfig {
        n: 200,
        seed: 2,
        ..GenConfig::default()
    });
    let test = ds.split(Split::Test);
    let preds: Vec<Formula> = test.iter().map(|e| e.formula.clone().unwrap()).collect();
    let r = evaluate_predictions(&preds, &test, &PolicyConfig::default()).unwrap();
    assert_eq!(r.exec, 1.0);
    assert_eq!(r.seq_f1, Some(1.0));
    assert_eq!(r.exact, Some(1.0));
    assert!(r.plan.unwrap() >= 0.95, "plan {:?}", r.plan);
}

#[test]
fn eventually_counts_for_always_under_exec() {
    // The robot starts next to the tree and never leaves it.
    let env = Environment::new(&[(EntityKind::Tree, Cell::new(3, 3))], Cell::new(3, 4)).unwrap();
    let demos = vec![Demo {
        env,
        actions: vec![Action::Grab, Action::Left, Action::Grab],
    }];
    let ex = example(Formula::always(tree()), demos);
    assert_eq!(metric_exec(&[Formula::eventually(tree())], &[&ex]), 1.0);
    assert_eq!(metric_exec(&[Formula::eventually(flag())], &[&ex]), 0.0);
}

#[test]
fn plan_punishes_over_general_parse() {
    // Tree at (3,3), flag at (3,5); the demo stays next to the tree while
    // reaching the flag. Dropping the "always" lets the planner take a
    // shortcut that leaves the tree.
    let env = Environment::new(
        &[(EntityKind::Tree, Cell::new(3, 3)), (EntityKind::Flag, Cell::new(3, 5))],
        Cell::new(2, 3),
    )
    .unwrap();
    let demos = vec![Demo {
        env,
        actions: vec![Action::Right, Action::Down],
    }];
    let gold = Formula::and(Formula::always(tree()), Formula::eventually(flag()));
    let loose = Formula::and(Formula::eventually(tree()), Formula::eventually(flag()));
    let ex = example(gold.clone(), demos);
    let policy = PolicyConfig::default();
    assert_eq!(metric_exec(std::slice::from_ref(&loose), &[&ex]), 1.0);
    assert_eq!(metric_plan(std::slice::from_ref(&loose), &[&ex], &policy).unwrap(), 0.0);
    assert_eq!(metric_plan(&[gold], &[&ex], &policy).unwrap(), 1.0);
    let r = evaluate_predictions(&[loose], &[&ex], &policy).unwrap();
    assert!(r.exec >= r.exact.unwrap());
    assert_eq!(r.exact, Some(0.0));
}

#[test]
fn random_baseline_lands_in_band() {
    let ds = generate(&GenConfig::default());
    let test = ds.split(Split::Test);
    let policy = PolicyConfig::default();
    let mut total = 0.0;
    for seed in 0..5 {
        let r = random_baseline(&test, seed, &policy).unwrap();
        assert_eq!(r.seed, Some(seed));
        assert!(r.exec >= r.exact.unwrap_or(0.0));
        r.check().unwrap();
        total += r.exec;
    }
    let mean = total / 5.0;
    assert!((0.05..=0.30).contains(&mean), "random Exec {mean}");
}
