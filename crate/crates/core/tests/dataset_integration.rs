use std::fs;

use ltlground::dataset::grammar::parse_sentence;
use ltlground::dataset::io::write_dataset;
use ltlground::dataset::{generate, mean_sentence_length, GenConfig, Split};
use ltlground::eval::exec_ok;

#[test]
fn regeneration_is_byte_identical() {
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR"));
    let cfg = GenConfig {
        seed: 17,
        ..GenConfig::default()
    };
    let a = dir.join("regen_a.jsonl");
    let b = dir.join("regen_b.jsonl");
    let ds = generate(&cfg);
    write_dataset(&a, &ds).unwrap();
    write_dataset(&b, &generate(&cfg)).unwrap();
    let (ba, bb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(!ba.is_empty());
    assert!(ba == bb);
    assert_eq!(ds.examples.len(), 1000);

    // Soft check on the sentence length statistic of the machine corpus.
    let mean = mean_sentence_length(&ds);
    assert!((mean - 17.7).abs() <= 3.0, "mean sentence length {mean}");
}

#[test]
fn sentences_and_formulas_are_synchronous() {
    let ds = generate(&GenConfig {
        n: 500,
        seed: 3,
        ..GenConfig::default()
    });
    for ex in &ds.examples {
        let gold = ex.formula.as_ref().unwrap();
        let readings: Vec<_> = parse_sentence(&ex.sentence)
            .into_iter()
            .map(|f| f.rewrite_closer().unwrap())
            .collect();
        assert!(
            readings.contains(gold),
            "{} has no reading {gold}",
            ex.sentence.join(" ")
        );
        assert_eq!(ex.demos.len(), 3);
        assert!(exec_ok(gold, ex));
    }
    let counts = [Split::Train, Split::Val, Split::Test].map(|s| ds.split(s).len());
    assert_eq!(counts, [350, 75, 75]);
}
