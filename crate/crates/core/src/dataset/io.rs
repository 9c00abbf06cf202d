//! JSONL serialization of datasets and ingestion of human-written rows.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grammar::{tokenize, MannaClass};
use super::{assign_splits, Dataset, DatasetError, Demo, Example, Split, SplitSizes};
use crate::ltl::Formula;
use crate::world::{Action, EnvJson, Environment, HORIZON};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoRow {
    env: EnvJson,
    actions: Vec<Action>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    sentence: Vec<String>,
    formula: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_formula: Option<String>,
    class: Option<MannaClass>,
    demos: Vec<DemoRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

fn schema(line: usize, msg: impl ToString) -> DatasetError {
    DatasetError::Schema {
        line,
        msg: msg.to_string(),
    }
}

fn demo_to_row(d: &Demo) -> DemoRow {
    DemoRow {
        env: d.env.to_json(),
        actions: d.actions.clone(),
    }
}

fn demo_from_row(row: &DemoRow, line: usize) -> Result<Demo, DatasetError> {
    let env = Environment::from_json(&row.env).map_err(|e| schema(line, e))?;
    if row.actions.is_empty() || row.actions.len() > HORIZON {
        return Err(schema(
            line,
            format!("trajectory length {} outside 1..={HORIZON}", row.actions.len()),
        ));
    }
    Ok(Demo {
        env,
        actions: row.actions.clone(),
    })
}

fn parse_formula(text: &Option<String>, line: usize) -> Result<Option<Formula>, DatasetError> {
    text.as_deref()
        .map(|t| Formula::parse_postorder(t).map_err(|e| schema(line, e)))
        .transpose()
}

pub fn example_to_json(ex: &Example) -> String {
    let row = Row {
        sentence: ex.sentence.clone(),
        formula: ex.formula.as_ref().map(Formula::to_postorder_string),
        gt_formula: ex.gt_formula.as_ref().map(Formula::to_postorder_string),
        class: ex.class,
        demos: ex.demos.iter().map(demo_to_row).collect(),
        split: Some(ex.split.name().to_string()),
    };
    serde_json::to_string(&row).expect("rows serialize")
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), DatasetError> {
    let mut out = Vec::new();
    for ex in &ds.examples {
        out.extend_from_slice(example_to_json(ex).as_bytes());
        out.push(b'\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DatasetError> {
    let mut examples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(raw).map_err(|e| schema(line, e))?;
        let split = match row.split.as_deref() {
            None => Split::Train,
            Some(s) => Split::parse(s).ok_or_else(|| schema(line, format!("unknown split `{s}`")))?,
        };
        examples.push(Example {
            sentence: row.sentence,
            formula: parse_formula(&row.formula, line)?,
            gt_formula: parse_formula(&row.gt_formula, line)?,
            class: row.class,
            demos: row
                .demos
                .iter()
                .map(|d| demo_from_row(d, line))
                .collect::<Result<_, _>>()?,
            split,
        });
    }
    Ok(Dataset::new(examples))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    parse_dataset(&fs::read_to_string(path)?)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SentenceField {
    Text(String),
    Tokens(Vec<String>),
}

/// Reference to demonstration `demo` of example `example` in a machine
/// dataset.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoRef {
    example: usize,
    demo: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HumanRow {
    sentence: SentenceField,
    #[serde(default)]
    demos: Option<Vec<DemoRow>>,
    #[serde(default)]
    demo_refs: Option<Vec<DemoRef>>,
    #[serde(default)]
    gt_formula: Option<String>,
    #[serde(default)]
    split: Option<String>,
}

/// Parse human-written rows. Sentences are lowercased and split on
/// punctuation. Demonstrations are inline or refer into `source`. Rows
/// without a `split` field are assigned 70/15/15 by `seed`.
pub fn parse_human(text: &str, source: Option<&Dataset>, seed: u64) -> Result<Dataset, DatasetError> {
    let mut examples = Vec::new();
    let mut explicit_splits = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: HumanRow = serde_json::from_str(raw).map_err(|e| schema(line, e))?;
        let sentence = match row.sentence {
            SentenceField::Text(t) => tokenize(&t),
            SentenceField::Tokens(ts) => ts.iter().flat_map(|t| tokenize(t)).collect(),
        };
        if sentence.is_empty() {
            return Err(schema(line, "empty sentence"));
        }
        let mut demos = Vec::new();
        if let Some(rows) = &row.demos {
            for d in rows {
                demos.push(demo_from_row(d, line)?);
            }
        }
        if let Some(refs) = &row.demo_refs {
            let src = source.ok_or_else(|| schema(line, "demo_refs need a source dataset"))?;
            for r in refs {
                let d = src
                    .examples
                    .get(r.example)
                    .and_then(|e| e.demos.get(r.demo))
                    .ok_or_else(|| schema(line, format!("no demo {}/{}", r.example, r.demo)))?;
                demos.push(d.clone());
            }
        }
        if demos.is_empty() {
            return Err(schema(line, "row has no demonstrations"));
        }
        let split = match row.split.as_deref() {
            None => Split::Train,
            Some(s) => {
                explicit_splits += 1;
                Split::parse(s).ok_or_else(|| schema(line, format!("unknown split `{s}`")))?
            }
        };
        examples.push(Example {
            sentence,
            formula: None,
            gt_formula: parse_formula(&row.gt_formula, line)?,
            class: None,
            demos,
            split,
        });
    }
    if explicit_splits == 0 {
        assign_splits(&mut examples, SplitSizes::Standard, seed);
    }
    Ok(Dataset::new(examples))
}

pub fn ingest_human(path: &Path, source: Option<&Dataset>, seed: u64) -> Result<Dataset, DatasetError> {
    parse_human(&fs::read_to_string(path)?, source, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GenConfig};

    #[test]
    fn round_trip_generated() {
        let ds = generate(&GenConfig {
            n: 12,
            ..GenConfig::default()
        });
        let text: String = ds.examples.iter().map(|e| example_to_json(e) + "\n").collect();
        assert_eq!(parse_dataset(&text).unwrap(), ds);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let ds = parse_dataset("").unwrap();
        assert!(ds.examples.is_empty());
        assert!(ds.lexicon.is_empty());
    }

    #[test]
    fn corrupted_row_reports_line() {
        let ds = generate(&GenConfig {
            n: 2,
            ..GenConfig::default()
        });
        let mut text: String = ds.examples.iter().map(|e| example_to_json(e) + "\n").collect();
        text.push_str("{\"sentence\": 3}\n");
        match parse_dataset(&text) {
            Err(DatasetError::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn row_shape() {
        let ds = generate(&GenConfig {
            n: 1,
            ..GenConfig::default()
        });
        let v: serde_json::Value = serde_json::from_str(&example_to_json(&ds.examples[0])).unwrap();
        assert!(v["sentence"].is_array());
        assert!(v["formula"].is_string());
        assert!(v["class"].is_string());
        assert_eq!(v["demos"].as_array().unwrap().len(), 3);
        assert!(v["demos"][0]["env"]["grid"] == 7);
        assert!(v["demos"][0]["actions"][0].is_string());
    }

    #[test]
    fn human_rows() {
        let text = r#"{"sentence": "Guarantee that you snatch the pear", "demos": [{"env": {"grid": 7, "entities": [{"kind": "PEAR", "x": 1, "y": 0}], "robot": [0, 0]}, "actions": ["RIGHT", "GRAB"]}], "gt_formula": "CLOSER_PEAR PEAR UNTIL EVENTUALLY", "split": "train"}
{"sentence": "grab the peach", "demos": [{"env": {"grid": 7, "entities": [], "robot": [0, 0]}, "actions": ["UP"]}], "split": "test"}"#;
        let ds = parse_human(text, None, 0).unwrap();
        assert_eq!(
            ds.examples[0].sentence,
            vec!["guarantee", "that", "you", "snatch", "the", "pear"]
        );
        assert!(ds.examples[0].formula.is_none());
        assert!(ds.examples[0].gt_formula.is_some());
        assert_eq!(ds.lexicon.id("peach"), 0);
        assert_ne!(ds.lexicon.id("snatch"), 0);
        assert!(matches!(
            parse_human("{\"sentence\": \"x\"}", None, 0),
            Err(DatasetError::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn human_demo_refs_resolve() {
        let src = generate(&GenConfig {
            n: 2,
            ..GenConfig::default()
        });
        let text = r#"{"sentence": "go somewhere", "demo_refs": [{"example": 1, "demo": 2}]}"#;
        let ds = parse_human(text, Some(&src), 0).unwrap();
        assert_eq!(ds.examples[0].demos[0], src.examples[1].demos[2]);
        assert!(parse_human(text, None, 0).is_err());
    }
}
