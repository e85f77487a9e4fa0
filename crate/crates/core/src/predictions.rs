//! Per-pair predicted relation sets and their JSONL form.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::algebra::RelationSet;
use crate::corpus::EventPair;
use crate::io::{self, JsonlError};
use crate::prompting::AnswerSet;

/// Where a pair's relation set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[serde(rename = "batchqa")]
    BatchQa,
    Cot,
    WOrder,
    Oracle,
    Repaired,
    /// Produced outside this toolkit or by a test harness.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub relations: RelationSet,
    pub provenance: Provenance,
    pub answers: Option<AnswerSet>,
}

impl Prediction {
    pub fn new(relations: RelationSet, provenance: Provenance) -> Self {
        Prediction {
            relations,
            provenance,
            answers: None,
        }
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub source: String,
    pub target: String,
    pub relations: RelationSet,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<AnswerSet>,
}

/// Predicted relations per pair, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionSet {
    entries: IndexMap<EventPair, Prediction>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces; a replaced pair keeps its original position.
    pub fn insert(&mut self, pair: EventPair, prediction: Prediction) {
        self.entries.insert(pair, prediction);
    }

    pub fn get(&self, pair: &EventPair) -> Option<&Prediction> {
        self.entries.get(pair)
    }

    pub fn relations(&self, pair: &EventPair) -> Option<RelationSet> {
        self.entries.get(pair).map(|p| p.relations)
    }

    pub fn contains(&self, pair: &EventPair) -> bool {
        self.entries.contains_key(pair)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &EventPair> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EventPair, &Prediction)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&EventPair, &mut Prediction)> {
        self.entries.iter_mut()
    }

    pub fn to_records(&self) -> Vec<PredictionRecord> {
        self.entries
            .iter()
            .map(|(pair, p)| PredictionRecord {
                doc_id: pair.doc_id.clone(),
                source: pair.source_id.clone(),
                target: pair.target_id.clone(),
                relations: p.relations,
                provenance: p.provenance,
                answers: p.answers,
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), JsonlError> {
        io::write_jsonl(path, &self.to_records())
    }

    pub fn read(path: &Path) -> Result<Self, JsonlError> {
        let records: Vec<(usize, PredictionRecord)> = io::read_jsonl_numbered(path)?;
        let mut set = PredictionSet::new();
        for (line, r) in records {
            let pair = EventPair::new(&r.doc_id, &r.source, &r.target);
            if pair.source_id == pair.target_id || set.contains(&pair) {
                return Err(JsonlError::Malformed {
                    path: path.to_path_buf(),
                    line,
                    message: format!("duplicate or self pair {pair}"),
                });
            }
            set.insert(
                pair,
                Prediction {
                    relations: r.relations,
                    provenance: r.provenance,
                    answers: r.answers,
                },
            );
        }
        Ok(set)
    }
}

impl FromIterator<(EventPair, Prediction)> for PredictionSet {
    fn from_iter<I: IntoIterator<Item = (EventPair, Prediction)>>(iter: I) -> Self {
        PredictionSet {
            entries: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Relation;
    use crate::prompting::Answer;

    #[test]
    fn file_round_trip() {
        let mut set = PredictionSet::new();
        set.insert(
            EventPair::new("d", "a", "b"),
            Prediction::new(RelationSet::single(Relation::Before), Provenance::Oracle),
        );
        let mut p = Prediction::new(RelationSet::EMPTY, Provenance::Cot);
        p.answers = Some(AnswerSet::uniform(Answer::No));
        set.insert(EventPair::new("d", "b", "c"), p);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        set.write(&path).unwrap();
        assert_eq!(PredictionSet::read(&path).unwrap(), set);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            r#"{"doc_id":"d","source":"a","target":"b","relations":["before"],"provenance":"oracle"}"#
        ));
        std::fs::write(&path, format!("{text}{}", text.lines().next().unwrap())).unwrap();
        assert!(PredictionSet::read(&path)
            .unwrap_err()
            .to_string()
            .contains(":3:"));
    }
}
