//! Document and event data model, the JSONL corpus format, and timelines.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{relation_from_intervals, CoarseRelation, Interval, Relation};
use crate::io::{self, JsonlError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("line {line}: document {doc:?}: {problem}")]
    Invalid {
        line: usize,
        doc: String,
        problem: ValidationError,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("duplicate event id {0:?}")]
    DuplicateEvent(String),
    #[error("event {id:?}: span {start}..{end} outside text of {len} characters")]
    SpanOutOfBounds {
        id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("event {id:?}: text {expected:?} does not match document span {found:?}")]
    TextMismatch {
        id: String,
        expected: String,
        found: String,
    },
    #[error("{field} refers to unknown event {id:?}")]
    UnknownEvent { field: &'static str, id: String },
    #[error("{field} event {id:?} is not a section date")]
    NotSectionDate { field: &'static str, id: String },
    #[error("gold link {source_id:?} -> {target_id:?} appears more than once")]
    DuplicateLink {
        source_id: String,
        target_id: String,
    },
    #[error("gold link pairs event {0:?} with itself")]
    SelfLink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Medical,
    Timex,
    SectionDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub id: String,
    pub text: String,
    /// Character (not byte) offset, inclusive.
    pub char_start: usize,
    /// Character offset, exclusive.
    pub char_end: usize,
    pub sentence_index: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldLink {
    pub source: String,
    pub target: String,
    pub relation: CoarseRelation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub events: Vec<Event>,
    pub admission_event_id: Option<String>,
    pub discharge_event_id: Option<String>,
    pub gold_links: Vec<GoldLink>,
}

impl Document {
    pub fn event(&self, id: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.id == id)
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Text between two character offsets, or `None` when out of range.
    pub fn char_slice(&self, start: usize, end: usize) -> Option<&str> {
        if start > end {
            return None;
        }
        let mut indices = self
            .text
            .char_indices()
            .map(|(i, _)| i)
            .chain([self.text.len()]);
        let from = indices.nth(start)?;
        let to = if end == start {
            from
        } else {
            indices.nth(end - start - 1)?
        };
        Some(&self.text[from..to])
    }

    /// Section-date events present in the document (admission first).
    pub fn section_dates(&self) -> impl Iterator<Item = &Event> {
        [&self.admission_event_id, &self.discharge_event_id]
            .into_iter()
            .flatten()
            .filter_map(|id| self.event(id))
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut ids = HashSet::new();
        let len = self.char_len();
        for e in &self.events {
            if !ids.insert(e.id.as_str()) {
                return Err(ValidationError::DuplicateEvent(e.id.clone()));
            }
            if e.char_start >= e.char_end || e.char_end > len {
                return Err(ValidationError::SpanOutOfBounds {
                    id: e.id.clone(),
                    start: e.char_start,
                    end: e.char_end,
                    len,
                });
            }
            let found = self
                .char_slice(e.char_start, e.char_end)
                .unwrap_or_default();
            if found != e.text {
                return Err(ValidationError::TextMismatch {
                    id: e.id.clone(),
                    expected: e.text.clone(),
                    found: found.to_string(),
                });
            }
        }
        for (field, id) in [
            ("admission_event_id", &self.admission_event_id),
            ("discharge_event_id", &self.discharge_event_id),
        ] {
            if let Some(id) = id {
                match self.event(id) {
                    None => {
                        return Err(ValidationError::UnknownEvent {
                            field,
                            id: id.clone(),
                        })
                    }
                    Some(e) if e.kind != EventKind::SectionDate => {
                        return Err(ValidationError::NotSectionDate {
                            field,
                            id: id.clone(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        let mut links = HashSet::new();
        for link in &self.gold_links {
            for (field, id) in [
                ("gold_links.source", &link.source),
                ("gold_links.target", &link.target),
            ] {
                if !ids.contains(id.as_str()) {
                    return Err(ValidationError::UnknownEvent {
                        field,
                        id: id.clone(),
                    });
                }
            }
            if link.source == link.target {
                return Err(ValidationError::SelfLink(link.source.clone()));
            }
            if !links.insert((link.source.as_str(), link.target.as_str())) {
                return Err(ValidationError::DuplicateLink {
                    source_id: link.source.clone(),
                    target_id: link.target.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn gold_pairs(&self) -> impl Iterator<Item = (EventPair, CoarseRelation)> + '_ {
        self.gold_links
            .iter()
            .map(move |l| (EventPair::new(&self.id, &l.source, &l.target), l.relation))
    }
}

/// An ordered pair of distinct events within one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventPair {
    pub doc_id: String,
    #[serde(rename = "source")]
    pub source_id: String,
    #[serde(rename = "target")]
    pub target_id: String,
}

impl EventPair {
    pub fn new(doc_id: &str, source_id: &str, target_id: &str) -> Self {
        EventPair {
            doc_id: doc_id.to_string(),
            source_id: source_id.to_string(),
            target_id: target_id.to_string(),
        }
    }

    pub fn reversed(&self) -> Self {
        EventPair {
            doc_id: self.doc_id.clone(),
            source_id: self.target_id.clone(),
            target_id: self.source_id.clone(),
        }
    }
}

impl fmt::Display for EventPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:({}, {})",
            self.doc_id, self.source_id, self.target_id
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("document {doc_id:?} has no event {event_id:?}")]
pub struct UnknownEventError {
    pub doc_id: String,
    pub event_id: String,
}

/// Hidden ground-truth extents of every event in a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Clone + Serialize",
    deserialize = "T: PartialOrd + Deserialize<'de>"
))]
pub struct Timeline<T> {
    pub doc_id: String,
    pub intervals: IndexMap<String, Interval<T>>,
}

impl<T: PartialOrd> Timeline<T> {
    pub fn interval(&self, event_id: &str) -> Result<&Interval<T>, UnknownEventError> {
        self.intervals
            .get(event_id)
            .ok_or_else(|| UnknownEventError {
                doc_id: self.doc_id.clone(),
                event_id: event_id.to_string(),
            })
    }

    /// Endpoint-derived relation between the pair's source and target.
    pub fn gold_relation_of(&self, pair: &EventPair) -> Result<Relation, UnknownEventError> {
        let a = self.interval(&pair.source_id)?;
        let b = self.interval(&pair.target_id)?;
        Ok(relation_from_intervals(a, b))
    }
}

/// Reads and validates a corpus file.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let docs: Vec<(usize, Document)> = io::read_jsonl_numbered(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(docs.len());
    for (line, doc) in docs {
        doc.validate().map_err(|problem| CorpusError::Invalid {
            line,
            doc: doc.id.clone(),
            problem,
        })?;
        if !seen.insert(doc.id.clone()) {
            return Err(JsonlError::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate document id {:?}", doc.id),
            }
            .into());
        }
        out.push(doc);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<(), JsonlError> {
    io::write_jsonl(path, docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture() -> Document {
        let text = "Admission Date: 2012-03-01\nShe had fever and a rash.".to_string();
        let ev = |id: &str, s: usize, e: usize, sent: usize, kind| Event {
            id: id.into(),
            text: text.chars().skip(s).take(e - s).collect(),
            char_start: s,
            char_end: e,
            sentence_index: sent,
            kind,
        };
        Document {
            id: "d1".into(),
            events: vec![
                ev("adm", 16, 26, 0, EventKind::SectionDate),
                ev("e1", 35, 40, 1, EventKind::Medical),
                ev("e2", 47, 51, 1, EventKind::Medical),
            ],
            text,
            admission_event_id: Some("adm".into()),
            discharge_event_id: None,
            gold_links: vec![GoldLink {
                source: "e1".into(),
                target: "adm".into(),
                relation: CoarseRelation::After,
            }],
        }
    }

    #[test]
    fn fixture_is_valid() {
        let d = fixture();
        assert_eq!(d.events[1].text, "fever");
        assert_eq!(d.events[2].text, "rash");
        d.validate().unwrap();
    }

    #[test]
    fn span_past_end_is_named() {
        let mut d = fixture();
        d.events[2].char_end = 500;
        match d.validate() {
            Err(ValidationError::SpanOutOfBounds { id, .. }) => assert_eq!(id, "e2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn text_mismatch_and_dangling_links() {
        let mut d = fixture();
        d.events[1].text = "cough".into();
        assert!(matches!(
            d.validate(),
            Err(ValidationError::TextMismatch { .. })
        ));

        let mut d = fixture();
        d.gold_links[0].target = "nope".into();
        assert!(matches!(
            d.validate(),
            Err(ValidationError::UnknownEvent { .. })
        ));

        let mut d = fixture();
        d.gold_links.push(d.gold_links[0].clone());
        assert!(matches!(
            d.validate(),
            Err(ValidationError::DuplicateLink { .. })
        ));

        let mut d = fixture();
        d.admission_event_id = Some("e1".into());
        assert!(matches!(
            d.validate(),
            Err(ValidationError::NotSectionDate { .. })
        ));
    }

    #[test]
    fn char_offsets_are_not_bytes() {
        let mut d = fixture();
        d.text = "Über fever".into();
        d.events = vec![Event {
            id: "x".into(),
            text: "fever".into(),
            char_start: 5,
            char_end: 10,
            sentence_index: 0,
            kind: EventKind::Medical,
        }];
        d.admission_event_id = None;
        d.gold_links.clear();
        d.validate().unwrap();
        assert_eq!(d.char_slice(0, 4), Some("Über"));
        assert_eq!(d.char_slice(10, 10), Some(""));
        assert_eq!(d.char_slice(9, 11), None);
    }

    #[test]
    fn load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut d2 = fixture();
        d2.id = "d2".into();
        let docs = vec![fixture(), d2];
        write_corpus(&path, &docs).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), docs);

        let line = serde_json::to_string(&fixture())
            .unwrap()
            .replace("\"text\":\"Adm", "\"txt\":\"Adm");
        std::fs::write(&path, format!("\n{line}\n")).unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("txt") || err.contains("text"), "{err}");

        let mut bad = fixture();
        bad.events[1].char_end = 999;
        write_corpus(&path, &[bad]).unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("\"e1\""), "{err}");
    }

    #[test]
    fn gold_relation_lookup() {
        let mut intervals = IndexMap::new();
        intervals.insert("a".to_string(), Interval::new(0, 1).unwrap());
        intervals.insert("b".to_string(), Interval::new(2, 3).unwrap());
        intervals.insert("c".to_string(), Interval::new(1, 2).unwrap());
        intervals.insert("d".to_string(), Interval::new(0, 9).unwrap());
        intervals.insert("e".to_string(), Interval::new(0, 9).unwrap());
        let t = Timeline {
            doc_id: "d".into(),
            intervals,
        };
        let rel = |s, t2| t.gold_relation_of(&EventPair::new("d", s, t2));
        assert_eq!(rel("a", "b"), Ok(Relation::Before));
        assert_eq!(rel("c", "d"), Ok(Relation::IsIncluded));
        assert_eq!(rel("d", "e"), Ok(Relation::Simultaneous));
        assert!(rel("a", "zz").is_err());
    }
}
