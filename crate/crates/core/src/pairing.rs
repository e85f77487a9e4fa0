//! Candidate pair generation and the mention-order baseline.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::Relation;
use crate::corpus::{Document, Event, EventKind, EventPair, UnknownEventError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKey {
    ExactText,
    /// Lowercased with runs of whitespace collapsed.
    NormalizedText,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cross_sentence_max_distance must be at least 1")]
pub struct PairingConfigError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingRuleConfig {
    pub enable_section_date_pairs: bool,
    pub enable_consecutive_pairs: bool,
    pub enable_cross_sentence_pairs: bool,
    pub cross_sentence_max_distance: usize,
    pub cross_sentence_match: MatchKey,
}

impl Default for PairingRuleConfig {
    fn default() -> Self {
        PairingRuleConfig {
            enable_section_date_pairs: true,
            enable_consecutive_pairs: true,
            enable_cross_sentence_pairs: true,
            cross_sentence_max_distance: 3,
            cross_sentence_match: MatchKey::NormalizedText,
        }
    }
}

impl PairingRuleConfig {
    pub fn none() -> Self {
        PairingRuleConfig {
            enable_section_date_pairs: false,
            enable_consecutive_pairs: false,
            enable_cross_sentence_pairs: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), PairingConfigError> {
        if self.cross_sentence_max_distance == 0 {
            Err(PairingConfigError)
        } else {
            Ok(())
        }
    }
}

fn mention_order(a: &Event, b: &Event) -> Ordering {
    (a.char_start, a.char_end, &a.id).cmp(&(b.char_start, b.char_end, &b.id))
}

fn match_key(text: &str, mode: MatchKey) -> String {
    match mode {
        MatchKey::ExactText => text.to_string(),
        MatchKey::NormalizedText => text
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" "),
    }
}

struct PairCollector<'a> {
    doc_id: &'a str,
    seen: HashSet<(&'a str, &'a str)>,
    out: Vec<EventPair>,
}

impl<'a> PairCollector<'a> {
    fn push(&mut self, source: &'a str, target: &'a str) {
        if source == target {
            return;
        }
        let key = if source < target {
            (source, target)
        } else {
            (target, source)
        };
        if self.seen.insert(key) {
            self.out.push(EventPair::new(self.doc_id, source, target));
        }
    }
}

/// Candidate pairs from the three rule families, in first-occurrence order:
/// event/section-date pairs, consecutive same-sentence pairs, then
/// cross-sentence pairs of matching mentions.
pub fn generate_candidate_pairs(doc: &Document, cfg: &PairingRuleConfig) -> Vec<EventPair> {
    let mut ordered: Vec<&Event> = doc.events.iter().collect();
    ordered.sort_by(|a, b| mention_order(a, b));

    let mut pairs = PairCollector {
        doc_id: &doc.id,
        seen: HashSet::new(),
        out: Vec::new(),
    };

    if cfg.enable_section_date_pairs {
        let dates: Vec<&Event> = doc.section_dates().collect();
        for e in ordered.iter().filter(|e| e.kind != EventKind::SectionDate) {
            for d in &dates {
                pairs.push(&e.id, &d.id);
            }
        }
    }

    if cfg.enable_consecutive_pairs {
        for w in ordered.windows(2) {
            if w[0].sentence_index == w[1].sentence_index {
                pairs.push(&w[0].id, &w[1].id);
            }
        }
    }

    if cfg.enable_cross_sentence_pairs && cfg.cross_sentence_max_distance > 0 {
        let keys: Vec<String> = ordered
            .iter()
            .map(|e| match_key(&e.text, cfg.cross_sentence_match))
            .collect();
        for (i, a) in ordered.iter().enumerate() {
            for (j, b) in ordered.iter().enumerate().skip(i + 1) {
                let gap = b.sentence_index.abs_diff(a.sentence_index);
                if gap == 0 || gap > cfg.cross_sentence_max_distance || keys[i] != keys[j] {
                    continue;
                }
                pairs.push(&a.id, &b.id);
            }
        }
    }

    pairs.out
}

/// Mention-order baseline: BEFORE when the source is mentioned first.
pub fn w_order(doc: &Document, pair: &EventPair) -> Result<Relation, UnknownEventError> {
    let lookup = |id: &str| {
        doc.event(id).ok_or_else(|| UnknownEventError {
            doc_id: doc.id.clone(),
            event_id: id.to_string(),
        })
    };
    let source = lookup(&pair.source_id)?;
    let target = lookup(&pair.target_id)?;
    Ok(match mention_order(source, target) {
        Ordering::Greater => Relation::After,
        _ => Relation::Before,
    })
}
