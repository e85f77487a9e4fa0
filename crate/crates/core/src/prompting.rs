//! Prompt construction for the two questioning strategies and parsing of
//! free-text answers.
//!
//! A [`PromptScript`] is the complete, replayable plan for one pair: the
//! turns to send, what each turn's answer means, and (for BatchQA) the
//! question permutation that was used. Scripts are pure data so they can be
//! written to disk by one pipeline stage and executed by another.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::algebra::{Relation, RelationSet};
use crate::corpus::{Document, EventPair, UnknownEventError};

pub const ANSWER_SUFFIX: &str = "Answer with Yes or No";
pub const BATCH_INSTRUCTION: &str =
    "Given document D, answer the following questions ONLY with Yes or No.";
pub const SAME_EVENT_PREFIX: &str = "In that event,";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
    Uncertain,
}

/// One answer per relation, plus the same-event probe for multi-turn scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerSet {
    #[serde(rename = "before")]
    pub before: Answer,
    #[serde(rename = "after")]
    pub after: Answer,
    #[serde(rename = "includes")]
    pub includes: Answer,
    #[serde(rename = "is included")]
    pub is_included: Answer,
    #[serde(rename = "simultaneous")]
    pub simultaneous: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub same_event: Option<Answer>,
}

impl AnswerSet {
    pub fn uniform(a: Answer) -> Self {
        AnswerSet {
            before: a,
            after: a,
            includes: a,
            is_included: a,
            simultaneous: a,
            same_event: None,
        }
    }

    pub fn get(&self, r: Relation) -> Answer {
        match r {
            Relation::Before => self.before,
            Relation::After => self.after,
            Relation::Includes => self.includes,
            Relation::IsIncluded => self.is_included,
            Relation::Simultaneous => self.simultaneous,
        }
    }

    pub fn set(&mut self, r: Relation, a: Answer) {
        let slot = match r {
            Relation::Before => &mut self.before,
            Relation::After => &mut self.after,
            Relation::Includes => &mut self.includes,
            Relation::IsIncluded => &mut self.is_included,
            Relation::Simultaneous => &mut self.simultaneous,
        };
        *slot = a;
    }
}

/// Relations answered YES.
pub fn answers_to_relations(answers: &AnswerSet) -> RelationSet {
    Relation::ALL
        .into_iter()
        .filter(|r| answers.get(*r) == Answer::Yes)
        .collect()
}

/// The yes/no question for one relation between `e_j` (source) and `e_k`
/// (target), including the answer-format suffix.
pub fn relation_question(r: Relation, e_j: &str, e_k: &str) -> String {
    let q = match r {
        Relation::Before => {
            format!("Did {e_j} start before {e_k} started and end before {e_k} ended?")
        }
        Relation::After => {
            format!("Did {e_j} start after {e_k} started and end after {e_k} ended?")
        }
        Relation::Includes => format!("Did {e_k} start and end while {e_j} was happening?"),
        Relation::IsIncluded => format!("Did {e_j} start and end while {e_k} was happening?"),
        Relation::Simultaneous => format!("Did {e_j} and {e_k} start and end at the same time?"),
    };
    format!("{q} {ANSWER_SUFFIX}")
}

pub fn same_event_question(e_j: &str, e_k: &str) -> String {
    format!(
        "Given the document D, are {e_j} and {e_k} referring to the same event? Answer ONLY with Yes or No."
    )
}

fn document_block(doc: &Document) -> String {
    format!("Document D:\n{}\n\n", doc.text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[serde(rename = "batchqa")]
    BatchQa,
    Cot,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::BatchQa => "batchqa",
            Strategy::Cot => "cot",
        }
    }
}

/// What the response to a turn answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    /// All five questions at once, numbered in script order.
    Batch,
    SameEvent,
    Relation(Relation),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub prompt: String,
    pub slot: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRef {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptScript {
    pub doc_id: String,
    pub pair: PairRef,
    pub strategy: Strategy,
    /// Relation asked at each question position.
    pub order: Vec<Relation>,
    pub turns: Vec<Turn>,
}

impl PromptScript {
    pub fn event_pair(&self) -> EventPair {
        EventPair::new(&self.doc_id, &self.pair.source, &self.pair.target)
    }

    /// Text actually sent for turn `index`, given the parsed same-event
    /// answer from turn 0 (multi-turn scripts only).
    pub fn render_turn(&self, index: usize, same_event: Option<Answer>) -> String {
        let turn = &self.turns[index];
        match (self.strategy, turn.slot, same_event) {
            (Strategy::Cot, Slot::Relation(_), Some(Answer::Yes)) => {
                format!("{SAME_EVENT_PREFIX} {}", turn.prompt)
            }
            _ => turn.prompt.clone(),
        }
    }
}

fn surfaces<'a>(
    doc: &'a Document,
    pair: &EventPair,
) -> Result<(&'a str, &'a str), UnknownEventError> {
    let lookup = |id: &str| {
        doc.event(id)
            .map(|e| e.text.as_str())
            .ok_or_else(|| UnknownEventError {
                doc_id: doc.id.clone(),
                event_id: id.to_string(),
            })
    };
    Ok((lookup(&pair.source_id)?, lookup(&pair.target_id)?))
}

/// Permutation of the five relations determined by `seed`.
pub fn question_order(seed: u64) -> Vec<Relation> {
    let mut order = Relation::ALL.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Single-turn script asking all five questions in a seeded order.
pub fn build_batchqa(
    doc: &Document,
    pair: &EventPair,
    order_seed: u64,
) -> Result<PromptScript, UnknownEventError> {
    let (e_j, e_k) = surfaces(doc, pair)?;
    let order = question_order(order_seed);
    let mut prompt = document_block(doc);
    prompt.push_str(BATCH_INSTRUCTION);
    for (i, r) in order.iter().enumerate() {
        prompt.push_str(&format!("\n{}. {}", i + 1, relation_question(*r, e_j, e_k)));
    }
    Ok(PromptScript {
        doc_id: doc.id.clone(),
        pair: PairRef {
            source: pair.source_id.clone(),
            target: pair.target_id.clone(),
        },
        strategy: Strategy::BatchQa,
        order,
        turns: vec![Turn {
            prompt,
            slot: Slot::Batch,
        }],
    })
}

/// Six-turn script: the same-event probe, then one question per turn.
pub fn build_cot(doc: &Document, pair: &EventPair) -> Result<PromptScript, UnknownEventError> {
    let (e_j, e_k) = surfaces(doc, pair)?;
    let mut turns = vec![Turn {
        prompt: format!("{}{}", document_block(doc), same_event_question(e_j, e_k)),
        slot: Slot::SameEvent,
    }];
    turns.extend(Relation::ALL.into_iter().map(|r| Turn {
        prompt: relation_question(r, e_j, e_k),
        slot: Slot::Relation(r),
    }));
    Ok(PromptScript {
        doc_id: doc.id.clone(),
        pair: PairRef {
            source: pair.source_id.clone(),
            target: pair.target_id.clone(),
        },
        strategy: Strategy::Cot,
        order: Relation::ALL.to_vec(),
        turns,
    })
}

fn hedge_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:yes\s+or\s+no|no\s+or\s+yes)\b").unwrap())
}

fn yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap())
}

fn numbering_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[\s(\[])(\d{1,2})\s*[.):]").unwrap())
}

/// First standalone "yes" or "no", case-insensitive. "yes or no" is a hedge
/// and does not count as either.
pub fn parse_yes_no(text: &str) -> Answer {
    let cleaned = hedge_re().replace_all(text, " ");
    match yes_no_re().captures(&cleaned) {
        Some(c) if c[1].eq_ignore_ascii_case("yes") => Answer::Yes,
        Some(_) => Answer::No,
        None => Answer::Uncertain,
    }
}

fn answer_units(text: &str) -> Vec<&str> {
    // Explicit numbering "1." .. "n." in ascending sequence wins over lines.
    let mut markers = Vec::new();
    let mut expected = 1usize;
    for c in numbering_re().captures_iter(text) {
        let whole = c.get(0).unwrap();
        let n: usize = c[1].parse().unwrap_or(0);
        if n == expected {
            markers.push((whole.start(), whole.end()));
            expected += 1;
        }
    }
    if !markers.is_empty() {
        return markers
            .iter()
            .enumerate()
            .map(|(i, &(_, end))| {
                let stop = markers.get(i + 1).map_or(text.len(), |m| m.0);
                &text[end..stop]
            })
            .collect();
    }
    text.lines().filter(|l| !l.trim().is_empty()).collect()
}

/// Splits a single-turn response into per-question answers and maps them
/// back to relations through `question_order`. Missing units are UNCERTAIN.
pub fn parse_batchqa_response(text: &str, question_order: &[Relation]) -> AnswerSet {
    let mut answers = AnswerSet::uniform(Answer::Uncertain);
    for (unit, r) in answer_units(text).into_iter().zip(question_order) {
        answers.set(*r, parse_yes_no(unit));
    }
    answers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Event, EventKind};
    use Relation::*;

    fn doc() -> Document {
        let text = "She had fever and a rash.".to_string();
        Document {
            id: "d".into(),
            events: vec![
                Event {
                    id: "e1".into(),
                    text: "fever".into(),
                    char_start: 8,
                    char_end: 13,
                    sentence_index: 0,
                    kind: EventKind::Medical,
                },
                Event {
                    id: "e2".into(),
                    text: "rash".into(),
                    char_start: 20,
                    char_end: 24,
                    sentence_index: 0,
                    kind: EventKind::Medical,
                },
            ],
            text,
            admission_event_id: None,
            discharge_event_id: None,
            gold_links: vec![],
        }
    }

    #[test]
    fn question_templates() {
        assert_eq!(
            relation_question(Before, "admitted", "colonoscopy"),
            "Did admitted start before colonoscopy started and end before colonoscopy ended? Answer with Yes or No"
        );
        assert_eq!(
            relation_question(Includes, "fever", "rash"),
            "Did rash start and end while fever was happening? Answer with Yes or No"
        );
        assert_eq!(
            relation_question(Simultaneous, "a", "b"),
            "Did a and b start and end at the same time? Answer with Yes or No"
        );
    }

    #[test]
    fn batchqa_is_one_seeded_turn() {
        let d = doc();
        let p = EventPair::new("d", "e1", "e2");
        let s1 = build_batchqa(&d, &p, 1).unwrap();
        assert_eq!(s1, build_batchqa(&d, &p, 1).unwrap());
        assert_eq!(s1.turns.len(), 1);
        let s2 = build_batchqa(&d, &p, 2).unwrap();
        let mut a = s1.order.clone();
        let mut b = s2.order.clone();
        a.sort();
        b.sort();
        assert_eq!(a, Relation::ALL.to_vec());
        assert_eq!(a, b);
        assert!(s1.turns[0].prompt.contains(BATCH_INSTRUCTION));
        for (i, r) in s1.order.iter().enumerate() {
            let line = format!("{}. {}", i + 1, relation_question(*r, "fever", "rash"));
            assert!(s1.turns[0].prompt.contains(&line));
        }
    }

    #[test]
    fn cot_branching() {
        let s = build_cot(&doc(), &EventPair::new("d", "e1", "e2")).unwrap();
        assert_eq!(s.turns.len(), 6);
        assert!(s.turns[0].prompt.ends_with(
            "Given the document D, are fever and rash referring to the same event? Answer ONLY with Yes or No."
        ));
        for i in 1..6 {
            assert!(s.render_turn(i, Some(Answer::No)).starts_with("Did "));
            assert!(s
                .render_turn(i, Some(Answer::Yes))
                .starts_with("In that event,"));
        }
        assert!(build_cot(&doc(), &EventPair::new("d", "e1", "zz")).is_err());
    }

    #[test]
    fn yes_no_tokens() {
        assert_eq!(parse_yes_no("Yes, the fever started first."), Answer::Yes);
        assert_eq!(parse_yes_no("No."), Answer::No);
        assert_eq!(
            parse_yes_no("It is unclear from the note."),
            Answer::Uncertain
        );
        assert_eq!(
            parse_yes_no("I cannot answer yes or no."),
            Answer::Uncertain
        );
        assert_eq!(parse_yes_no("Yes or no? No."), Answer::No);
        assert_eq!(parse_yes_no("Nothing noted; yesterday"), Answer::Uncertain);
        assert_eq!(parse_yes_no("NO"), Answer::No);
    }

    #[test]
    fn batch_response_parsing() {
        let order = [Before, After, Includes, IsIncluded, Simultaneous];
        let a = parse_batchqa_response("1. Yes 2. No 3. No 4. No 5. No", &order);
        assert_eq!(a.before, Answer::Yes);
        for r in [After, Includes, IsIncluded, Simultaneous] {
            assert_eq!(a.get(r), Answer::No);
        }
        assert_eq!(
            parse_batchqa_response("", &order),
            AnswerSet::uniform(Answer::Uncertain)
        );
        let a = parse_batchqa_response("Yes\nNo\nYes\n", &order);
        assert_eq!(
            [a.before, a.after, a.includes, a.is_included, a.simultaneous],
            [
                Answer::Yes,
                Answer::No,
                Answer::Yes,
                Answer::Uncertain,
                Answer::Uncertain
            ]
        );
        // permuted order maps positions back to relations
        let order2 = [Simultaneous, Before, After, Includes, IsIncluded];
        let a = parse_batchqa_response("1) No\n2) Yes\n3) No\n4) No\n5) No", &order2);
        assert_eq!(answers_to_relations(&a), RelationSet::single(Before));
    }

    #[test]
    fn relations_from_answers() {
        let mut a = AnswerSet::uniform(Answer::No);
        assert!(answers_to_relations(&a).is_empty());
        a.before = Answer::Yes;
        assert_eq!(answers_to_relations(&a), RelationSet::single(Before));
        a.includes = Answer::Yes;
        a.after = Answer::Uncertain;
        assert_eq!(
            answers_to_relations(&a),
            RelationSet::single(Before).with(Includes)
        );
    }

    #[test]
    fn script_json_shape() {
        let s = build_batchqa(&doc(), &EventPair::new("d", "e1", "e2"), 3).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let positions: Vec<usize> = [
            "\"doc_id\"",
            "\"pair\"",
            "\"strategy\"",
            "\"order\"",
            "\"turns\"",
        ]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 5);
        assert_eq!(v["strategy"], "batchqa");
        let back: PromptScript = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        let a = serde_json::to_string(&AnswerSet::uniform(Answer::Uncertain)).unwrap();
        assert!(a.contains("\"is included\":\"uncertain\""));
    }

    proptest::proptest! {
        #[test]
        fn parsing_is_total(s in ".*") {
            let _ = parse_yes_no(&s);
            let _ = parse_batchqa_response(&s, &Relation::ALL);
        }
    }
}
