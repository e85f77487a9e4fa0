//! Synthetic discharge-summary-like documents with a hidden timeline, used
//! as an oracle where the real corpus is unavailable.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{Interval, Relation, RelationSet};
use crate::corpus::{Document, Event, EventKind, GoldLink, Timeline, UnknownEventError};
use crate::pairing::{generate_candidate_pairs, PairingRuleConfig};
use crate::predictions::{Prediction, PredictionSet, Provenance};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("a document needs at least 2 events, got {0}")]
    TooFewEvents(usize),
    #[error("noise rates must be non-negative and sum to at most 1")]
    BadNoise,
}

const MEDICAL: &[&str] = &[
    "fever",
    "rash",
    "chest pain",
    "pneumonia",
    "CT scan",
    "antibiotics",
    "hypotension",
    "echocardiogram",
    "intubation",
    "heparin",
    "dyspnea",
    "transfusion",
    "nausea",
    "MRI",
    "surgery",
    "cough",
    "sepsis",
    "tachycardia",
    "biopsy",
    "insulin",
    "edema",
    "anemia",
    "dialysis",
    "chest x-ray",
    "vomiting",
    "lasix",
    "headache",
    "hypertension",
    "catheter",
    "pain control",
];

const TEMPLATES: [&[&str]; 3] = [
    &[
        "The patient reported {}.",
        "She was treated for {}.",
        "{} was noted on examination.",
        "He developed {} overnight.",
    ],
    &[
        "{} was started for {}.",
        "He underwent {} after {}.",
        "There was {} and {}.",
        "She received {} because of {}.",
    ],
    &[
        "Following {}, {} and {} were observed.",
        "{} was given for {} with {}.",
        "He had {}, {} and {}.",
    ],
];

/// Grid units per day.
const DAY: i64 = 4;

struct Builder {
    text: String,
    len: usize,
    sentence: usize,
    events: Vec<Event>,
}

impl Builder {
    fn push_str(&mut self, s: &str) {
        self.text.push_str(s);
        self.len += s.chars().count();
    }

    fn push_event(&mut self, id: String, surface: &str, kind: EventKind) {
        let start = self.len;
        self.push_str(surface);
        self.events.push(Event {
            id,
            text: surface.to_string(),
            char_start: start,
            char_end: self.len,
            sentence_index: self.sentence,
            kind,
        });
    }

    /// Writes a template, calling `fill` for each `{}` slot.
    fn sentence(&mut self, template: &str, mut fill: impl FnMut(&mut Self)) {
        let mut parts = template.split("{}");
        if let Some(head) = parts.next() {
            self.push_str(head);
        }
        for part in parts {
            fill(self);
            self.push_str(part);
        }
        self.sentence += 1;
    }
}

fn date_string(month: u32, day: u32) -> String {
    format!("2012-{month:02}-{day:02}")
}

/// A deterministic document with `n_events` medical and time-expression
/// mentions plus admission and discharge dates, and the timeline behind it.
///
/// Gold links are the coarse endpoint relations of every default candidate
/// pair. Some medical mentions repeat an earlier one and share its interval.
pub fn synthesize_document(
    seed: u64,
    n_events: usize,
) -> Result<(Document, Timeline<i64>), SynthError> {
    if n_events < 2 {
        return Err(SynthError::TooFewEvents(n_events));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let month = rng.gen_range(1..=12);
    let first_day = rng.gen_range(1..=15);
    let stay = rng.gen_range(2..=12u32);
    let end = i64::from(stay) * DAY + DAY - 1;

    let mut b = Builder {
        text: String::new(),
        len: 0,
        sentence: 0,
        events: Vec::new(),
    };
    let mut intervals: IndexMap<String, Interval<i64>> = IndexMap::new();
    let day_interval = |d: i64| Interval::new(d * DAY, d * DAY + DAY - 1).expect("ordered");

    b.push_str("Admission Date: ");
    b.push_event(
        "adm".into(),
        &date_string(month, first_day),
        EventKind::SectionDate,
    );
    b.push_str("\n");
    b.sentence += 1;
    b.push_str("Discharge Date: ");
    b.push_event(
        "dis".into(),
        &date_string(month, first_day + stay),
        EventKind::SectionDate,
    );
    b.push_str("\n");
    b.sentence += 1;
    intervals.insert("adm".into(), day_interval(0));
    intervals.insert("dis".into(), day_interval(i64::from(stay)));

    let mut next_id = 1;
    let mut medical: Vec<(String, Interval<i64>)> = Vec::new();
    let mut remaining = n_events;
    while remaining > 0 {
        let k = rng.gen_range(1..=remaining.min(3));
        let template = *TEMPLATES[k - 1].choose(&mut rng).expect("templates");
        if b.sentence > 2 {
            b.push_str(" ");
        }
        b.sentence(template, |b| {
            let id = format!("e{next_id}");
            next_id += 1;
            let roll: f64 = rng.gen();
            if roll < 0.15 {
                let d = rng.gen_range(0..=i64::from(stay));
                let day = first_day + u32::try_from(d).expect("small");
                b.push_event(id.clone(), &date_string(month, day), EventKind::Timex);
                intervals.insert(id, day_interval(d));
            } else if roll < 0.3 && !medical.is_empty() {
                let (text, iv) = medical.choose(&mut rng).expect("non-empty").clone();
                b.push_event(id.clone(), &text, EventKind::Medical);
                intervals.insert(id, iv);
            } else {
                let text = *MEDICAL.choose(&mut rng).expect("vocabulary");
                let begin = rng.gen_range(0..=end);
                let finish = (begin + rng.gen_range(0..=2 * DAY)).min(end);
                let iv = Interval::new(begin, finish).expect("ordered");
                b.push_event(id.clone(), text, EventKind::Medical);
                intervals.insert(id, iv);
                medical.push((text.to_string(), iv));
            }
        });
        remaining -= k;
    }

    let doc_id = format!("synth-{seed}");
    let mut doc = Document {
        id: doc_id.clone(),
        text: b.text,
        events: b.events,
        admission_event_id: Some("adm".into()),
        discharge_event_id: Some("dis".into()),
        gold_links: Vec::new(),
    };
    let timeline = Timeline { doc_id, intervals };
    doc.gold_links = gold_links_for(&doc, &timeline).expect("every event has an interval");
    Ok((doc, timeline))
}

fn gold_links_for(
    doc: &Document,
    timeline: &Timeline<i64>,
) -> Result<Vec<GoldLink>, UnknownEventError> {
    generate_candidate_pairs(doc, &PairingRuleConfig::default())
        .into_iter()
        .map(|p| {
            Ok(GoldLink {
                relation: timeline.gold_relation_of(&p)?.to_coarse(),
                source: p.source_id,
                target: p.target_id,
            })
        })
        .collect()
}

/// `n_docs` documents with ids `doc-0000`, `doc-0001`, ...; per-document
/// seeds are drawn from `seed`.
pub fn synthesize_corpus(
    seed: u64,
    n_docs: usize,
    n_events: usize,
) -> Result<Vec<(Document, Timeline<i64>)>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let (mut doc, mut timeline) = synthesize_document(rng.gen(), n_events)?;
            doc.id = format!("doc-{i:04}");
            timeline.doc_id = doc.id.clone();
            Ok((doc, timeline))
        })
        .collect()
}

/// Singleton gold relations for every pair, read off the timelines.
pub fn oracle_predictions<'a>(
    pairs: impl IntoIterator<Item = &'a crate::corpus::EventPair>,
    timelines: &[Timeline<i64>],
) -> Result<PredictionSet, UnknownEventError> {
    let by_doc: std::collections::HashMap<&str, &Timeline<i64>> =
        timelines.iter().map(|t| (t.doc_id.as_str(), t)).collect();
    pairs
        .into_iter()
        .map(|pair| {
            let t = by_doc
                .get(pair.doc_id.as_str())
                .ok_or_else(|| UnknownEventError {
                    doc_id: pair.doc_id.clone(),
                    event_id: pair.source_id.clone(),
                })?;
            let r = t.gold_relation_of(pair)?;
            Ok((
                pair.clone(),
                Prediction::new(RelationSet::single(r), Provenance::Oracle),
            ))
        })
        .collect()
}

/// Rates of the three corruption kinds, applied per pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Replace with one different relation.
    pub flip: f64,
    /// Remove every relation.
    pub empty: f64,
    /// Add a second relation.
    pub double: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            flip: 0.3,
            empty: 0.1,
            double: 0.1,
        }
    }
}

fn other_than(rng: &mut ChaCha8Rng, set: RelationSet) -> Relation {
    let options: Vec<Relation> = Relation::ALL
        .into_iter()
        .filter(|r| !set.contains(*r))
        .collect();
    *options
        .choose(rng)
        .expect("a set never holds all five after one pick")
}

/// Seeded corruption of a prediction set. The three kinds are mutually
/// exclusive per pair; provenance is kept.
pub fn corrupt_predictions(
    preds: &PredictionSet,
    seed: u64,
    noise: NoiseConfig,
) -> Result<PredictionSet, SynthError> {
    let rates = [noise.flip, noise.empty, noise.double];
    if rates.iter().any(|r| r.is_nan() || *r < 0.0) || rates.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(SynthError::BadNoise);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = preds.clone();
    for (_, p) in out.iter_mut() {
        let u: f64 = rng.gen();
        let current = p.relations;
        if u < noise.flip {
            let r = if current.len() == 5 {
                Relation::Simultaneous
            } else {
                other_than(&mut rng, current)
            };
            p.relations = RelationSet::single(r);
        } else if u < noise.flip + noise.empty {
            p.relations = RelationSet::EMPTY;
        } else if u < noise.flip + noise.empty + noise.double && current.len() < 5 {
            p.relations = current.with(other_than(&mut rng, current));
        }
    }
    Ok(out)
}
