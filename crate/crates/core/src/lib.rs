//! Temporal relation extraction by prompting: the five-relation algebra,
//! corpus handling, candidate pairing, prompt scripts, an LLM gateway with
//! replay cache, consistency scoring, exact consistency repair and
//! evaluation.

pub mod algebra;
pub mod consistency;
pub mod corpus;
pub mod evaluation;
pub mod gateway;
pub mod io;
pub mod pairing;
pub mod predictions;
pub mod prompting;
pub mod repair;
pub mod scalar;
pub mod synth;

use num_rational::Ratio;

pub use algebra::{CoarseRelation, Interval, Relation, RelationSet};
pub use corpus::{Document, EventPair, Timeline};
pub use predictions::{Prediction, PredictionSet, Provenance};
pub use scalar::Score;

/// Exact rational scalar.
pub type Rational = Ratio<i64>;

pub type Interval64 = Interval<f64>;
pub type Interval32 = Interval<f32>;
pub type RationalInterval = Interval<Rational>;

pub type RepairProblemF64 = repair::RepairProblem<f64>;
pub type RepairProblemF32 = repair::RepairProblem<f32>;
pub type ExactRepairProblem = repair::RepairProblem<Rational>;
pub type ExactConfidence = repair::ConfidenceScheme<Rational>;
