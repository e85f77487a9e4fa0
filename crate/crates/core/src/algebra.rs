//! The five-relation temporal algebra: labels, coarse mapping, converse,
//! composition table and the endpoint semantics the table is derived from.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlgebraError {
    #[error("unknown relation label {0:?}")]
    UnknownRelation(String),
    #[error("interval begins after it finishes")]
    InvertedInterval,
}

/// Fine-grained temporal relation between an ordered pair of events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Before,
    After,
    Includes,
    IsIncluded,
    Simultaneous,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::Before,
        Relation::After,
        Relation::Includes,
        Relation::IsIncluded,
        Relation::Simultaneous,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Relation> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Before => "before",
            Relation::After => "after",
            Relation::Includes => "includes",
            Relation::IsIncluded => "is included",
            Relation::Simultaneous => "simultaneous",
        }
    }

    /// Converse relation: the label of `(b, a)` given the label of `(a, b)`.
    ///
    /// BEFORE and AFTER swap, as do INCLUDES and IS_INCLUDED; SIMULTANEOUS is
    /// its own converse. This is what the endpoint definitions imply when the
    /// two events are exchanged.
    pub fn reverse(self) -> Relation {
        match self {
            Relation::Before => Relation::After,
            Relation::After => Relation::Before,
            Relation::Includes => Relation::IsIncluded,
            Relation::IsIncluded => Relation::Includes,
            Relation::Simultaneous => Relation::Simultaneous,
        }
    }

    pub fn to_coarse(self) -> CoarseRelation {
        match self {
            Relation::Before => CoarseRelation::Before,
            Relation::After => CoarseRelation::After,
            Relation::Includes | Relation::IsIncluded | Relation::Simultaneous => {
                CoarseRelation::Overlap
            }
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = AlgebraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| AlgebraError::UnknownRelation(s.to_string()))
    }
}

/// Three-way label used by the gold annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoarseRelation {
    Before,
    After,
    Overlap,
}

impl CoarseRelation {
    pub const ALL: [CoarseRelation; 3] = [
        CoarseRelation::Before,
        CoarseRelation::After,
        CoarseRelation::Overlap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CoarseRelation::Before => "before",
            CoarseRelation::After => "after",
            CoarseRelation::Overlap => "overlap",
        }
    }

    pub fn reverse(self) -> CoarseRelation {
        match self {
            CoarseRelation::Before => CoarseRelation::After,
            CoarseRelation::After => CoarseRelation::Before,
            CoarseRelation::Overlap => CoarseRelation::Overlap,
        }
    }
}

impl fmt::Display for CoarseRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoarseRelation {
    type Err = AlgebraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CoarseRelation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| AlgebraError::UnknownRelation(s.to_string()))
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Relation);
string_serde!(CoarseRelation);

/// A subset of the five relations, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct RelationSet(u8);

impl RelationSet {
    pub const EMPTY: RelationSet = RelationSet(0);
    pub const FULL: RelationSet = RelationSet(0b1_1111);

    pub fn single(r: Relation) -> Self {
        RelationSet(1 << r.index())
    }

    pub fn from_bits(bits: u8) -> Self {
        RelationSet(bits & Self::FULL.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, r: Relation) -> bool {
        self.0 & (1 << r.index()) != 0
    }

    pub fn insert(&mut self, r: Relation) {
        self.0 |= 1 << r.index();
    }

    pub fn remove(&mut self, r: Relation) {
        self.0 &= !(1 << r.index());
    }

    pub fn with(mut self, r: Relation) -> Self {
        self.insert(r);
        self
    }

    pub fn union(self, other: Self) -> Self {
        RelationSet(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        RelationSet(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// The sole member, if there is exactly one.
    pub fn only(self) -> Option<Relation> {
        if self.len() == 1 {
            Relation::from_index(self.0.trailing_zeros() as usize)
        } else {
            None
        }
    }

    /// Members in relation order.
    pub fn iter(self) -> impl Iterator<Item = Relation> {
        Relation::ALL.into_iter().filter(move |r| self.contains(*r))
    }

    /// Element-wise converse.
    pub fn reverse(self) -> Self {
        let b = self.0;
        RelationSet(((b & 0b0101) << 1) | ((b & 0b1010) >> 1) | (b & 0b1_0000))
    }
}

impl FromIterator<Relation> for RelationSet {
    fn from_iter<I: IntoIterator<Item = Relation>>(iter: I) -> Self {
        let mut set = RelationSet::EMPTY;
        for r in iter {
            set.insert(r);
        }
        set
    }
}

impl fmt::Debug for RelationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for RelationSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for RelationSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let list = Vec::<Relation>::deserialize(d)?;
        Ok(list.into_iter().collect())
    }
}

/// Composition table: `get(r1, r2)` is the set of relations possible between
/// `a` and `c` when `a r1 b` and `b r2 c`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct TransitivityTable([[RelationSet; 5]; 5]);

impl TransitivityTable {
    pub fn get(&self, r1: Relation, r2: Relation) -> RelationSet {
        self.0[r1.index()][r2.index()]
    }

    pub fn entries(&self) -> impl Iterator<Item = (Relation, Relation, RelationSet)> + '_ {
        Relation::ALL.into_iter().flat_map(move |r1| {
            Relation::ALL
                .into_iter()
                .map(move |r2| (r1, r2, self.get(r1, r2)))
        })
    }
}

impl fmt::Debug for TransitivityTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut map = f.debug_map();
        for (r1, r2, set) in self.entries() {
            map.entry(&(r1, r2), &set);
        }
        map.finish()
    }
}

const TRANSITIVITY: TransitivityTable = {
    const B: u8 = 1 << 0;
    const A: u8 = 1 << 1;
    const I: u8 = 1 << 2;
    const II: u8 = 1 << 3;
    const S: u8 = 1 << 4;
    const ANY: u8 = B | A | I | II | S;
    const fn s(bits: u8) -> RelationSet {
        RelationSet(bits)
    }
    TransitivityTable([
        // before ∘ {before, after, includes, is included, simultaneous}
        [s(B), s(ANY), s(B | I), s(B | II), s(B)],
        // after ∘ ...
        [s(ANY), s(A), s(A | I), s(A | II), s(A)],
        // includes ∘ ...
        [s(B | I), s(A | I), s(I), s(ANY), s(I)],
        // is included ∘ ...
        [s(B | II), s(A | II), s(ANY), s(II), s(II)],
        // simultaneous ∘ ...
        [s(B), s(A), s(I), s(II), s(S)],
    ])
};

/// The tabulated composition of two relations. Never empty.
pub fn transitive_set(r1: Relation, r2: Relation) -> RelationSet {
    TRANSITIVITY.get(r1, r2)
}

pub fn transitivity_table() -> &'static TransitivityTable {
    &TRANSITIVITY
}

/// An event's extent in time: `begin <= finish`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "(T, T)", try_from = "(T, T)")]
#[serde(bound(
    serialize = "T: Clone + Serialize",
    deserialize = "T: PartialOrd + Deserialize<'de>"
))]
pub struct Interval<T> {
    begin: T,
    finish: T,
}

impl<T: PartialOrd> Interval<T> {
    pub fn new(begin: T, finish: T) -> Result<Self, AlgebraError> {
        if begin <= finish {
            Ok(Interval { begin, finish })
        } else {
            Err(AlgebraError::InvertedInterval)
        }
    }
}

impl<T> Interval<T> {
    pub fn begin(&self) -> &T {
        &self.begin
    }

    pub fn finish(&self) -> &T {
        &self.finish
    }
}

impl<T> From<Interval<T>> for (T, T) {
    fn from(iv: Interval<T>) -> Self {
        (iv.begin, iv.finish)
    }
}

impl<T: PartialOrd> TryFrom<(T, T)> for Interval<T> {
    type Error = AlgebraError;

    fn try_from((b, f): (T, T)) -> Result<Self, Self::Error> {
        Interval::new(b, f)
    }
}

/// Labels the ordered pair `(a, b)` from endpoint order.
///
/// Labels are checked by priority: equal endpoints give SIMULTANEOUS;
/// containment (with at least one strict endpoint) gives INCLUDES or
/// IS_INCLUDED; everything left has both endpoints strictly ordered the same
/// way and is BEFORE or AFTER.
pub fn relation_from_intervals<T: PartialOrd>(a: &Interval<T>, b: &Interval<T>) -> Relation {
    if a.begin == b.begin && a.finish == b.finish {
        Relation::Simultaneous
    } else if a.begin <= b.begin && a.finish >= b.finish {
        Relation::Includes
    } else if a.begin >= b.begin && a.finish <= b.finish {
        Relation::IsIncluded
    } else if a.begin < b.begin {
        // not containment, so a.finish < b.finish as well
        Relation::Before
    } else {
        Relation::After
    }
}

/// Number of distinct grid points used by [`derive_transitivity_table`].
pub const DERIVATION_GRID_POINTS: i64 = 6;

/// Rebuilds the composition table from interval semantics by enumerating
/// every triple of intervals with endpoints on a small integer grid.
pub fn derive_transitivity_table() -> TransitivityTable {
    let intervals: Vec<Interval<i64>> = (0..DERIVATION_GRID_POINTS)
        .flat_map(|b| {
            (b..DERIVATION_GRID_POINTS).map(move |f| Interval {
                begin: b,
                finish: f,
            })
        })
        .collect();

    // Group intervals by their relation to each middle interval first so the
    // cubic loop only visits matching (a, c) combinations.
    let mut table = [[RelationSet::EMPTY; 5]; 5];
    for b in &intervals {
        let mut left: [Vec<&Interval<i64>>; 5] = Default::default();
        let mut right: [Vec<&Interval<i64>>; 5] = Default::default();
        for x in &intervals {
            left[relation_from_intervals(x, b).index()].push(x);
            right[relation_from_intervals(b, x).index()].push(x);
        }
        for r1 in Relation::ALL {
            for r2 in Relation::ALL {
                let cell = &mut table[r1.index()][r2.index()];
                for a in &left[r1.index()] {
                    for c in &right[r2.index()] {
                        cell.insert(relation_from_intervals(a, c));
                    }
                }
            }
        }
    }
    TransitivityTable(table)
}
