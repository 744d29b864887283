//! Pooling mention-level scores into value-level scores.

mod weights;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Slot;
use crate::scalar::Scalar;

pub use weights::{date_weights, information_content, topic_weights, MentionWeights, SkewNormal};

/// Key for the null value in serialized output.
pub const NULL_KEY: &str = "__null__";

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("negative aggregation weight {weight} at mention {index}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("{mentions} mentions but {weights} weights")]
    LengthMismatch { mentions: usize, weights: usize },
    #[error("invalid aggregation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Max,
    Sum,
    WeightedSum,
    /// Softmax per document, then sum over the concatenation.
    PerDocumentSoftmaxSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Unit,
    Topic,
    Date,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub mode: AggregationMode,
    pub weight_source: WeightSource,
    pub null_enabled: bool,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            mode: AggregationMode::Sum,
            weight_source: WeightSource::Unit,
            null_enabled: true,
        }
    }
}

impl AggregationConfig {
    pub fn sum() -> Self {
        Self::default()
    }

    pub fn max() -> Self {
        Self {
            mode: AggregationMode::Max,
            ..Self::default()
        }
    }

    pub fn topic() -> Self {
        Self {
            mode: AggregationMode::WeightedSum,
            weight_source: WeightSource::Topic,
            null_enabled: true,
        }
    }

    pub fn date() -> Self {
        Self {
            mode: AggregationMode::WeightedSum,
            weight_source: WeightSource::Date,
            null_enabled: true,
        }
    }

    pub fn per_document() -> Self {
        Self {
            mode: AggregationMode::PerDocumentSoftmaxSum,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AggregationError> {
        if self.mode == AggregationMode::WeightedSum && self.weight_source == WeightSource::Unit {
            return Err(AggregationError::Config("weighted_sum needs a topic or date weight source".into()));
        }
        Ok(())
    }

    /// Weight source actually applied; per-document aggregation ignores it.
    pub fn effective_weights(&self) -> WeightSource {
        match self.mode {
            AggregationMode::PerDocumentSoftmaxSum => WeightSource::Unit,
            _ => self.weight_source,
        }
    }
}

impl fmt::Display for AggregationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match (self.mode, self.weight_source) {
            (AggregationMode::Max, _) => "max",
            (AggregationMode::PerDocumentSoftmaxSum, _) => "per-doc",
            (_, WeightSource::Topic) => "topic",
            (_, WeightSource::Date) => "date",
            _ => "sum",
        })
    }
}

/// Command-line names: `max`, `sum`, `topic`, `date`, `per-doc`.
impl FromStr for AggregationConfig {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Self::max()),
            "sum" => Ok(Self::sum()),
            "topic" => Ok(Self::topic()),
            "date" => Ok(Self::date()),
            "per-doc" | "per_doc" | "per-document" => Ok(Self::per_document()),
            other => Err(AggregationError::Config(format!("unknown aggregation {:?}", other))),
        }
    }
}

/// A decoding candidate: a normalized value or the null value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Candidate {
    Value(String),
    Null,
}

impl Candidate {
    pub fn value_id(&self) -> Option<&str> {
        match self {
            Candidate::Value(v) => Some(v),
            Candidate::Null => None,
        }
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Candidate::Value(v) => f.write_str(v),
            Candidate::Null => f.write_str("<null>"),
        }
    }
}

/// Value-level scores for every (value, slot) pair of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueScoreTable<T> {
    pub slots: Vec<Slot>,
    /// Sorted ascending.
    pub values: Vec<String>,
    /// `scores[value][slot]`.
    pub scores: Vec<Vec<T>>,
    /// Null score per slot, present iff null prediction is enabled.
    pub null: Option<Vec<T>>,
}

/// Higher score first; ties go to the lexicographically smaller value id,
/// and a value beats the null candidate on an exact tie.
fn rank_order<T: Scalar>(a: &(Candidate, T), b: &(Candidate, T)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| match (&a.0, &b.0) {
        (Candidate::Value(x), Candidate::Value(y)) => x.cmp(y),
        (Candidate::Value(_), Candidate::Null) => Ordering::Less,
        (Candidate::Null, Candidate::Value(_)) => Ordering::Greater,
        (Candidate::Null, Candidate::Null) => Ordering::Equal,
    })
}

impl<T: Scalar> ValueScoreTable<T> {
    pub fn slot_index(&self, slot: Slot) -> Option<usize> {
        self.slots.iter().position(|&s| s == slot)
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.binary_search_by(|v| v.as_str().cmp(value)).ok()
    }

    /// Checks sorted unique values and rectangular scores, as needed after
    /// reading a table from a file.
    pub fn check(&self) -> Result<(), AggregationError> {
        let bad = |m: String| Err(AggregationError::Config(m));
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("values must be sorted and unique".into());
        }
        if self.scores.len() != self.values.len() {
            return bad(format!("{} score rows for {} values", self.scores.len(), self.values.len()));
        }
        let n = self.slots.len();
        if let Some(i) = self.scores.iter().position(|r| r.len() != n) {
            return bad(format!("score row {} has {} entries, expected {}", i, self.scores[i].len(), n));
        }
        if self.null.as_ref().is_some_and(|r| r.len() != n) {
            return bad(format!("null row must have {} entries", n));
        }
        if self.scores.iter().flatten().chain(self.null.iter().flatten()).any(|x| !x.is_finite()) {
            return bad("scores must be finite".into());
        }
        Ok(())
    }

    pub fn get(&self, value: &str, slot: Slot) -> Option<T> {
        Some(self.scores[self.value_index(value)?][self.slot_index(slot)?])
    }

    pub fn null_score(&self, slot: Slot) -> Option<T> {
        Some(self.null.as_ref()?[self.slot_index(slot)?])
    }

    /// All candidates for a slot, best first.
    pub fn ranking(&self, slot_idx: usize) -> Vec<(Candidate, T)> {
        let mut out: Vec<(Candidate, T)> = self
            .values
            .iter()
            .zip(&self.scores)
            .map(|(v, row)| (Candidate::Value(v.clone()), row[slot_idx]))
            .collect();
        if let Some(null) = &self.null {
            out.push((Candidate::Null, null[slot_idx]));
        }
        out.sort_by(rank_order);
        out
    }

    /// Highest-scoring candidate per slot; a slot with no candidates is null.
    pub fn decode_top1(&self) -> BTreeMap<Slot, Candidate> {
        self.slots
            .iter()
            .enumerate()
            .map(|(si, &slot)| {
                let best = self.ranking(si).into_iter().next().map_or(Candidate::Null, |(c, _)| c);
                (slot, best)
            })
            .collect()
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> ValueScoreTable<U> {
        ValueScoreTable {
            slots: self.slots.clone(),
            values: self.values.clone(),
            scores: self.scores.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect(),
            null: self.null.as_ref().map(|n| n.iter().map(|&x| f(x)).collect()),
        }
    }
}

/// Maximum mention score per value.
pub fn aggregate_max<T: Scalar>(mentions: &[(&str, T)]) -> BTreeMap<String, T> {
    let mut out: BTreeMap<String, T> = BTreeMap::new();
    for &(v, s) in mentions {
        out.entry(v.to_string()).and_modify(|m| *m = m.max(s)).or_insert(s);
    }
    out
}

/// Weighted sum of mention scores per value; unit weights give a plain sum.
pub fn aggregate_sum<T: Scalar>(mentions: &[(&str, T)], weights: &[T]) -> Result<BTreeMap<String, T>, AggregationError> {
    if mentions.len() != weights.len() {
        return Err(AggregationError::LengthMismatch {
            mentions: mentions.len(),
            weights: weights.len(),
        });
    }
    let mut out: BTreeMap<String, T> = BTreeMap::new();
    for (index, (&(v, s), &w)) in mentions.iter().zip(weights).enumerate() {
        if w < T::zero() {
            return Err(AggregationError::NegativeWeight {
                index,
                weight: w.to_f64_lossy(),
            });
        }
        let e = out.entry(v.to_string()).or_insert_with(T::zero);
        *e = *e + w * s;
    }
    Ok(out)
}

/// Attention mass on tokens outside every mention.
pub fn null_score<T: Scalar>(attention: &[T], is_mention_token: &[bool]) -> T {
    attention
        .iter()
        .zip(is_mention_token)
        .filter(|(_, &m)| !m)
        .map(|(&a, _)| a)
        .sum()
}

/// Sum over documents of separately normalized mention scores.
pub fn aggregate_per_document<T: Scalar>(documents: &[Vec<(&str, T)>]) -> BTreeMap<String, T> {
    let mut out: BTreeMap<String, T> = BTreeMap::new();
    for doc in documents {
        for &(v, s) in doc {
            let e = out.entry(v.to_string()).or_insert_with(T::zero);
            *e = *e + s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(values: &[&str], scores: Vec<Vec<f64>>, null: Option<Vec<f64>>) -> ValueScoreTable<f64> {
        ValueScoreTable {
            slots: vec![Slot::Fatalities, Slot::Crew],
            values: values.iter().map(|s| s.to_string()).collect(),
            scores,
            null,
        }
    }

    #[test]
    fn table_check_and_json_round_trip() {
        let t = table(&["a", "b"], vec![vec![0.1, 0.2], vec![0.3, 0.4]], Some(vec![0.6, 0.4]));
        t.check().unwrap();
        let back: ValueScoreTable<f64> = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(table(&["b", "a"], vec![vec![0.1, 0.2], vec![0.3, 0.4]], None).check().is_err());
        assert!(table(&["a"], vec![vec![0.1]], None).check().is_err());
        assert!(table(&["a"], vec![vec![0.1, f64::NAN]], None).check().is_err());
        assert!(table(&["a"], vec![vec![0.1, 0.2]], Some(vec![0.5])).check().is_err());
    }

    #[test]
    fn max_examples() {
        let m = aggregate_max(&[("v", 0.2), ("v", 0.3), ("v", 0.1)]);
        assert_eq!(m["v"], 0.3);
        assert_eq!(aggregate_max(&[("w", 0.7)])["w"], 0.7);
    }

    #[test]
    fn sum_examples() {
        let ms = [("v", 0.2f64), ("v", 0.3), ("v", 0.1)];
        let s = aggregate_sum(&ms, &[1.0; 3]).unwrap();
        assert!((s["v"] - 0.6).abs() < 1e-15);
        let s = aggregate_sum(&ms, &[1.0, 0.0, 1.0]).unwrap();
        assert!((s["v"] - 0.3).abs() < 1e-15);
        assert!(matches!(
            aggregate_sum(&ms, &[1.0, -0.5, 1.0]),
            Err(AggregationError::NegativeWeight { index: 1, .. })
        ));
    }

    #[test]
    fn null_examples() {
        let a = [0.1f64; 10];
        let mut mask = [false; 10];
        mask[..4].iter_mut().for_each(|m| *m = true);
        assert!((null_score(&a, &mask) - 0.6).abs() < 1e-12);
        assert_eq!(null_score(&a, &[true; 10]), 0.0);
    }

    #[test]
    fn null_grows_with_cluster_size() {
        let small = vec![0.05; 20];
        let mut small_mask = vec![false; 20];
        small_mask[0] = true;
        let large = vec![0.05 / 3.0; 60];
        let mut large_mask = vec![false; 60];
        large_mask[0] = true;
        let mut large = large;
        large[0] = 0.05;
        let z: f64 = large.iter().sum();
        let large: Vec<f64> = large.iter().map(|x| x / z).collect();
        // same mention mass relative to the other tokens, three times the text
        assert!(null_score(&large, &large_mask) > null_score(&small, &small_mask));
    }

    #[test]
    fn per_document_examples() {
        let one = vec![vec![("a", 0.3), ("b", 0.2), ("a", 0.1)]];
        let s = aggregate_sum(&one[0], &[1.0; 3]).unwrap();
        assert_eq!(aggregate_per_document(&one), s);

        let docs: Vec<Vec<(&str, f64)>> = (0..5).map(|_| vec![("v", 0.999f64), ("w", 0.001)]).collect();
        let agg = aggregate_per_document(&docs);
        assert!((agg["v"] - 4.995).abs() < 1e-12);

        let with_empty = vec![vec![("a", 0.5)], vec![]];
        assert_eq!(aggregate_per_document(&with_empty)["a"], 0.5);
    }

    #[test]
    fn decode_examples() {
        let t = table(&["v1", "v2"], vec![vec![0.6, 0.1], vec![0.2, 0.1]], Some(vec![0.2, 0.8]));
        let d = t.decode_top1();
        assert_eq!(d[&Slot::Fatalities], Candidate::Value("v1".into()));
        assert_eq!(d[&Slot::Crew], Candidate::Null);

        let tie = table(&["a", "b"], vec![vec![0.4, 0.0], vec![0.4, 0.0]], None);
        assert_eq!(tie.decode_top1()[&Slot::Fatalities], Candidate::Value("a".into()));
        assert_eq!(tie.decode_top1()[&Slot::Crew], Candidate::Value("a".into()));
    }

    #[test]
    fn config_rules() {
        let bad = AggregationConfig {
            mode: AggregationMode::WeightedSum,
            weight_source: WeightSource::Unit,
            null_enabled: true,
        };
        assert!(bad.validate().is_err());
        assert!(AggregationConfig::topic().validate().is_ok());
        let pd = AggregationConfig {
            weight_source: WeightSource::Topic,
            ..AggregationConfig::per_document()
        };
        assert_eq!(pd.effective_weights(), WeightSource::Unit);
        assert_eq!("per-doc".parse::<AggregationConfig>().unwrap(), AggregationConfig::per_document());
        assert!("median".parse::<AggregationConfig>().is_err());
    }

    proptest! {
        #[test]
        fn unit_weight_sum_matches_naive(scores in proptest::collection::vec((0usize..4, 0.0f64..1.0), 1..30)) {
            let names = ["a", "b", "c", "d"];
            let ms: Vec<(&str, f64)> = scores.iter().map(|&(v, s)| (names[v], s)).collect();
            let agg = aggregate_sum(&ms, &vec![1.0; ms.len()]).unwrap();
            for name in names {
                let mut naive = 0.0;
                for &(v, s) in &ms {
                    if v == name { naive += s; }
                }
                match agg.get(name) {
                    Some(x) => prop_assert!((x - naive).abs() < 1e-12),
                    None => prop_assert_eq!(naive, 0.0),
                }
            }
            let mx = aggregate_max(&ms);
            for (k, v) in &mx {
                prop_assert!(*v <= agg[k] + 1e-15);
            }
        }

        #[test]
        fn max_ignores_duplicates_sum_grows(base in proptest::collection::vec(0.01f64..1.0, 1..10), extra in 0.01f64..1.0) {
            let ms: Vec<(&str, f64)> = base.iter().map(|&s| ("v", s)).collect();
            let mut dup = ms.clone();
            dup.push(ms[0]);
            prop_assert_eq!(aggregate_max(&ms), aggregate_max(&dup));
            let mut more = ms.clone();
            more.push(("v", extra));
            let s0 = aggregate_sum(&ms, &vec![1.0; ms.len()]).unwrap()["v"];
            let s1 = aggregate_sum(&more, &vec![1.0; more.len()]).unwrap()["v"];
            prop_assert!(s1 > s0);
        }

        #[test]
        fn decode_invariant_under_monotone_map(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 2), 1..6), null in proptest::collection::vec(0.0f64..1.0, 2)) {
            let values: Vec<String> = (0..rows.len()).map(|i| format!("v{}", i)).collect();
            let t = ValueScoreTable { slots: vec![Slot::Crew, Slot::Operator], values, scores: rows, null: Some(null) };
            let mapped = t.map(|x| (3.0 * x).exp() + 1.0);
            prop_assert_eq!(t.decode_top1(), mapped.decode_top1());
        }

        #[test]
        fn zero_weights_remove_value(scores in proptest::collection::vec(0.0f64..1.0, 1..10)) {
            let ms: Vec<(&str, f64)> = scores.iter().map(|&s| ("gone", s)).collect();
            let agg = aggregate_sum(&ms, &vec![0.0; ms.len()]).unwrap();
            prop_assert_eq!(agg["gone"], 0.0);
        }
    }
}
