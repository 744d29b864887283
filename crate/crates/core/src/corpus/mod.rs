//! News clusters with pre-annotated value mentions.

mod format;
mod topicality;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{cluster_to_json, load_clusters, parse_clusters, write_clusters, RawCluster, RawDocument, RawMention};
pub use topicality::segment_topicality;

/// Documents kept per cluster, in publication order.
pub const MAX_DOCUMENTS: usize = 200;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: {source}")]
    Parse {
        record: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("cluster {cluster_id}: {detail}")]
    Validation { cluster_id: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    AircraftType,
    CrashSite,
    Crew,
    Fatalities,
    Injuries,
    Operator,
    Passengers,
    Survivors,
    Date,
    FlightNumber,
    Origin,
    Destination,
    Registration,
    Stopover,
    GroundFatalities,
}

impl Slot {
    pub const ALL: [Slot; 15] = [
        Slot::AircraftType,
        Slot::CrashSite,
        Slot::Crew,
        Slot::Fatalities,
        Slot::Injuries,
        Slot::Operator,
        Slot::Passengers,
        Slot::Survivors,
        Slot::Date,
        Slot::FlightNumber,
        Slot::Origin,
        Slot::Destination,
        Slot::Registration,
        Slot::Stopover,
        Slot::GroundFatalities,
    ];

    /// The eight slots scored during evaluation, in report order.
    pub const EVALUABLE: [Slot; 8] = [
        Slot::AircraftType,
        Slot::CrashSite,
        Slot::Crew,
        Slot::Fatalities,
        Slot::Injuries,
        Slot::Operator,
        Slot::Passengers,
        Slot::Survivors,
    ];

    pub fn is_evaluable(self) -> bool {
        Self::EVALUABLE.contains(&self)
    }

    /// Identifier used in files.
    pub fn key(self) -> &'static str {
        match self {
            Slot::AircraftType => "aircraft_type",
            Slot::CrashSite => "crash_site",
            Slot::Crew => "crew",
            Slot::Fatalities => "fatalities",
            Slot::Injuries => "injuries",
            Slot::Operator => "operator",
            Slot::Passengers => "passengers",
            Slot::Survivors => "survivors",
            Slot::Date => "date",
            Slot::FlightNumber => "flight_number",
            Slot::Origin => "origin",
            Slot::Destination => "destination",
            Slot::Registration => "registration",
            Slot::Stopover => "stopover",
            Slot::GroundFatalities => "ground_fatalities",
        }
    }

    pub fn from_key(key: &str) -> Option<Slot> {
        Self::ALL.iter().copied().find(|s| s.key() == key)
    }

    /// Human-readable name used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            Slot::AircraftType => "Aircraft Type",
            Slot::CrashSite => "Crash Site",
            Slot::Crew => "Crew",
            Slot::Fatalities => "Fatalities",
            Slot::Injuries => "Injuries",
            Slot::Operator => "Operator",
            Slot::Passengers => "Passengers",
            Slot::Survivors => "Survivors",
            Slot::Date => "Date",
            Slot::FlightNumber => "Flight Number",
            Slot::Origin => "Origin",
            Slot::Destination => "Destination",
            Slot::Registration => "Registration",
            Slot::Stopover => "Stopover",
            Slot::GroundFatalities => "Ground Fatalities",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Number,
    Date,
    Airline,
    Aircraft,
    Location,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub index_in_doc: usize,
    pub sentence_id: usize,
}

/// Occurrence of a normalized value; `[start, end)` are document token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub value_id: String,
    pub entity_type: EntityType,
    pub is_flight_number: bool,
    pub is_topical_flight: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<Token>,
    /// Sorted by `start`, non-overlapping.
    pub mentions: Vec<Mention>,
    pub dateline: Option<NaiveDate>,
    pub order_index: usize,
    pub sentence_count: usize,
    /// Per-sentence topicality flags, filled at load time.
    pub topical: Vec<bool>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence_of(&self, token: usize) -> usize {
        self.tokens[token].sentence_id
    }

    /// Token texts grouped by sentence.
    pub fn sentences(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.sentence_count];
        for t in &self.tokens {
            out[t.sentence_id].push(t.text.as_str());
        }
        out
    }

    /// Whether the token at `index` lies inside some mention span.
    pub fn mention_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for m in &self.mentions {
            for slot in &mut mask[m.start..m.end] {
                *slot = true;
            }
        }
        mask
    }

    fn same_text(&self, other: &Document) -> bool {
        self.tokens.len() == other.tokens.len() && self.tokens.iter().zip(&other.tokens).all(|(a, b)| a.text == b.text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub cluster_id: String,
    pub split: Split,
    pub documents: Vec<Document>,
    /// Gold values per slot; an empty set (or a missing slot) means null.
    pub gold: BTreeMap<Slot, BTreeSet<String>>,
    pub candidate_values: BTreeSet<String>,
}

impl Cluster {
    pub fn num_tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    pub fn gold_for(&self, slot: Slot) -> Option<&BTreeSet<String>> {
        self.gold.get(&slot).filter(|g| !g.is_empty())
    }

    /// Values with at least one mention anywhere in the cluster.
    pub fn mentioned_values(&self) -> BTreeSet<&str> {
        self.documents
            .iter()
            .flat_map(|d| d.mentions.iter().map(|m| m.value_id.as_str()))
            .collect()
    }

    /// A slot is findable when one of its gold values is mentioned.
    pub fn is_findable(&self, slot: Slot) -> bool {
        let mentioned = self.mentioned_values();
        self.gold_for(slot)
            .is_some_and(|g| g.iter().any(|v| mentioned.contains(v.as_str())))
    }

    /// Values carried by mentions flagged as the topical flight.
    pub fn topical_flight_values(&self) -> HashSet<String> {
        self.documents
            .iter()
            .flat_map(|d| d.mentions.iter())
            .filter(|m| m.is_flight_number && m.is_topical_flight)
            .map(|m| m.value_id.clone())
            .collect()
    }

    /// Recomputes per-sentence topicality for every document.
    pub fn refresh_topicality(&mut self) {
        let topical = self.topical_flight_values();
        for d in &mut self.documents {
            d.topical = segment_topicality(d, &topical);
        }
    }

    fn invalid(&self, detail: impl Into<String>) -> CorpusError {
        CorpusError::Validation {
            cluster_id: self.cluster_id.clone(),
            detail: detail.into(),
        }
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.documents.len() > MAX_DOCUMENTS {
            return Err(self.invalid(format!("{} documents exceed cap {}", self.documents.len(), MAX_DOCUMENTS)));
        }
        for d in &self.documents {
            let mut prev_sentence = 0;
            for (i, t) in d.tokens.iter().enumerate() {
                if t.index_in_doc != i {
                    return Err(self.invalid(format!("doc {}: token index {} at position {}", d.doc_id, t.index_in_doc, i)));
                }
                if t.sentence_id < prev_sentence || t.sentence_id >= d.sentence_count.max(1) {
                    return Err(self.invalid(format!("doc {}: sentence ids out of order at token {}", d.doc_id, i)));
                }
                prev_sentence = t.sentence_id;
            }
            let mut last_end = 0;
            for (k, m) in d.mentions.iter().enumerate() {
                if m.start >= m.end || m.end > d.len() {
                    return Err(self.invalid(format!(
                        "doc {}: mention span [{}, {}) outside document of length {}",
                        d.doc_id,
                        m.start,
                        m.end,
                        d.len()
                    )));
                }
                if k > 0 && m.start < last_end {
                    return Err(self.invalid(format!("doc {}: overlapping or unsorted mention at {}", d.doc_id, m.start)));
                }
                if d.sentence_of(m.start) != d.sentence_of(m.end - 1) {
                    return Err(self.invalid(format!("doc {}: mention at {} crosses a sentence boundary", d.doc_id, m.start)));
                }
                if m.value_id.is_empty() {
                    return Err(self.invalid(format!("doc {}: empty value_id", d.doc_id)));
                }
                if !self.candidate_values.contains(&m.value_id) {
                    return Err(self.invalid(format!("doc {}: value {} not a candidate", d.doc_id, m.value_id)));
                }
                last_end = m.end;
            }
        }
        Ok(())
    }
}

/// Removes documents whose token sequence repeats an earlier document.
pub fn dedup_documents(mut cluster: Cluster) -> Cluster {
    let mut kept: Vec<Document> = Vec::with_capacity(cluster.documents.len());
    for d in cluster.documents {
        if !kept.iter().any(|k| k.same_text(&d)) {
            kept.push(d);
        }
    }
    cluster.documents = kept;
    cluster
}

/// Moves every fifth document (order positions 4, 9, 14, ...) of each
/// training cluster into a sibling development cluster with the same labels.
pub fn split_dev(train: Vec<Cluster>) -> (Vec<Cluster>, Vec<Cluster>) {
    split_dev_with_extra(train, 0)
}

/// [`split_dev`], plus `extra` additional development clusters per training
/// cluster built by dealing the remaining training documents round-robin.
///
/// Extra clusters copy their documents; the training side is not reduced
/// further.
pub fn split_dev_with_extra(train: Vec<Cluster>, extra: usize) -> (Vec<Cluster>, Vec<Cluster>) {
    let mut train_out = Vec::with_capacity(train.len());
    let mut dev_out = Vec::new();
    for mut c in train {
        c.documents.sort_by_key(|d| d.order_index);
        let (dev_docs, keep): (Vec<_>, Vec<_>) = c.documents.drain(..).enumerate().partition(|(i, _)| i % 5 == 4);
        let keep: Vec<Document> = keep.into_iter().map(|(_, d)| d).collect();
        let dev_docs: Vec<Document> = dev_docs.into_iter().map(|(_, d)| d).collect();
        let sibling = |suffix: String, docs: Vec<Document>| Cluster {
            cluster_id: format!("{}/{}", c.cluster_id, suffix),
            split: Split::Dev,
            documents: docs,
            gold: c.gold.clone(),
            candidate_values: c.candidate_values.clone(),
        };
        if !dev_docs.is_empty() {
            dev_out.push(sibling("dev".to_string(), dev_docs));
        }
        if extra > 0 {
            let mut buckets: Vec<Vec<Document>> = vec![Vec::new(); extra];
            for (i, d) in keep.iter().enumerate() {
                buckets[i % extra].push(d.clone());
            }
            for (j, docs) in buckets.into_iter().enumerate() {
                if !docs.is_empty() {
                    dev_out.push(sibling(format!("dev{}", j + 1), docs));
                }
            }
        }
        c.documents = keep;
        train_out.push(c);
    }
    (train_out, dev_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn doc(id: &str, order: usize, sentences: &[&[&str]]) -> Document {
        let mut tokens = Vec::new();
        for (s, words) in sentences.iter().enumerate() {
            for w in words.iter() {
                let index_in_doc = tokens.len();
                tokens.push(Token {
                    text: w.to_string(),
                    index_in_doc,
                    sentence_id: s,
                });
            }
        }
        Document {
            doc_id: id.to_string(),
            tokens,
            mentions: Vec::new(),
            dateline: None,
            order_index: order,
            sentence_count: sentences.len(),
            topical: vec![true; sentences.len()],
        }
    }

    fn cluster(docs: Vec<Document>) -> Cluster {
        Cluster {
            cluster_id: "c".into(),
            split: Split::Train,
            documents: docs,
            gold: BTreeMap::new(),
            candidate_values: BTreeSet::new(),
        }
    }

    #[test]
    fn eight_evaluable_of_fifteen() {
        assert_eq!(Slot::ALL.len(), 15);
        assert_eq!(Slot::ALL.iter().filter(|s| s.is_evaluable()).count(), 8);
        for s in Slot::ALL {
            assert_eq!(Slot::from_key(s.key()), Some(s));
        }
    }

    #[test]
    fn dedup_examples() {
        let a = doc("a", 0, &[&["x", "y"]]);
        let b = doc("b", 1, &[&["z"]]);
        let a2 = doc("a2", 2, &[&["x", "y"]]);
        let c = dedup_documents(cluster(vec![a.clone(), b.clone(), a2]));
        assert_eq!(c.documents.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);

        let c = dedup_documents(cluster(vec![a.clone(), b.clone()]));
        assert_eq!(c.documents.len(), 2);

        let c = dedup_documents(cluster(vec![a.clone(), a.clone(), a]));
        assert_eq!(c.documents.len(), 1);
    }

    #[test]
    fn split_dev_every_fifth() {
        let docs: Vec<Document> = (0..10).map(|i| doc(&format!("d{}", i), i, &[&["w"]])).collect();
        let (train, dev) = split_dev(vec![cluster(docs)]);
        assert_eq!(train[0].documents.len(), 8);
        assert_eq!(dev.len(), 1);
        let ids: Vec<_> = dev[0].documents.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["d4", "d9"]);
        assert_eq!(dev[0].split, Split::Dev);
        assert_eq!(dev[0].gold, train[0].gold);
    }

    #[test]
    fn split_dev_small_and_empty() {
        let docs: Vec<Document> = (0..3).map(|i| doc(&format!("d{}", i), i, &[&["w"]])).collect();
        let (train, dev) = split_dev(vec![cluster(docs)]);
        assert_eq!(train[0].documents.len(), 3);
        assert!(dev.is_empty());

        let (train, dev) = split_dev(vec![cluster(Vec::new())]);
        assert!(train[0].documents.is_empty());
        assert!(dev.is_empty());
    }

    #[test]
    fn split_dev_extra_round_robin() {
        let docs: Vec<Document> = (0..10).map(|i| doc(&format!("d{}", i), i, &[&["w"]])).collect();
        let (train, dev) = split_dev_with_extra(vec![cluster(docs)], 2);
        assert_eq!(train[0].documents.len(), 8);
        assert_eq!(dev.len(), 3);
        assert_eq!(dev[1].documents.len(), 4);
        assert_eq!(dev[2].documents.len(), 4);
    }

    #[test]
    fn validation_rejects_bad_span() {
        let mut d = doc("a", 0, &[&["x", "y"]]);
        d.mentions.push(Mention {
            doc_id: "a".into(),
            start: 1,
            end: 3,
            value_id: "v".into(),
            entity_type: EntityType::Number,
            is_flight_number: false,
            is_topical_flight: false,
        });
        let mut c = cluster(vec![d]);
        c.candidate_values.insert("v".into());
        assert!(matches!(c.validate(), Err(CorpusError::Validation { .. })));
    }
}
