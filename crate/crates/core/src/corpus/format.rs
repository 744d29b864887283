//! Newline-delimited JSON cluster records.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Cluster, CorpusError, Document, EntityType, Mention, Slot, Split, Token, MAX_DOCUMENTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMention {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub value_id: String,
    pub entity_type: EntityType,
    #[serde(default)]
    pub is_flight_number: bool,
    #[serde(default)]
    pub is_topical_flight: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDocument {
    pub doc_id: String,
    pub order_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dateline: Option<String>,
    pub sentences: Vec<Vec<String>>,
    #[serde(default)]
    pub mentions: Vec<RawMention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCluster {
    pub cluster_id: String,
    pub split: Split,
    #[serde(default)]
    pub gold: BTreeMap<Slot, Vec<String>>,
    pub candidate_values: Vec<String>,
    pub documents: Vec<RawDocument>,
}

fn invalid(cluster_id: &str, detail: String) -> CorpusError {
    CorpusError::Validation {
        cluster_id: cluster_id.to_string(),
        detail,
    }
}

impl RawCluster {
    /// Converts to a validated [`Cluster`], keeping the first
    /// [`MAX_DOCUMENTS`] documents in publication order.
    pub fn into_cluster(self) -> Result<Cluster, CorpusError> {
        let id = self.cluster_id.clone();
        let mut documents = Vec::with_capacity(self.documents.len());
        for rd in self.documents {
            documents.push(raw_document(&id, rd)?);
        }
        documents.sort_by_key(|d| d.order_index);
        documents.truncate(MAX_DOCUMENTS);
        let mut cluster = Cluster {
            cluster_id: self.cluster_id,
            split: self.split,
            documents,
            gold: self
                .gold
                .into_iter()
                .map(|(s, vs)| (s, vs.into_iter().collect::<BTreeSet<_>>()))
                .collect(),
            candidate_values: self.candidate_values.into_iter().collect(),
        };
        cluster.validate()?;
        cluster.refresh_topicality();
        Ok(cluster)
    }

    pub fn from_cluster(c: &Cluster) -> Self {
        RawCluster {
            cluster_id: c.cluster_id.clone(),
            split: c.split,
            gold: c.gold.iter().map(|(s, vs)| (*s, vs.iter().cloned().collect())).collect(),
            candidate_values: c.candidate_values.iter().cloned().collect(),
            documents: c.documents.iter().map(raw_from_document).collect(),
        }
    }
}

fn raw_document(cluster_id: &str, rd: RawDocument) -> Result<Document, CorpusError> {
    let dateline = match &rd.dateline {
        Some(s) => Some(
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|e| invalid(cluster_id, format!("doc {}: dateline {:?}: {}", rd.doc_id, s, e)))?,
        ),
        None => None,
    };
    let mut tokens = Vec::new();
    for (sentence_id, words) in rd.sentences.iter().enumerate() {
        for w in words {
            let index_in_doc = tokens.len();
            tokens.push(Token {
                text: w.clone(),
                index_in_doc,
                sentence_id,
            });
        }
    }
    let mut mentions = Vec::with_capacity(rd.mentions.len());
    for m in rd.mentions {
        if m.start >= m.end || m.end > tokens.len() {
            return Err(invalid(
                cluster_id,
                format!(
                    "doc {}: mention span [{}, {}) outside document of length {}",
                    rd.doc_id,
                    m.start,
                    m.end,
                    tokens.len()
                ),
            ));
        }
        if tokens[m.start].sentence_id != m.sentence {
            return Err(invalid(
                cluster_id,
                format!("doc {}: mention at {} declares sentence {}", rd.doc_id, m.start, m.sentence),
            ));
        }
        mentions.push(Mention {
            doc_id: rd.doc_id.clone(),
            start: m.start,
            end: m.end,
            value_id: m.value_id,
            entity_type: m.entity_type,
            is_flight_number: m.is_flight_number,
            is_topical_flight: m.is_topical_flight,
        });
    }
    mentions.sort_by_key(|m| m.start);
    let sentence_count = rd.sentences.len();
    Ok(Document {
        doc_id: rd.doc_id,
        tokens,
        mentions,
        dateline,
        order_index: rd.order_index,
        sentence_count,
        topical: vec![true; sentence_count],
    })
}

fn raw_from_document(d: &Document) -> RawDocument {
    RawDocument {
        doc_id: d.doc_id.clone(),
        order_index: d.order_index,
        dateline: d.dateline.map(|x| x.format("%Y-%m-%d").to_string()),
        sentences: d
            .sentences()
            .into_iter()
            .map(|s| s.into_iter().map(str::to_string).collect())
            .collect(),
        mentions: d
            .mentions
            .iter()
            .map(|m| RawMention {
                sentence: d.sentence_of(m.start),
                start: m.start,
                end: m.end,
                value_id: m.value_id.clone(),
                entity_type: m.entity_type,
                is_flight_number: m.is_flight_number,
                is_topical_flight: m.is_topical_flight,
            })
            .collect(),
    }
}

/// Parses cluster records, one JSON object per non-blank line.
pub fn parse_clusters<R: BufRead>(reader: R) -> Result<Vec<Cluster>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let record = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: format!("<record {}>", record),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCluster = serde_json::from_str(&line).map_err(|source| CorpusError::Parse { record, source })?;
        out.push(raw.into_cluster()?);
    }
    Ok(out)
}

pub fn load_clusters(path: &Path) -> Result<Vec<Cluster>, CorpusError> {
    let f = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_clusters(BufReader::new(f))
}

pub fn cluster_to_json(c: &Cluster) -> String {
    serde_json::to_string(&RawCluster::from_cluster(c)).expect("cluster records always serialize")
}

pub fn write_clusters(path: &Path, clusters: &[Cluster]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let f = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(f);
    for c in clusters {
        writeln!(w, "{}", cluster_to_json(c)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_DOCS: &str = r#"{"cluster_id":"c1","split":"train","gold":{"fatalities":["n12"],"survivors":[]},"candidate_values":["n12","FL1"],"documents":[{"doc_id":"a","order_index":0,"dateline":"2014-03-08","sentences":[["flight","FL1","crashed"],["12","killed"]],"mentions":[{"sentence":0,"start":1,"end":2,"value_id":"FL1","entity_type":"other","is_flight_number":true,"is_topical_flight":true},{"sentence":1,"start":3,"end":4,"value_id":"n12","entity_type":"number","is_flight_number":false,"is_topical_flight":false}]},{"doc_id":"b","order_index":1,"sentences":[["no","news"]],"mentions":[]}]}"#;

    #[test]
    fn loads_two_documents() {
        let cs = parse_clusters(TWO_DOCS.as_bytes()).unwrap();
        assert_eq!(cs.len(), 1);
        let c = &cs[0];
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.documents[0].len(), 5);
        assert_eq!(c.documents[0].mentions[1].start, 3);
        assert_eq!(c.documents[0].tokens[3].sentence_id, 1);
        assert!(c.gold_for(Slot::Survivors).is_none());
        assert!(c.is_findable(Slot::Fatalities));
    }

    #[test]
    fn round_trip_identity() {
        let cs = parse_clusters(TWO_DOCS.as_bytes()).unwrap();
        let again = parse_clusters(cluster_to_json(&cs[0]).as_bytes()).unwrap();
        assert_eq!(cs, again);
    }

    #[test]
    fn malformed_record_names_line() {
        let text = format!("{}\n\n{{not json\n", TWO_DOCS);
        match parse_clusters(text.as_bytes()) {
            Err(CorpusError::Parse { record, .. }) => assert_eq!(record, 3),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn span_past_document_end_rejected() {
        let text = TWO_DOCS.replace(r#""start":3,"end":4"#, r#""start":3,"end":9"#);
        assert!(matches!(parse_clusters(text.as_bytes()), Err(CorpusError::Validation { .. })));
    }

    #[test]
    fn unknown_candidate_rejected() {
        let text = TWO_DOCS.replace(r#"["n12","FL1"]"#, r#"["FL1"]"#);
        assert!(matches!(parse_clusters(text.as_bytes()), Err(CorpusError::Validation { .. })));
    }

    #[test]
    fn caps_at_two_hundred_documents() {
        let docs: Vec<String> = (0..250)
            .rev()
            .map(|i| format!(r#"{{"doc_id":"d{i}","order_index":{i},"sentences":[["w{i}"]]}}"#))
            .collect();
        let text = format!(
            r#"{{"cluster_id":"big","split":"test","candidate_values":[],"documents":[{}]}}"#,
            docs.join(",")
        );
        let cs = parse_clusters(text.as_bytes()).unwrap();
        assert_eq!(cs[0].documents.len(), 200);
        assert_eq!(cs[0].documents[0].doc_id, "d0");
        assert_eq!(cs[0].documents[199].doc_id, "d199");
    }
}
