//! Synthetic crash-report clusters with controllable noise.
//!
//! Every document opens with the topical flight. Slot values appear inside
//! short slot-specific templates. Noise comes in three kinds: early
//! documents that state a consistent wrong value, digressions about an
//! earlier event (opened by a different flight number), and gold values
//! that turn up by coincidence in neutral sentences.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Cluster, Document, EntityType, Mention, Slot, Split, Token};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no context templates for slot {0}")]
    EmptyVocab(Slot),
    #[error("template {template:?} for slot {slot} needs exactly one `{{}}` placeholder")]
    BadTemplate { slot: Slot, template: String },
    #[error("{name} must lie in [0, 1], got {value}")]
    BadRate { name: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_clusters: usize,
    /// Inclusive range of documents per cluster.
    pub docs_per_cluster: [usize; 2],
    /// Templates per evaluable slot; `{}` marks the value.
    pub context: BTreeMap<Slot, Vec<String>>,
    pub filler: Vec<String>,
    /// Fraction of documents (rounded down) stating a wrong value for each
    /// non-null slot, drawn preferentially from early documents.
    pub misinformation_rate: f64,
    /// Probability that a document digresses to an earlier event.
    pub offtopic_rate: f64,
    /// Probability that a slot has no gold value.
    pub missing_slot_rate: f64,
    /// Probability of each of up to three neutral sentences per document
    /// quoting a gold value or a recurring distractor.
    pub coincidental_rate: f64,
    /// Inclusive range of filler sentences per document.
    pub filler_sentences: [usize; 2],
    pub split: Split,
    pub id_prefix: String,
    pub start_date: NaiveDate,
    pub seed: u64,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn default_context() -> BTreeMap<Slot, Vec<String>> {
    BTreeMap::from([
        (Slot::AircraftType, strings(&["the plane was a {} jet", "the {} aircraft went down", "investigators examined the {} model"])),
        (Slot::CrashSite, strings(&["it crashed near {} on approach", "wreckage was found at {}", "the jet went down in {}"])),
        (Slot::Crew, strings(&["{} crew members were aboard", "a crew of {} was on duty", "{} pilots and attendants staffed it"])),
        (Slot::Fatalities, strings(&["the crash killed {} people", "{} people died in the accident", "the death toll rose to {}"])),
        (Slot::Injuries, strings(&["{} people were injured", "{} passengers were hurt", "hospitals treated {} wounded"])),
        (Slot::Operator, strings(&["the jet was operated by {}", "the airline {} confirmed the loss", "a spokesman for carrier {} said"])),
        (Slot::Passengers, strings(&["the plane carried {} passengers", "{} passengers were on board", "it had {} travelers booked"])),
        (Slot::Survivors, strings(&["{} people survived", "rescuers pulled {} survivors out", "only {} escaped alive"])),
    ])
}

pub fn default_filler() -> Vec<String> {
    strings(&[
        "officials", "said", "the", "investigation", "continues", "weather", "was", "clear", "on", "monday", "authorities", "reported",
        "airport", "recorders", "were", "recovered", "families", "gathered", "at", "terminal", "experts", "will", "review", "data", "a",
        "statement", "late", "tuesday", "local", "media", "showed", "images", "of", "smoke", "runway", "closed", "for", "hours",
    ])
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clusters: 20,
            docs_per_cluster: [4, 8],
            context: default_context(),
            filler: default_filler(),
            misinformation_rate: 0.3,
            offtopic_rate: 0.3,
            missing_slot_rate: 0.2,
            coincidental_rate: 0.5,
            filler_sentences: [1, 3],
            split: Split::Train,
            id_prefix: "synth".into(),
            start_date: NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date"),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, value) in [
            ("misinformation_rate", self.misinformation_rate),
            ("offtopic_rate", self.offtopic_rate),
            ("missing_slot_rate", self.missing_slot_rate),
            ("coincidental_rate", self.coincidental_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::BadRate { name, value });
            }
        }
        for slot in Slot::EVALUABLE {
            let templates = self.context.get(&slot).filter(|t| !t.is_empty()).ok_or(SynthError::EmptyVocab(slot))?;
            for t in templates {
                if t.matches("{}").count() != 1 {
                    return Err(SynthError::BadTemplate {
                        slot,
                        template: t.clone(),
                    });
                }
            }
        }
        let [lo, hi] = self.docs_per_cluster;
        if lo == 0 || lo > hi || hi > crate::corpus::MAX_DOCUMENTS {
            return Err(SynthError::Config(format!("docs_per_cluster {:?} is not a valid range", self.docs_per_cluster)));
        }
        if self.filler_sentences[0] > self.filler_sentences[1] {
            return Err(SynthError::Config("filler_sentences range is reversed".into()));
        }
        if self.filler.is_empty() {
            return Err(SynthError::Config("filler vocabulary is empty".into()));
        }
        Ok(())
    }
}

/// Why a mention is where it is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionKind {
    /// Gold value in its slot's context.
    Correct,
    /// Misinformation: a wrong value in the slot's context.
    Wrong,
    /// Inside a digression about another event, flight number included.
    Offtopic,
    /// A value in a neutral sentence.
    Coincidental,
    /// The topical flight number.
    Flight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub cluster_id: String,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub value_id: String,
    /// The slot whose context surrounds the mention, if any.
    pub slot: Option<Slot>,
    pub kind: MentionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub clusters: Vec<Cluster>,
    pub provenance: Vec<ProvenanceRecord>,
}

impl SynthCorpus {
    pub fn write_provenance(&self, path: &Path) -> Result<(), SynthError> {
        let json = serde_json::to_string_pretty(&self.provenance).expect("provenance serializes");
        std::fs::write(path, json).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

const AIRCRAFT: [&str; 12] = [
    "boeing 737", "boeing 747", "boeing 777", "airbus a320", "airbus a330", "mcdonnell md-82", "tupolev tu-154", "embraer 190",
    "bombardier crj200", "antonov an-24", "ilyushin il-76", "fokker 100",
];
const AIRLINES: [&str; 12] = [
    "air meridian", "transpolar airways", "coastal air", "sunward airlines", "nordic wings", "pacific star", "andes air",
    "saharan express", "lagoon air", "atlas connect", "eastcoast jet", "highland air",
];
const SITES: [&str; 12] = [
    "lake varna", "mount koru", "port elan", "tarn valley", "kessel bay", "dorval", "sable island", "ridge county", "delmar field",
    "cape holm", "orlov steppe", "vinter fjord",
];
/// Neutral templates; the slot only names the kind of value they take.
const NEUTRAL: [(&str, Slot); 9] = [
    ("about {} minutes after takeoff", Slot::Crew),
    ("the search lasted {} hours", Slot::Crew),
    ("the airport has {} gates", Slot::Crew),
    ("{} flights were delayed", Slot::Crew),
    ("a hotline received {} calls", Slot::Crew),
    ("shares of {} fell sharply", Slot::Operator),
    ("{} flights resumed on schedule", Slot::Operator),
    ("residents of {} gathered", Slot::CrashSite),
    ("roads near {} were closed", Slot::CrashSite),
];
const MAX_NEUTRAL: usize = 3;

fn is_numeric(slot: Slot) -> bool {
    matches!(slot, Slot::Crew | Slot::Fatalities | Slot::Injuries | Slot::Passengers | Slot::Survivors)
}

fn entity_type(slot: Slot) -> EntityType {
    match slot {
        Slot::AircraftType => EntityType::Aircraft,
        Slot::Operator => EntityType::Airline,
        Slot::CrashSite => EntityType::Location,
        _ => EntityType::Number,
    }
}

/// A value's surface tokens and id.
#[derive(Debug, Clone, PartialEq)]
struct Value {
    id: String,
    words: Vec<String>,
}

impl Value {
    fn phrase(p: &str) -> Self {
        Self {
            id: p.replace(' ', "_"),
            words: p.split(' ').map(str::to_string).collect(),
        }
    }

    fn number(n: u32) -> Self {
        Self {
            id: n.to_string(),
            words: vec![n.to_string()],
        }
    }
}

/// Draws values without reuse inside one cluster.
struct ValuePool {
    numbers: Vec<u32>,
    aircraft: Vec<&'static str>,
    airlines: Vec<&'static str>,
    sites: Vec<&'static str>,
}

impl ValuePool {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut numbers: Vec<u32> = (2..400).collect();
        numbers.shuffle(rng);
        let mut aircraft = AIRCRAFT.to_vec();
        aircraft.shuffle(rng);
        let mut airlines = AIRLINES.to_vec();
        airlines.shuffle(rng);
        let mut sites = SITES.to_vec();
        sites.shuffle(rng);
        Self {
            numbers,
            aircraft,
            airlines,
            sites,
        }
    }

    fn draw(&mut self, slot: Slot) -> Value {
        match slot {
            Slot::AircraftType => Value::phrase(self.aircraft.pop().expect("enough aircraft")),
            Slot::Operator => Value::phrase(self.airlines.pop().expect("enough airlines")),
            Slot::CrashSite => Value::phrase(self.sites.pop().expect("enough sites")),
            _ => Value::number(self.numbers.pop().expect("enough numbers")),
        }
    }
}

struct Sentence {
    words: Vec<String>,
    /// `(offset, value, slot, kind, is_flight)` for each mention.
    mentions: Vec<(usize, Value, Option<Slot>, MentionKind, bool)>,
}

impl Sentence {
    fn plain(words: Vec<String>) -> Self {
        Self { words, mentions: Vec::new() }
    }

    fn from_template(template: &str, value: Value, slot: Option<Slot>, kind: MentionKind) -> Self {
        let mut words = Vec::new();
        let mut offset = 0;
        for w in template.split_whitespace() {
            if w == "{}" {
                offset = words.len();
                words.extend(value.words.iter().cloned());
            } else {
                words.push(w.to_string());
            }
        }
        Self {
            words,
            mentions: vec![(offset, value, slot, kind, false)],
        }
    }

    fn flight(value: &Value, lead: &[&str], tail: &[&str], kind: MentionKind) -> Self {
        let mut words = strings(lead);
        let offset = words.len();
        words.extend(value.words.iter().cloned());
        words.extend(strings(tail));
        Self {
            words,
            mentions: vec![(offset, value.clone(), None, kind, true)],
        }
    }
}

/// Picks `k` distinct documents, favoring early ones with linearly
/// decaying weight.
fn early_biased(n: usize, k: usize, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let mut chosen = BTreeSet::new();
    while chosen.len() < k.min(n) {
        let candidates: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
        let weights: Vec<usize> = candidates.iter().map(|&i| n - i).collect();
        let total: usize = weights.iter().sum();
        let mut r = rng.gen_range(0..total);
        for (&c, &w) in candidates.iter().zip(&weights) {
            if r < w {
                chosen.insert(c);
                break;
            }
            r -= w;
        }
    }
    chosen
}

fn cluster_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng
}

fn generate_cluster(cfg: &SynthConfig, i: usize) -> (Cluster, Vec<ProvenanceRecord>) {
    let mut rng = cluster_rng(cfg.seed, i);
    let cluster_id = format!("{}{:04}", cfg.id_prefix, i);
    let mut pool = ValuePool::new(&mut rng);
    let n_docs = rng.gen_range(cfg.docs_per_cluster[0]..=cfg.docs_per_cluster[1]);

    let mut gold: BTreeMap<Slot, Option<Value>> = BTreeMap::new();
    for slot in Slot::EVALUABLE {
        let value = (!rng.gen_bool(cfg.missing_slot_rate)).then(|| pool.draw(slot));
        gold.insert(slot, value);
    }
    let present: Vec<Slot> = Slot::EVALUABLE.iter().copied().filter(|s| gold[s].is_some()).collect();
    let wrong: BTreeMap<Slot, Value> = present.iter().map(|&s| (s, pool.draw(s))).collect();
    let past: BTreeMap<Slot, Value> = present.iter().map(|&s| (s, pool.draw(s))).collect();
    let distractors: BTreeMap<Slot, Value> = [Slot::Crew, Slot::Operator, Slot::CrashSite].into_iter().map(|s| (s, pool.draw(s))).collect();
    let n_wrong = (cfg.misinformation_rate * n_docs as f64 + 1e-9).floor() as usize;
    let misinformed: BTreeMap<Slot, BTreeSet<usize>> = present.iter().map(|&s| (s, early_biased(n_docs, n_wrong, &mut rng))).collect();

    let flight_id = format!("fl{}", rng.gen_range(100..1000));
    let flight = Value {
        words: vec![flight_id.clone()],
        id: flight_id,
    };
    let other_flight = loop {
        let id = format!("fl{}", rng.gen_range(100..1000));
        if id != flight.id {
            break Value {
                words: vec![id.clone()],
                id,
            };
        }
    };
    let event_date = cfg.start_date + Duration::days(rng.gen_range(0..3000));

    let template = |slot: Slot, rng: &mut ChaCha8Rng| cfg.context[&slot].choose(rng).expect("validated non-empty").clone();
    let filler = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(4..=8);
        Sentence::plain((0..len).map(|_| cfg.filler.choose(rng).expect("validated").clone()).collect())
    };

    let mut documents = Vec::new();
    let mut provenance = Vec::new();
    for d in 0..n_docs {
        let doc_id = format!("{}/d{}", cluster_id, d);
        let mut body: Vec<Sentence> = Vec::new();
        for &slot in &present {
            let (value, kind) = if misinformed[&slot].contains(&d) {
                (wrong[&slot].clone(), MentionKind::Wrong)
            } else {
                (gold[&slot].clone().expect("present slot"), MentionKind::Correct)
            };
            body.push(Sentence::from_template(&template(slot, &mut rng), value, Some(slot), kind));
        }
        for _ in 0..rng.gen_range(cfg.filler_sentences[0]..=cfg.filler_sentences[1]) {
            body.push(filler(&mut rng));
        }
        for _ in 0..MAX_NEUTRAL {
            if !rng.gen_bool(cfg.coincidental_rate) {
                continue;
            }
            let (t, slot) = *NEUTRAL.choose(&mut rng).expect("non-empty");
            let golds: Vec<&Value> = if is_numeric(slot) {
                present.iter().filter(|s| is_numeric(**s)).filter_map(|s| gold[s].as_ref()).collect()
            } else {
                gold[&slot].iter().collect()
            };
            let value = match golds.choose(&mut rng) {
                Some(v) if rng.gen_bool(0.5) => (*v).clone(),
                _ => distractors[&slot].clone(),
            };
            body.push(Sentence::from_template(t, value, None, MentionKind::Coincidental));
        }
        body.shuffle(&mut rng);

        let mut sentences = vec![Sentence::flight(&flight, &["flight"], &["crashed", "on", "approach"], MentionKind::Flight)];
        sentences.extend(body);
        if !present.is_empty() && rng.gen_bool(cfg.offtopic_rate) {
            let mut digression = vec![Sentence::flight(&other_flight, &["years", "earlier", "flight"], &["also", "crashed"], MentionKind::Offtopic)];
            let mut slots = present.clone();
            slots.shuffle(&mut rng);
            for &slot in slots.iter().take(rng.gen_range(1..=3.min(slots.len()))) {
                digression.push(Sentence::from_template(&template(slot, &mut rng), past[&slot].clone(), Some(slot), MentionKind::Offtopic));
            }
            let at = rng.gen_range(1..=sentences.len());
            if at < sentences.len() {
                digression.push(Sentence::flight(&flight, &["investigators", "of", "flight"], &["said", "more"], MentionKind::Flight));
            }
            sentences.splice(at..at, digression);
        }

        let period = ".".to_string();
        let mut tokens = Vec::new();
        let mut mentions = Vec::new();
        for (sid, s) in sentences.iter().enumerate() {
            let base = tokens.len();
            for w in s.words.iter().chain(std::iter::once(&period)) {
                let index_in_doc = tokens.len();
                tokens.push(Token {
                    text: w.clone(),
                    index_in_doc,
                    sentence_id: sid,
                });
            }
            for (offset, value, slot, kind, is_flight) in &s.mentions {
                let start = base + offset;
                let end = start + value.words.len();
                mentions.push(Mention {
                    doc_id: doc_id.clone(),
                    start,
                    end,
                    value_id: value.id.clone(),
                    entity_type: if *is_flight {
                        EntityType::Other
                    } else {
                        slot.map_or_else(|| if value.words.len() > 1 { EntityType::Airline } else { EntityType::Number }, entity_type)
                    },
                    is_flight_number: *is_flight,
                    is_topical_flight: *is_flight && *kind == MentionKind::Flight,
                });
                provenance.push(ProvenanceRecord {
                    cluster_id: cluster_id.clone(),
                    doc_id: doc_id.clone(),
                    start,
                    end,
                    value_id: value.id.clone(),
                    slot: *slot,
                    kind: *kind,
                });
            }
        }
        documents.push(Document {
            doc_id,
            tokens,
            mentions,
            dateline: Some(event_date + Duration::days(d as i64)),
            order_index: d,
            sentence_count: sentences.len(),
            topical: Vec::new(),
        });
    }

    let candidate_values = documents.iter().flat_map(|d| d.mentions.iter().map(|m| m.value_id.clone())).collect();
    let mut cluster = Cluster {
        cluster_id,
        split: cfg.split,
        documents,
        gold: gold
            .into_iter()
            .map(|(s, v)| (s, v.map(|v| BTreeSet::from([v.id])).unwrap_or_default()))
            .collect(),
        candidate_values,
    };
    cluster.refresh_topicality();
    (cluster, provenance)
}

/// Generates `n_clusters` clusters. Output depends only on the config.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let parts: Vec<(Cluster, Vec<ProvenanceRecord>)> = (0..cfg.n_clusters).into_par_iter().map(|i| generate_cluster(cfg, i)).collect();
    let mut clusters = Vec::with_capacity(parts.len());
    let mut provenance = Vec::new();
    for (c, p) in parts {
        clusters.push(c);
        provenance.extend(p);
    }
    Ok(SynthCorpus { clusters, provenance })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCounts {
    pub correct: usize,
    pub wrong: usize,
    pub offtopic: usize,
}

/// Per-slot mention counts from the generator's provenance log.
pub fn oracle_stats(corpus: &SynthCorpus) -> BTreeMap<Slot, SlotCounts> {
    let mut out: BTreeMap<Slot, SlotCounts> = Slot::EVALUABLE.iter().map(|&s| (s, SlotCounts::default())).collect();
    for r in &corpus.provenance {
        let Some(slot) = r.slot else { continue };
        let c = out.entry(slot).or_default();
        match r.kind {
            MentionKind::Correct => c.correct += 1,
            MentionKind::Wrong => c.wrong += 1,
            MentionKind::Offtopic => c.offtopic += 1,
            MentionKind::Coincidental | MentionKind::Flight => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::topic_weights;

    fn cfg() -> SynthConfig {
        SynthConfig {
            n_clusters: 6,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let a = generate(&cfg()).unwrap();
        let b = generate(&cfg()).unwrap();
        assert_eq!(a, b);
        let ja: Vec<String> = a.clusters.iter().map(crate::corpus::cluster_to_json).collect();
        let jb: Vec<String> = b.clusters.iter().map(crate::corpus::cluster_to_json).collect();
        assert_eq!(ja, jb);
        for c in &a.clusters {
            c.validate().unwrap();
            assert!(c.documents.iter().all(|d| d.dateline.is_some()));
        }
        let other = generate(&SynthConfig { seed: 12, ..cfg() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn noiseless_has_only_correct_slot_mentions() {
        let c = SynthConfig {
            misinformation_rate: 0.0,
            offtopic_rate: 0.0,
            coincidental_rate: 0.0,
            ..cfg()
        };
        let corpus = generate(&c).unwrap();
        let stats = oracle_stats(&corpus);
        assert!(stats.values().all(|s| s.wrong == 0 && s.offtopic == 0));
        for r in &corpus.provenance {
            let cluster = corpus.clusters.iter().find(|c| c.cluster_id == r.cluster_id).unwrap();
            if let Some(slot) = r.slot {
                assert!(cluster.gold_for(slot).unwrap().contains(&r.value_id));
            }
        }
    }

    #[test]
    fn all_missing_gives_null_clusters() {
        let corpus = generate(&SynthConfig { missing_slot_rate: 1.0, ..cfg() }).unwrap();
        for c in &corpus.clusters {
            assert!(Slot::EVALUABLE.iter().all(|&s| c.gold_for(s).is_none()));
        }
    }

    #[test]
    fn misinformation_counts_follow_rate() {
        let c = SynthConfig {
            docs_per_cluster: [10, 10],
            misinformation_rate: 0.3,
            ..cfg()
        };
        let corpus = generate(&c).unwrap();
        for cluster in &corpus.clusters {
            for slot in Slot::EVALUABLE {
                let count = |kind| {
                    corpus
                        .provenance
                        .iter()
                        .filter(|r| r.cluster_id == cluster.cluster_id && r.slot == Some(slot) && r.kind == kind)
                        .count()
                };
                if cluster.gold_for(slot).is_some() {
                    assert_eq!(count(MentionKind::Wrong), 3);
                    assert_eq!(count(MentionKind::Correct), 7);
                } else {
                    assert_eq!(count(MentionKind::Wrong) + count(MentionKind::Correct), 0);
                }
            }
        }
    }

    #[test]
    fn misinformation_favors_early_documents() {
        let c = SynthConfig {
            n_clusters: 40,
            docs_per_cluster: [10, 10],
            ..cfg()
        };
        let corpus = generate(&c).unwrap();
        let (mut early, mut late) = (0, 0);
        for r in corpus.provenance.iter().filter(|r| r.kind == MentionKind::Wrong) {
            let d: usize = r.doc_id.rsplit('d').next().unwrap().parse().unwrap();
            if d < 5 {
                early += 1;
            } else {
                late += 1;
            }
        }
        assert!(early > late, "{} early vs {} late", early, late);
    }

    #[test]
    fn topic_weights_zero_exactly_offtopic_mentions() {
        let c = SynthConfig {
            offtopic_rate: 0.6,
            ..cfg()
        };
        let corpus = generate(&c).unwrap();
        let mut seen = 0;
        for cluster in &corpus.clusters {
            let w = topic_weights(cluster);
            for (di, d) in cluster.documents.iter().enumerate() {
                for m in &d.mentions {
                    let r = corpus
                        .provenance
                        .iter()
                        .find(|r| r.doc_id == d.doc_id && r.start == m.start)
                        .unwrap();
                    let off = r.kind == MentionKind::Offtopic;
                    seen += off as usize;
                    assert_eq!(w.get(di, m.start) == 0.0, off, "{} at {}", d.doc_id, m.start);
                }
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = cfg();
        c.context.insert(Slot::Crew, Vec::new());
        assert!(matches!(generate(&c), Err(SynthError::EmptyVocab(Slot::Crew))));
        let c = SynthConfig {
            offtopic_rate: 1.5,
            ..cfg()
        };
        assert!(matches!(generate(&c), Err(SynthError::BadRate { .. })));
        let mut c = cfg();
        c.context.insert(Slot::Crew, vec!["no placeholder".into()]);
        assert!(matches!(generate(&c), Err(SynthError::BadTemplate { .. })));
    }
}
