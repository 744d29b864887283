//! Modified precision/recall, null detection scores, and MRR.
//!
//! All scores are micro-averaged over (cluster, slot) pairs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::{Candidate, ValueScoreTable, NULL_KEY};
use crate::corpus::{Cluster, Slot};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cluster {cluster_id}: predicted {value:?} for {slot}, which is not a candidate value")]
    NotACandidate { cluster_id: String, slot: Slot, value: String },
    #[error("no gold cluster with id {0}")]
    UnknownCluster(String),
    #[error("unknown slot {0:?} in predictions")]
    UnknownSlot(String),
}

/// One slot's decoded value (`None` is null) and its full ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPrediction {
    pub top: Option<String>,
    pub ranking: Vec<(Option<String>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPrediction {
    pub cluster_id: String,
    pub slots: BTreeMap<Slot, SlotPrediction>,
}

impl ClusterPrediction {
    pub fn from_table<T: Scalar>(cluster_id: &str, table: &ValueScoreTable<T>) -> Self {
        let slots = table
            .slots
            .iter()
            .enumerate()
            .map(|(si, &slot)| {
                let ranking: Vec<(Option<String>, f64)> = table
                    .ranking(si)
                    .into_iter()
                    .map(|(c, x)| (c.value_id().map(str::to_string), x.to_f64_lossy()))
                    .collect();
                let top = ranking.first().and_then(|(v, _)| v.clone());
                (slot, SlotPrediction { top, ranking })
            })
            .collect();
        Self {
            cluster_id: cluster_id.to_string(),
            slots,
        }
    }

    pub fn top(&self, slot: Slot) -> Option<&str> {
        self.slots.get(&slot).and_then(|p| p.top.as_deref())
    }
}

/// Serialized prediction: `{cluster_id, predictions, scores}`; the null
/// value's score is keyed [`NULL_KEY`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub cluster_id: String,
    pub predictions: BTreeMap<String, Option<String>>,
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

impl PredictionRecord {
    pub fn from_prediction(p: &ClusterPrediction) -> Self {
        let predictions = p.slots.iter().map(|(s, sp)| (s.key().to_string(), sp.top.clone())).collect();
        let scores = p
            .slots
            .iter()
            .map(|(s, sp)| {
                let m = sp
                    .ranking
                    .iter()
                    .map(|(v, x)| (v.clone().unwrap_or_else(|| NULL_KEY.to_string()), *x))
                    .collect();
                (s.key().to_string(), m)
            })
            .collect();
        Self {
            cluster_id: p.cluster_id.clone(),
            predictions,
            scores,
        }
    }

    pub fn to_prediction(&self) -> Result<ClusterPrediction, EvalError> {
        let mut slots = BTreeMap::new();
        for (key, top) in &self.predictions {
            let slot = Slot::from_key(key).ok_or_else(|| EvalError::UnknownSlot(key.clone()))?;
            let mut ranking: Vec<(Option<String>, f64)> = self
                .scores
                .get(key)
                .map(|m| {
                    m.iter()
                        .map(|(v, &x)| ((v != NULL_KEY).then(|| v.clone()), x))
                        .collect()
                })
                .unwrap_or_default();
            ranking.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| match (&a.0, &b.0) {
                        (Some(x), Some(y)) => x.cmp(y),
                        (Some(_), None) => std::cmp::Ordering::Less,
                        (None, Some(_)) => std::cmp::Ordering::Greater,
                        (None, None) => std::cmp::Ordering::Equal,
                    })
            });
            slots.insert(slot, SlotPrediction { top: top.clone(), ranking });
        }
        Ok(ClusterPrediction {
            cluster_id: self.cluster_id.clone(),
            slots,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Prf {
    pub fn from_counts(correct_pred: usize, predicted: usize, correct_gold: usize, gold: usize) -> Self {
        let p = ratio(correct_pred, predicted);
        let r = ratio(correct_gold, gold);
        Self { p, r, f1: f1(p, r) }
    }
}

/// Outcome of one (cluster, slot) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PairOutcome {
    findable: bool,
    gold_null: bool,
    /// Gold is non-null but never mentioned: not penalized.
    unfindable_gold: bool,
    predicted_null: bool,
    correct: bool,
    reciprocal_rank: f64,
}

fn pair_outcome(cluster: &Cluster, slot: Slot, pred: Option<&SlotPrediction>) -> Result<PairOutcome, EvalError> {
    let gold = cluster.gold_for(slot);
    let top = pred.and_then(|p| p.top.as_deref());
    if let Some(v) = top {
        if !cluster.candidate_values.contains(v) {
            return Err(EvalError::NotACandidate {
                cluster_id: cluster.cluster_id.clone(),
                slot,
                value: v.to_string(),
            });
        }
    }
    let hit = |v: &Option<String>| match (gold, v) {
        (None, None) => true,
        (Some(g), Some(v)) => g.contains(v),
        _ => false,
    };
    let reciprocal_rank = pred
        .and_then(|p| p.ranking.iter().position(|(v, _)| hit(v)))
        .map_or(0.0, |k| 1.0 / (k + 1) as f64);
    let findable = cluster.is_findable(slot);
    Ok(PairOutcome {
        findable,
        gold_null: gold.is_none(),
        unfindable_gold: gold.is_some() && !findable,
        predicted_null: top.is_none(),
        correct: match (gold, top) {
            (Some(g), Some(v)) => g.contains(v),
            _ => false,
        },
        reciprocal_rank,
    })
}

fn outcomes(preds: &[ClusterPrediction], clusters: &[Cluster]) -> Result<Vec<(Slot, PairOutcome)>, EvalError> {
    let by_id: HashMap<&str, &ClusterPrediction> = preds.iter().map(|p| (p.cluster_id.as_str(), p)).collect();
    let mut out = Vec::new();
    for c in clusters {
        let p = by_id.get(c.cluster_id.as_str());
        for slot in Slot::EVALUABLE {
            out.push((slot, pair_outcome(c, slot, p.and_then(|p| p.slots.get(&slot)))?));
        }
    }
    for p in preds {
        if !clusters.iter().any(|c| c.cluster_id == p.cluster_id) {
            return Err(EvalError::UnknownCluster(p.cluster_id.clone()));
        }
    }
    Ok(out)
}

/// Modified precision and recall: recall counts only findable pairs, and a
/// pair is recalled when its prediction is any of the gold values.
/// Precision counts non-null predictions, except on pairs whose gold value
/// is never mentioned.
pub fn modified_prf(preds: &[ClusterPrediction], clusters: &[Cluster]) -> Result<Prf, EvalError> {
    let o = outcomes(preds, clusters)?;
    Ok(prf_from(&o))
}

fn prf_from(o: &[(Slot, PairOutcome)]) -> Prf {
    let scored: Vec<&PairOutcome> = o.iter().map(|(_, x)| x).filter(|x| !x.predicted_null && !x.unfindable_gold).collect();
    let correct = scored.iter().filter(|x| x.correct).count();
    let findable: Vec<&PairOutcome> = o.iter().map(|(_, x)| x).filter(|x| x.findable).collect();
    let recalled = findable.iter().filter(|x| x.correct).count();
    Prf::from_counts(correct, scored.len(), recalled, findable.len())
}

/// Null as the positive class.
pub fn null_prf(preds: &[ClusterPrediction], clusters: &[Cluster]) -> Result<Prf, EvalError> {
    Ok(null_from(&outcomes(preds, clusters)?))
}

fn null_from(o: &[(Slot, PairOutcome)]) -> Prf {
    let predicted = o.iter().filter(|(_, x)| x.predicted_null).count();
    let gold = o.iter().filter(|(_, x)| x.gold_null).count();
    let both = o.iter().filter(|(_, x)| x.predicted_null && x.gold_null).count();
    Prf::from_counts(both, predicted, both, gold)
}

/// Mean reciprocal rank of the first correct candidate over every
/// (cluster, slot) pair; null counts as a candidate for gold-null pairs.
pub fn mrr(preds: &[ClusterPrediction], clusters: &[Cluster]) -> Result<f64, EvalError> {
    Ok(mrr_from(&outcomes(preds, clusters)?))
}

fn mrr_from(o: &[(Slot, PairOutcome)]) -> f64 {
    if o.is_empty() {
        return 0.0;
    }
    o.iter().map(|(_, x)| x.reciprocal_rank).sum::<f64>() / o.len() as f64
}

/// Mean of reciprocal ranks, for callers holding ranks directly.
pub fn mrr_of_ranks(ranks: &[Option<usize>]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|r| r.map_or(0.0, |k| 1.0 / k as f64)).sum::<f64>() / ranks.len() as f64
}

/// `(correct, findable)` per evaluable slot.
pub fn per_slot_report(preds: &[ClusterPrediction], clusters: &[Cluster]) -> Result<BTreeMap<Slot, (usize, usize)>, EvalError> {
    Ok(per_slot_from(&outcomes(preds, clusters)?))
}

fn per_slot_from(o: &[(Slot, PairOutcome)]) -> BTreeMap<Slot, (usize, usize)> {
    let mut out: BTreeMap<Slot, (usize, usize)> = Slot::EVALUABLE.iter().map(|&s| (s, (0, 0))).collect();
    for (s, x) in o.iter().filter(|(_, x)| x.findable) {
        let e = out.get_mut(s).expect("evaluable slot");
        e.1 += 1;
        if x.correct {
            e.0 += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_clusters: usize,
    /// Number of (cluster, slot) queries.
    pub n_queries: usize,
    pub score: Prf,
    pub null: Prf,
    pub mrr: f64,
    /// Slot key → `(correct, findable)`.
    pub per_slot: BTreeMap<String, (usize, usize)>,
}

pub fn evaluate(preds: &[ClusterPrediction], clusters: &[Cluster]) -> Result<EvalReport, EvalError> {
    let o = outcomes(preds, clusters)?;
    Ok(EvalReport {
        n_clusters: clusters.len(),
        n_queries: o.len(),
        score: prf_from(&o),
        null: null_from(&o),
        mrr: mrr_from(&o),
        per_slot: per_slot_from(&o).into_iter().map(|(s, v)| (s.key().to_string(), v)).collect(),
    })
}

/// System comparison table: score P/R/F1, null P/R/F1, MRR, one row each.
pub fn format_systems_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6}  {:>6}", "", "Score", "", "", "Nulls", "", "", "", width = width);
    let _ = writeln!(s, "{:<width$}  {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6}  {:>6}", "System", "P", "R", "F1", "P", "R", "F1", "MRR", width = width);
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>6.1} {:>6.1} {:>6.1}  {:>6.1} {:>6.1} {:>6.1}  {:>6.3}",
            name,
            100.0 * r.score.p,
            100.0 * r.score.r,
            100.0 * r.score.f1,
            100.0 * r.null.p,
            100.0 * r.null.r,
            100.0 * r.null.f1,
            r.mrr,
            width = width
        );
    }
    s
}

/// Per-slot accuracy table: one row per evaluable slot.
pub fn format_per_slot_table(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>8} {:>9}", "Slot", "Correct", "Findable");
    for slot in Slot::EVALUABLE {
        let (c, f) = report.per_slot.get(slot.key()).copied().unwrap_or((0, 0));
        let _ = writeln!(s, "{:<14} {:>8} {:>9}", slot.title(), c, f);
    }
    s
}

/// Convenience for a decoded table's top candidate per slot.
pub fn decoded(table_top: &BTreeMap<Slot, Candidate>, slot: Slot) -> Option<&str> {
    table_top.get(&slot).and_then(Candidate::value_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, EntityType, Mention, Split, Token};
    use std::collections::BTreeSet;

    fn cluster(id: &str, mentioned: &[&str], gold: &[(Slot, &[&str])]) -> Cluster {
        let tokens = mentioned
            .iter()
            .enumerate()
            .map(|(i, w)| Token {
                text: w.to_string(),
                index_in_doc: i,
                sentence_id: 0,
            })
            .collect();
        let mentions = mentioned
            .iter()
            .enumerate()
            .map(|(i, v)| Mention {
                doc_id: "d".into(),
                start: i,
                end: i + 1,
                value_id: v.to_string(),
                entity_type: EntityType::Other,
                is_flight_number: false,
                is_topical_flight: false,
            })
            .collect();
        let mut candidates: BTreeSet<String> = mentioned.iter().map(|s| s.to_string()).collect();
        candidates.insert("Z".into());
        Cluster {
            cluster_id: id.into(),
            split: Split::Test,
            documents: vec![Document {
                doc_id: "d".into(),
                tokens,
                mentions,
                dateline: None,
                order_index: 0,
                sentence_count: 1,
                topical: vec![true],
            }],
            gold: gold
                .iter()
                .map(|(s, vs)| (*s, vs.iter().map(|v| v.to_string()).collect()))
                .collect(),
            candidate_values: candidates,
        }
    }

    fn pred(id: &str, tops: &[(Slot, Option<&str>)]) -> ClusterPrediction {
        ClusterPrediction {
            cluster_id: id.into(),
            slots: tops
                .iter()
                .map(|(s, v)| {
                    let v = v.map(str::to_string);
                    (
                        *s,
                        SlotPrediction {
                            top: v.clone(),
                            ranking: vec![(v, 1.0)],
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn any_of_gold_gets_full_recall() {
        let c = cluster("c", &["A", "B"], &[(Slot::Crew, &["A", "B"])]);
        let p = pred("c", &[(Slot::Crew, Some("A"))]);
        let r = per_slot_report(std::slice::from_ref(&p), std::slice::from_ref(&c)).unwrap();
        assert_eq!(r[&Slot::Crew], (1, 1));
        let prf = modified_prf(&[p], &[c]).unwrap();
        assert_eq!((prf.p, prf.r), (1.0, 1.0));
    }

    #[test]
    fn unfindable_gold_leaves_recall_denominator() {
        let c = cluster("c", &["A"], &[(Slot::Crew, &["Q"]), (Slot::Operator, &["A"])]);
        let p = pred("c", &[(Slot::Crew, Some("A")), (Slot::Operator, Some("A"))]);
        let prf = modified_prf(&[p], &[c]).unwrap();
        assert_eq!(prf.r, 1.0);
        assert_eq!(prf.p, 1.0);
    }

    #[test]
    fn null_prediction_abstains() {
        let c = cluster("c", &["A"], &[(Slot::Crew, &["A"])]);
        let p = pred("c", &[(Slot::Crew, None)]);
        let prf = modified_prf(&[p], &[c]).unwrap();
        assert_eq!((prf.p, prf.r, prf.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn non_candidate_prediction_rejected() {
        let c = cluster("c", &["A"], &[]);
        let p = pred("c", &[(Slot::Crew, Some("nope"))]);
        assert!(matches!(modified_prf(&[p], &[c]), Err(EvalError::NotACandidate { .. })));
    }

    #[test]
    fn null_scores() {
        let c = cluster("c", &["A"], &[(Slot::Crew, &["A"])]);
        let all_values: Vec<(Slot, Option<&str>)> = Slot::EVALUABLE.iter().map(|&s| (s, Some("A"))).collect();
        let n = null_prf(&[pred("c", &all_values)], std::slice::from_ref(&c)).unwrap();
        assert_eq!((n.p, n.r), (0.0, 0.0));
        let exact: Vec<(Slot, Option<&str>)> = Slot::EVALUABLE
            .iter()
            .map(|&s| (s, if s == Slot::Crew { Some("A") } else { None }))
            .collect();
        let n = null_prf(&[pred("c", &exact)], std::slice::from_ref(&c)).unwrap();
        assert_eq!((n.p, n.r), (1.0, 1.0));
        let mut half = exact.clone();
        for e in half.iter_mut().filter(|e| e.0 != Slot::Crew).take(7) {
            e.1 = Some("A");
        }
        let n = null_prf(&[pred("c", &half)], &[c]).unwrap();
        assert_eq!(n.r, 0.0);
    }

    #[test]
    fn mrr_examples() {
        assert!((mrr_of_ranks(&[Some(1), Some(2), Some(4)]) - 0.583_333_333_333_333_4).abs() < 1e-12);
        assert_eq!(mrr_of_ranks(&[Some(1); 4]), 1.0);
        assert_eq!(mrr_of_ranks(&[None, Some(1)]), 0.5);
    }

    #[test]
    fn mrr_over_pairs_counts_null_rank() {
        let c = cluster("c", &["A", "B"], &[(Slot::Crew, &["B"])]);
        let mut p = pred("c", &[]);
        for s in Slot::EVALUABLE {
            let ranking = if s == Slot::Crew {
                vec![(Some("A".into()), 0.5), (Some("B".into()), 0.3), (None, 0.2)]
            } else {
                vec![(None, 0.6), (Some("A".into()), 0.4)]
            };
            p.slots.insert(
                s,
                SlotPrediction {
                    top: ranking[0].0.clone(),
                    ranking,
                },
            );
        }
        let m = mrr(&[p], &[c]).unwrap();
        assert!((m - (0.5 + 7.0) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn report_and_record_round_trip() {
        let c = cluster("c", &["A", "B"], &[(Slot::Crew, &["A"]), (Slot::Operator, &["B"])]);
        let table = ValueScoreTable {
            slots: Slot::EVALUABLE.to_vec(),
            values: vec!["A".into(), "B".into()],
            scores: vec![vec![0.6; 8], vec![0.2; 8]],
            null: Some(vec![0.2; 8]),
        };
        let p = ClusterPrediction::from_table("c", &table);
        let rec = PredictionRecord::from_prediction(&p);
        assert_eq!(rec.scores["crew"][NULL_KEY], 0.2);
        assert_eq!(rec.to_prediction().unwrap(), p);
        let r = evaluate(&[p], &[c]).unwrap();
        assert_eq!(r.n_queries, 8);
        assert_eq!(r.per_slot["crew"], (1, 1));
        assert_eq!(r.per_slot["operator"], (0, 1));
        assert_eq!(r.per_slot["fatalities"], (0, 0));
        let text = format_per_slot_table(&r);
        assert_eq!(text.lines().count(), 9);
        let t2 = format_systems_table(&[("RAC".into(), r)]);
        assert!(t2.contains("RAC"));
    }

    #[test]
    fn report_is_micro_average() {
        let c1 = cluster("c1", &["A"], &[(Slot::Crew, &["A"])]);
        let c2 = cluster("c2", &["A", "B"], &[(Slot::Crew, &["B"]), (Slot::Operator, &["A"])]);
        let p1 = pred("c1", &[(Slot::Crew, Some("A"))]);
        let p2 = pred("c2", &[(Slot::Crew, Some("A")), (Slot::Operator, Some("A"))]);
        let r = evaluate(&[p1, p2], &[c1, c2]).unwrap();
        // 2 of 3 findable pairs, 2 of 3 value predictions
        assert!((r.score.r - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.score.p - 2.0 / 3.0).abs() < 1e-12);
    }
}
