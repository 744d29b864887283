//! Forward pass from a cluster to value-level scores.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{date_weights, topic_weights, AggregationConfig, AggregationMode, MentionWeights, ValueScoreTable, WeightSource};
use crate::compute::checkpoint::{Checkpoint, CheckpointError};
use crate::compute::{AdamState, Axis, ComputeError, Tape, Tensor, Var, WeightedIndex};
use crate::constraints::{graph_from_table, run_bp, BpIterations, ConstraintError};
use crate::corpus::{Cluster, Slot};
use crate::encoder::{encode_document, uniform, DropoutMode, EmbeddingTable, EncoderParams, EncoderShape, EncoderVars};
use crate::scalar::Scalar;

/// Slots the model scores: the evaluable ones.
pub const MODEL_SLOTS: [Slot; 8] = Slot::EVALUABLE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Loss on aggregated value scores.
    ValueLevel,
    /// Mention classifier with an extra null slot, trained on hard labels.
    MentionLevel,
}

/// How a mention classifier's per-mention slot distributions become
/// value predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionDecoding {
    /// Best mention among those classified into the slot, else null.
    None,
    Max,
    Sum,
}

impl MentionDecoding {
    pub const ALL: [MentionDecoding; 3] = [MentionDecoding::None, MentionDecoding::Max, MentionDecoding::Sum];
}

impl fmt::Display for MentionDecoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MentionDecoding::None => "none",
            MentionDecoding::Max => "max",
            MentionDecoding::Sum => "sum",
        })
    }
}

impl FromStr for MentionDecoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "max" => Ok(Self::Max),
            "sum" => Ok(Self::Sum),
            o => Err(format!("unknown mention decoding {:?}", o)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub shape: EncoderShape,
    pub aggregation: AggregationConfig,
    pub loss_mode: LossMode,
    pub mention_decoding: MentionDecoding,
}

impl ModelConfig {
    /// Rows of the slot embedding matrix; the mention classifier adds null.
    pub fn query_rows(&self) -> usize {
        match self.loss_mode {
            LossMode::ValueLevel => MODEL_SLOTS.len(),
            LossMode::MentionLevel => MODEL_SLOTS.len() + 1,
        }
    }

    pub fn null_row(&self) -> bool {
        self.loss_mode == LossMode::ValueLevel && self.aggregation.null_enabled
    }
}

pub const PARAM_NAMES: [&str; 6] = ["conv1_filters", "conv1_bias", "conv2_filters", "conv2_bias", "mask_vector", "slot_embeddings"];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: EncoderParams<T>,
    pub mask: Tensor<T>,
    pub slots: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub encoder: EncoderVars,
    pub mask: Var,
    pub slots: Var,
}

impl ParamVars {
    pub fn all(&self) -> [Var; 6] {
        let e = &self.encoder;
        [e.conv1_filters, e.conv1_bias, e.conv2_filters, e.conv2_bias, self.mask, self.slots]
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, init_scale: f64, rng: &mut R) -> Self {
        let encoder = EncoderParams::init(&cfg.shape, init_scale, rng);
        let mask = uniform(&[cfg.shape.embed_dim], init_scale, rng);
        let slots = uniform(&[cfg.query_rows(), cfg.shape.repr_dim()], init_scale, rng);
        Self { encoder, mask, slots }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 6] {
        let e = &self.encoder;
        [&e.conv1_filters, &e.conv1_bias, &e.conv2_filters, &e.conv2_bias, &self.mask, &self.slots]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 6] {
        let e = &mut self.encoder;
        [
            &mut e.conv1_filters,
            &mut e.conv1_bias,
            &mut e.conv2_filters,
            &mut e.conv2_bias,
            &mut self.mask,
            &mut self.slots,
        ]
    }

    pub fn on_tape(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars {
            encoder: self.encoder.on_tape(tape),
            mask: tape.param(self.mask.clone()),
            slots: tape.param(self.slots.clone()),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn to_checkpoint(&self, seed: u64, adam: Option<&AdamState<T>>, meta: serde_json::Value) -> Checkpoint {
        Checkpoint::new(seed, PARAM_NAMES.iter().copied().zip(self.tensors()), adam, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        Ok(Self {
            encoder: EncoderParams {
                conv1_filters: ck.param(PARAM_NAMES[0])?,
                conv1_bias: ck.param(PARAM_NAMES[1])?,
                conv2_filters: ck.param(PARAM_NAMES[2])?,
                conv2_bias: ck.param(PARAM_NAMES[3])?,
            },
            mask: ck.param(PARAM_NAMES[4])?,
            slots: ck.param(PARAM_NAMES[5])?,
        })
    }
}

#[derive(Debug, Clone)]
struct DocIndex<T> {
    embedded: Tensor<T>,
    masked: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MentionRef {
    pub doc: usize,
    pub token: usize,
    /// Row in the attention domain.
    pub position: usize,
    /// Index into [`ClusterIndex::values`].
    pub value: usize,
}

/// Parameter-independent bookkeeping for one cluster.
///
/// The attention domain holds every token except the non-initial tokens of
/// multi-token mentions, so a mention is represented once, by its first
/// token, and mention mass plus null mass is the whole distribution.
#[derive(Debug, Clone)]
pub struct ClusterIndex<T> {
    pub cluster_id: String,
    docs: Vec<DocIndex<T>>,
    /// `(doc, token)` of each domain row.
    pub domain: Vec<(usize, usize)>,
    /// Row in the concatenated encoder output for each domain row.
    domain_rows: Vec<usize>,
    /// Domain rows of each document, contiguous.
    pub doc_ranges: Vec<Range<usize>>,
    pub values: Vec<String>,
    pub mentions: Vec<MentionRef>,
    /// Domain rows outside every mention.
    pub null_positions: Vec<usize>,
}

impl<T: Scalar> ClusterIndex<T> {
    pub fn new(cluster: &Cluster, table: &EmbeddingTable<T>) -> Self {
        let values: Vec<String> = cluster.mentioned_values().into_iter().map(str::to_string).collect();
        let mut docs = Vec::new();
        let mut domain = Vec::new();
        let mut domain_rows = Vec::new();
        let mut doc_ranges = Vec::new();
        let mut mentions = Vec::new();
        let mut null_positions = Vec::new();
        let mut offset = 0;
        for (di, d) in cluster.documents.iter().enumerate() {
            let (embedded, masked) = table.document_rows(d);
            docs.push(DocIndex { embedded, masked });
            let mut interior = vec![false; d.len()];
            let mut first = vec![None; d.len()];
            for m in &d.mentions {
                first[m.start] = Some(values.binary_search(&m.value_id).expect("mentioned value listed"));
                for t in m.start + 1..m.end {
                    interior[t] = true;
                }
            }
            let start = domain.len();
            for t in 0..d.len() {
                if interior[t] {
                    continue;
                }
                let position = domain.len();
                domain.push((di, t));
                domain_rows.push(offset + t);
                match first[t] {
                    Some(value) => mentions.push(MentionRef {
                        doc: di,
                        token: t,
                        position,
                        value,
                    }),
                    None => null_positions.push(position),
                }
            }
            doc_ranges.push(start..domain.len());
            offset += d.len();
        }
        Self {
            cluster_id: cluster.cluster_id.clone(),
            docs,
            domain,
            domain_rows,
            doc_ranges,
            values,
            mentions,
            null_positions,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.binary_search_by(|v| v.as_str().cmp(value)).ok()
    }

    /// Weight of each domain row under a per-token weighting.
    pub fn position_weights(&self, w: &MentionWeights) -> Vec<T> {
        self.domain.iter().map(|&(d, t)| T::lit(w.get(d, t))).collect()
    }

    fn groups(&self, weights: &[T], null: bool) -> Vec<Vec<WeightedIndex<T>>> {
        let mut groups: Vec<Vec<WeightedIndex<T>>> = vec![Vec::new(); self.values.len()];
        for m in &self.mentions {
            groups[m.value].push((m.position, weights[m.position]));
        }
        if null {
            groups.push(self.null_positions.iter().map(|&p| (p, weights[p])).collect());
        }
        groups
    }
}

/// Aggregation weights for a cluster. Date weights need gold and fall back
/// to unit weights without it.
pub fn aggregation_weights(cluster: &Cluster, cfg: &AggregationConfig, use_gold: bool) -> MentionWeights {
    match cfg.effective_weights() {
        WeightSource::Unit => MentionWeights::unit(cluster),
        WeightSource::Topic => topic_weights(cluster),
        WeightSource::Date => date_weights(cluster, use_gold.then_some(&cluster.gold)).1,
    }
}

/// Tape outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Domain rows × query rows; attention, or per-mention slot
    /// probabilities for the mention classifier (mentions × query rows).
    pub scores: Var,
    /// Value rows (null last when present) × model slots. Absent for the
    /// mention classifier.
    pub table: Option<Var>,
}

/// Encoder output restricted to the attention domain.
fn domain_repr<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    index: &ClusterIndex<T>,
    dropout: DropoutMode,
    rng: &mut R,
) -> Result<Var, ComputeError> {
    let mut parts = Vec::new();
    for d in &index.docs {
        let base = tape.constant(d.embedded.clone());
        let x = if d.masked.is_empty() {
            base
        } else {
            let n = d.embedded.rows();
            let m = tape.scatter_rows(vars.mask, d.masked.clone(), n)?;
            tape.add(base, m)?
        };
        if let Some(r) = encode_document(tape, x, &vars.encoder, dropout, rng)? {
            parts.push(r);
        }
    }
    if parts.is_empty() {
        return Err(ComputeError::EmptyInput { op: "forward" });
    }
    let all = tape.concat_rows(&parts)?;
    let groups = index.domain_rows.iter().map(|&r| vec![(r, T::one())]).collect();
    tape.gather_sum(all, groups)
}

pub fn forward<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    index: &ClusterIndex<T>,
    cfg: &ModelConfig,
    weights: &[T],
    dropout: DropoutMode,
    rng: &mut R,
) -> Result<Forward, ComputeError> {
    let repr = domain_repr(tape, vars, index, dropout, rng)?;
    if cfg.loss_mode == LossMode::MentionLevel {
        if index.mentions.is_empty() {
            return Err(ComputeError::EmptyInput { op: "mention classifier" });
        }
        let groups = index.mentions.iter().map(|m| vec![(m.position, T::one())]).collect();
        let rows = tape.gather_sum(repr, groups)?;
        let u = tape.matmul_t(rows, vars.slots)?;
        let p = tape.softmax(u, Axis::Cols)?;
        return Ok(Forward { scores: p, table: None });
    }

    let u = tape.matmul_t(repr, vars.slots)?;
    let attention = if cfg.aggregation.mode == AggregationMode::PerDocumentSoftmaxSum {
        let mut parts = Vec::new();
        for r in index.doc_ranges.iter().filter(|r| !r.is_empty()) {
            let block = tape.slice_rows(u, r.start, r.len())?;
            parts.push(tape.softmax(block, Axis::Rows)?);
        }
        tape.concat_rows(&parts)?
    } else {
        tape.softmax(u, Axis::Rows)?
    };
    let groups = index.groups(weights, cfg.null_row());
    let table = match cfg.aggregation.mode {
        AggregationMode::Max => tape.gather_max(attention, &groups)?,
        _ => tape.gather_sum(attention, groups)?,
    };
    Ok(Forward {
        scores: attention,
        table: Some(table),
    })
}

fn table_from_matrix<T: Scalar>(m: &Tensor<T>, values: &[String], null: bool) -> ValueScoreTable<T> {
    let nv = values.len();
    ValueScoreTable {
        slots: MODEL_SLOTS.to_vec(),
        values: values.to_vec(),
        scores: (0..nv).map(|v| m.row(v).to_vec()).collect(),
        null: null.then(|| m.row(nv).to_vec()),
    }
}

/// Value tables from per-mention slot distributions (`mentions × 9`).
pub fn mention_tables<T: Scalar>(probs: &Tensor<T>, index: &ClusterIndex<T>, decoding: MentionDecoding) -> ValueScoreTable<T> {
    let ns = MODEL_SLOTS.len();
    let nv = index.values.len();
    let mut scores = vec![vec![T::zero(); ns]; nv];
    let mut null = None;
    match decoding {
        MentionDecoding::Sum | MentionDecoding::Max => {
            for (k, m) in index.mentions.iter().enumerate() {
                for (s, score) in scores[m.value].iter_mut().enumerate() {
                    let p = probs.get2(k, s);
                    *score = if decoding == MentionDecoding::Sum { *score + p } else { score.max(p) };
                }
            }
        }
        MentionDecoding::None => {
            let mut any = vec![false; ns];
            for (k, m) in index.mentions.iter().enumerate() {
                let row = probs.row(k);
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                if best < ns {
                    any[best] = true;
                    scores[m.value][best] = scores[m.value][best].max(row[best]);
                }
            }
            null = Some(any.iter().map(|&a| if a { T::zero() } else { T::one() }).collect());
        }
    }
    ValueScoreTable {
        slots: MODEL_SLOTS.to_vec(),
        values: index.values.clone(),
        scores,
        null,
    }
}

/// Inference-time value scores for one cluster, optionally refined by
/// belief propagation.
pub fn predict_table<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    cluster: &Cluster,
    index: &ClusterIndex<T>,
    bp: BpIterations,
) -> Result<ValueScoreTable<T>, PredictError> {
    if index.is_empty() {
        return Ok(empty_table(cfg));
    }
    let mut tape = Tape::new();
    let vars = params.on_tape(&mut tape);
    let weights = index.position_weights(&aggregation_weights(cluster, &cfg.aggregation, false));
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let table = match cfg.loss_mode {
        LossMode::MentionLevel if index.mentions.is_empty() => empty_table(cfg),
        LossMode::MentionLevel => {
            let f = forward(&mut tape, &vars, index, cfg, &weights, DropoutMode::INFERENCE, &mut rng)?;
            mention_tables(tape.value(f.scores), index, cfg.mention_decoding)
        }
        LossMode::ValueLevel => {
            let f = forward(&mut tape, &vars, index, cfg, &weights, DropoutMode::INFERENCE, &mut rng)?;
            let t = f.table.expect("value-level forward has a table");
            table_from_matrix(tape.value(t), &index.values, cfg.null_row())
        }
    };
    apply_bp(table, bp)
}

fn empty_table<T: Scalar>(cfg: &ModelConfig) -> ValueScoreTable<T> {
    ValueScoreTable {
        slots: MODEL_SLOTS.to_vec(),
        values: Vec::new(),
        scores: Vec::new(),
        null: cfg.null_row().then(|| vec![T::one(); MODEL_SLOTS.len()]),
    }
}

/// Local log-odds for belief propagation: each slot column is normalized
/// to unit mass, so that local beliefs equal the normalized scores.
pub fn local_logits<T: Scalar>(table: &ValueScoreTable<T>) -> ValueScoreTable<T> {
    let eps = T::prob_eps();
    let mut out = table.clone();
    for s in 0..table.slots.len() {
        let total = table.scores.iter().map(|r| r[s]).chain(table.null.as_ref().map(|n| n[s])).fold(T::zero(), |a, b| a + b);
        let total = if total > T::zero() { total } else { T::one() };
        let logit = |x: T| {
            let p = (x / total).max(eps).min(T::one() - eps);
            (p / (T::one() - p)).ln()
        };
        for r in out.scores.iter_mut() {
            r[s] = logit(r[s]);
        }
        if let Some(n) = out.null.as_mut() {
            n[s] = logit(n[s]);
        }
    }
    out
}

/// Replaces scores with constrained beliefs; zero rounds leaves the table
/// as it is.
pub fn apply_bp<T: Scalar>(table: ValueScoreTable<T>, bp: BpIterations) -> Result<ValueScoreTable<T>, PredictError> {
    if bp == BpIterations::Fixed(0) || (table.values.is_empty() && table.null.is_none()) {
        return Ok(table);
    }
    let graph = graph_from_table(&local_logits(&table))?;
    Ok(run_bp(&graph, bp)?.to_table(&graph))
}

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// Gold rows of the value table for each model slot: value indices, the
/// null row, or `None` when the slot cannot be scored.
pub fn gold_rows<T: Scalar>(cluster: &Cluster, index: &ClusterIndex<T>, null_row: bool) -> BTreeMap<Slot, Option<Vec<usize>>> {
    MODEL_SLOTS
        .iter()
        .map(|&s| {
            let rows = match cluster.gold_for(s) {
                None => null_row.then(|| vec![index.values.len()]),
                Some(g) => {
                    let rows: Vec<usize> = g.iter().filter_map(|v| index.value_index(v)).collect();
                    (!rows.is_empty()).then_some(rows)
                }
            };
            (s, rows)
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{Document, EntityType, Mention, Split, Token};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    pub(crate) fn tiny_cluster() -> Cluster {
        let words = ["the", "plane", "carried", "12", "people", "and", "Air", "Foo", "ran", "it"];
        let tokens = words
            .iter()
            .enumerate()
            .map(|(i, w)| Token {
                text: w.to_string(),
                index_in_doc: i,
                sentence_id: 0,
            })
            .collect();
        let m = |start, end, v: &str, e| Mention {
            doc_id: "d0".into(),
            start,
            end,
            value_id: v.into(),
            entity_type: e,
            is_flight_number: false,
            is_topical_flight: false,
        };
        let doc = Document {
            doc_id: "d0".into(),
            tokens,
            mentions: vec![m(3, 4, "n12", EntityType::Number), m(6, 8, "air_foo", EntityType::Airline)],
            dateline: None,
            order_index: 0,
            sentence_count: 1,
            topical: vec![true],
        };
        let mut gold = BTreeMap::new();
        gold.insert(Slot::Passengers, BTreeSet::from(["n12".to_string()]));
        gold.insert(Slot::Operator, BTreeSet::from(["air_foo".to_string()]));
        Cluster {
            cluster_id: "tiny".into(),
            split: Split::Train,
            documents: vec![doc],
            gold,
            candidate_values: ["n12", "air_foo"].iter().map(|s| s.to_string()).collect(),
        }
    }

    fn cfg(mode: AggregationConfig, loss: LossMode) -> ModelConfig {
        ModelConfig {
            shape: EncoderShape {
                embed_dim: 6,
                widths: [3, 3],
                dims: [5, 4],
            },
            aggregation: mode,
            loss_mode: loss,
            mention_decoding: MentionDecoding::Sum,
        }
    }

    #[test]
    fn domain_drops_mention_interiors() {
        let c = tiny_cluster();
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        let idx = ClusterIndex::new(&c, &table);
        assert_eq!(idx.domain.len(), 9);
        assert_eq!(idx.values, vec!["air_foo", "n12"]);
        assert_eq!(idx.mentions.len(), 2);
        assert_eq!(idx.null_positions.len(), 7);
        assert!(!idx.domain.contains(&(0, 7)));
    }

    #[test]
    fn value_and_null_mass_sum_to_one() {
        let c = tiny_cluster();
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        let idx = ClusterIndex::new(&c, &table);
        let cfg = cfg(AggregationConfig::sum(), LossMode::ValueLevel);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParams::<f64>::init(&cfg, 0.5, &mut rng);
        let t = predict_table(&params, &cfg, &c, &idx, BpIterations::Fixed(0)).unwrap();
        for s in 0..MODEL_SLOTS.len() {
            let total: f64 = t.scores.iter().map(|r| r[s]).sum::<f64>() + t.null.as_ref().unwrap()[s];
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn per_document_mass_counts_documents() {
        let mut c = tiny_cluster();
        let mut d2 = c.documents[0].clone();
        d2.doc_id = "d1".into();
        d2.order_index = 1;
        c.documents.push(d2);
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        let idx = ClusterIndex::new(&c, &table);
        let cfg = cfg(AggregationConfig::per_document(), LossMode::ValueLevel);
        let params = ModelParams::<f64>::init(&cfg, 0.5, &mut ChaCha8Rng::seed_from_u64(2));
        let t = predict_table(&params, &cfg, &c, &idx, BpIterations::Fixed(0)).unwrap();
        let total: f64 = t.scores.iter().map(|r| r[0]).sum::<f64>() + t.null.as_ref().unwrap()[0];
        assert!((total - 2.0).abs() < 1e-9);
    }

    #[test]
    fn mention_classifier_tables() {
        let c = tiny_cluster();
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        let idx = ClusterIndex::new(&c, &table);
        let cfg = cfg(AggregationConfig::sum(), LossMode::MentionLevel);
        let params = ModelParams::<f64>::init(&cfg, 0.5, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(params.slots.rows(), 9);
        let t = predict_table(&params, &cfg, &c, &idx, BpIterations::Fixed(0)).unwrap();
        assert!(t.null.is_none());
        let row_sum: f64 = t.scores.iter().map(|r| r.iter().sum::<f64>()).sum();
        assert!(row_sum <= 2.0 + 1e-12);

        let probs = Tensor::from_rows(&[
            vec![0.1, 0.0, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 0.3],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let none = mention_tables(&probs, &idx, MentionDecoding::None);
        let d = none.decode_top1();
        // first mention is n12 (position 3), classified into the sixth slot
        assert_eq!(d[&MODEL_SLOTS[5]].value_id(), Some("n12"));
        assert_eq!(d[&MODEL_SLOTS[0]].value_id(), None);
    }

    #[test]
    fn gold_rows_handle_null_and_unfindable() {
        let mut c = tiny_cluster();
        c.gold.insert(Slot::Crew, BTreeSet::from(["n99".to_string()]));
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        let idx = ClusterIndex::new(&c, &table);
        let g = gold_rows(&c, &idx, true);
        assert_eq!(g[&Slot::Passengers], Some(vec![1]));
        assert_eq!(g[&Slot::Crew], None);
        assert_eq!(g[&Slot::Fatalities], Some(vec![2]));
        assert_eq!(gold_rows(&c, &idx, false)[&Slot::Fatalities], None);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = cfg(AggregationConfig::sum(), LossMode::ValueLevel);
        let params = ModelParams::<f64>::init(&cfg, 0.05, &mut ChaCha8Rng::seed_from_u64(4));
        let ck = params.to_checkpoint(4, None, serde_json::Value::Null);
        let back = ModelParams::<f64>::from_checkpoint(&Checkpoint::from_json(&ck.to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(params, back);
    }
}
