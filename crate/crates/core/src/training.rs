//! Losses, the training loop with early stopping, and gradient checking.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::{AggregationConfig, AggregationMode};
use crate::compute::{AdamConfig, AdamState, Axis, ComputeError, Tape, Tensor, Var};
use crate::constraints::{bp_on_tape, BpIterations};
use crate::corpus::{Cluster, Slot};
use crate::encoder::{DropoutMode, EmbeddingTable, EncoderShape};
use crate::evaluation::{modified_prf, ClusterPrediction, EvalError};
use crate::model::{
    aggregation_weights, forward, gold_rows, predict_table, ClusterIndex, LossMode, MentionDecoding, ModelConfig, ModelParams, PredictError,
    MODEL_SLOTS, PARAM_NAMES,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no trainable clusters")]
    NoData,
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training diverged at epoch {epoch} on cluster {cluster_id}: {reason}{}", dump.as_ref().map(|p| format!(" (state written to {})", p.display())).unwrap_or_default())]
    Divergence {
        epoch: usize,
        cluster_id: String,
        reason: String,
        dump: Option<PathBuf>,
    },
}

/// Training hyperparameters. Unknown keys are rejected when read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub lr: f64,
    pub l2: f64,
    pub keep_prob: f64,
    pub embed_dim: usize,
    pub widths: [usize; 2],
    pub dims: [usize; 2],
    /// Pooling over positions is not supported; must stay false.
    pub max_pooling: bool,
    /// `max`, `sum`, `topic`, `date` or `per-doc`.
    pub aggregation: String,
    /// Whether the null value competes in value-level models.
    pub null: bool,
    pub loss_mode: LossMode,
    pub mention_decoding: MentionDecoding,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub init_scale: f64,
    /// Belief propagation rounds applied inside the training loss.
    pub bp_train_rounds: usize,
    /// Extra development clusters assembled from leftover training documents.
    pub dev_extra_clusters: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: 0.003,
            l2: 0.01,
            keep_prob: 0.8,
            embed_dim: 32,
            widths: [10, 5],
            dims: [10, 10],
            max_pooling: false,
            aggregation: "sum".into(),
            null: true,
            loss_mode: LossMode::ValueLevel,
            mention_decoding: MentionDecoding::Sum,
            seed: 0,
            max_epochs: 200,
            patience: 10,
            init_scale: 0.05,
            bp_train_rounds: 0,
            dev_extra_clusters: 0,
        }
    }
}

impl Hyperparams {
    pub fn from_toml(s: &str) -> Result<Self, TrainError> {
        toml::from_str(s).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("hyperparameters serialize")
    }

    pub fn aggregation_config(&self) -> Result<AggregationConfig, TrainError> {
        let mut a: AggregationConfig = self.aggregation.parse().map_err(|e: crate::aggregator::AggregationError| TrainError::Config(e.to_string()))?;
        a.null_enabled = self.null;
        Ok(a)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            l2: self.l2,
            ..AdamConfig::default()
        }
    }

    /// Checks ranges and builds the model configuration.
    pub fn model_config(&self) -> Result<ModelConfig, TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.max_pooling {
            return bad("max_pooling is not supported".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad(format!("keep_prob must lie in (0, 1], got {}", self.keep_prob));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init_scale must be positive, got {}", self.init_scale));
        }
        if self.embed_dim == 0 || self.widths.contains(&0) || self.dims.contains(&0) {
            return bad("embed_dim, widths and dims must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        let aggregation = self.aggregation_config()?;
        aggregation.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if self.bp_train_rounds > 0 && self.loss_mode == LossMode::MentionLevel {
            return bad("bp_train_rounds needs a value-level loss".into());
        }
        Ok(ModelConfig {
            shape: EncoderShape {
                embed_dim: self.embed_dim,
                widths: self.widths,
                dims: self.dims,
            },
            aggregation,
            loss_mode: self.loss_mode,
            mention_decoding: self.mention_decoding,
        })
    }
}

/// Whether a value-level loss divides by the slot's total mass. Sum-type
/// aggregations already produce one unit of mass per slot.
pub fn loss_normalizes(cfg: &AggregationConfig) -> bool {
    matches!(cfg.mode, AggregationMode::Max | AggregationMode::PerDocumentSoftmaxSum)
}

/// Negative log of the gold mass, averaged over scorable slots.
///
/// `table` is `rows × slots`; `gold` maps each slot to its gold rows or to
/// `None` when the slot is skipped. With `normalize`, each slot's gold mass
/// is divided by the slot's total. Returns `None` when nothing is scorable.
pub fn value_loss<T: Scalar>(
    tape: &mut Tape<T>,
    table: Var,
    gold: &BTreeMap<Slot, Option<Vec<usize>>>,
    normalize: bool,
) -> Result<Option<Var>, ComputeError> {
    let shape = tape.value(table).shape().to_vec();
    if shape.len() != 2 {
        return Err(ComputeError::ShapeMismatch {
            op: "value_loss",
            detail: format!("expected a matrix, got {:?}", shape),
        });
    }
    let (nr, ns) = (shape[0], shape[1]);
    let mut gold_groups = Vec::new();
    let mut all_groups = Vec::new();
    for (si, slot) in MODEL_SLOTS.iter().enumerate().take(ns) {
        let Some(Some(rows)) = gold.get(slot) else { continue };
        if let Some(&r) = rows.iter().find(|&&r| r >= nr) {
            return Err(ComputeError::IndexOutOfRange { op: "value_loss", index: r, len: nr });
        }
        gold_groups.push(rows.iter().map(|&r| (r * ns + si, T::one())).collect::<Vec<_>>());
        all_groups.push((0..nr).map(|r| (r * ns + si, T::one())).collect::<Vec<_>>());
    }
    if gold_groups.is_empty() {
        return Ok(None);
    }
    let eps = T::prob_eps();
    let flat = tape.pick(table, (0..nr * ns).collect())?;
    let g = tape.gather_sum(flat, gold_groups)?;
    let g = tape.clamp(g, eps, T::max_value())?;
    let log_g = tape.log(g)?;
    let per_slot = if normalize {
        let a = tape.gather_sum(flat, all_groups)?;
        let a = tape.clamp(a, eps, T::max_value())?;
        let log_a = tape.log(a)?;
        tape.sub(log_a, log_g)?
    } else {
        tape.scale(log_g, -T::one())?
    };
    Ok(Some(tape.mean(per_slot)?))
}

/// Mention-classifier training instances `(mention, class)`: one per gold
/// slot the mention's value fills, else one for the null class.
pub fn mention_labels<T: Scalar>(cluster: &Cluster, index: &ClusterIndex<T>) -> Vec<(usize, usize)> {
    let null_class = MODEL_SLOTS.len();
    let mut out = Vec::new();
    for (k, m) in index.mentions.iter().enumerate() {
        let value = &index.values[m.value];
        let before = out.len();
        for (si, &s) in MODEL_SLOTS.iter().enumerate() {
            if cluster.gold_for(s).is_some_and(|g| g.contains(value)) {
                out.push((k, si));
            }
        }
        if out.len() == before {
            out.push((k, null_class));
        }
    }
    out
}

/// Mean negative log-probability of the labeled classes.
pub fn mention_loss<T: Scalar>(tape: &mut Tape<T>, probs: Var, labels: &[(usize, usize)]) -> Result<Option<Var>, ComputeError> {
    if labels.is_empty() {
        return Ok(None);
    }
    let cols = tape.value(probs).cols();
    let p = tape.pick(probs, labels.iter().map(|&(k, c)| k * cols + c).collect())?;
    let p = tape.clamp(p, T::prob_eps(), T::one())?;
    let l = tape.log(p)?;
    let m = tape.mean(l)?;
    Ok(Some(tape.scale(m, -T::one())?))
}

/// A training cluster with everything the loss needs precomputed.
pub struct Prepared<T> {
    pub index: ClusterIndex<T>,
    pub weights: Vec<T>,
    pub gold: BTreeMap<Slot, Option<Vec<usize>>>,
    pub labels: Vec<(usize, usize)>,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(cluster: &Cluster, table: &EmbeddingTable<T>, cfg: &ModelConfig) -> Self {
        let index = ClusterIndex::new(cluster, table);
        let weights = index.position_weights(&aggregation_weights(cluster, &cfg.aggregation, true));
        let gold = gold_rows(cluster, &index, cfg.null_row());
        let labels = mention_labels(cluster, &index);
        Self { index, weights, gold, labels }
    }
}

/// Records one cluster's loss on `tape`; `None` when the cluster has
/// nothing to learn from.
pub fn cluster_loss<T: Scalar, R: rand::Rng + ?Sized>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    prep: &Prepared<T>,
    cfg: &ModelConfig,
    bp_rounds: usize,
    dropout: DropoutMode,
    rng: &mut R,
) -> Result<Option<(Var, [Var; 6])>, ComputeError> {
    if prep.index.is_empty() {
        return Ok(None);
    }
    if cfg.loss_mode == LossMode::MentionLevel && prep.labels.is_empty() {
        return Ok(None);
    }
    let vars = params.on_tape(tape);
    let f = forward(tape, &vars, &prep.index, cfg, &prep.weights, dropout, rng)?;
    let loss = match f.table {
        None => mention_loss(tape, f.scores, &prep.labels)?,
        Some(table) if bp_rounds > 0 => {
            let phi = logits_on_tape(tape, table)?;
            let b = bp_on_tape(tape, phi, cfg.null_row(), bp_rounds)?;
            value_loss(tape, b, &prep.gold, false)?
        }
        Some(table) => value_loss(tape, table, &prep.gold, loss_normalizes(&cfg.aggregation))?,
    };
    Ok(loss.map(|l| (l, vars.all())))
}

/// Tape version of [`crate::model::local_logits`].
pub fn logits_on_tape<T: Scalar>(tape: &mut Tape<T>, table: Var) -> Result<Var, ComputeError> {
    let shape = tape.value(table).shape().to_vec();
    let eps = T::prob_eps();
    let others = tape.sum_others(table, Axis::Rows)?;
    let total = tape.add(table, others)?;
    let total = tape.clamp(total, eps, T::max_value())?;
    let inv = tape.recip(total)?;
    let p = tape.mul(table, inv)?;
    let p = tape.clamp(p, eps, T::one() - eps)?;
    let ones = tape.constant(Tensor::filled(&shape, T::one()));
    let q = tape.sub(ones, p)?;
    let lp = tape.log(p)?;
    let lq = tape.log(q)?;
    tape.sub(lp, lq)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where to write the parameters if training diverges.
    pub dump_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
    pub dev_f1_bp1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: Option<f64>,
    pub stopped_early: bool,
}

pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub config: ModelConfig,
    pub report: TrainReport,
}

/// Predictions for a set of clusters, computed in parallel.
pub fn predict_all<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    clusters: &[Cluster],
    table: &EmbeddingTable<T>,
    bp: BpIterations,
) -> Result<Vec<ClusterPrediction>, PredictError> {
    clusters
        .par_iter()
        .map(|c| {
            let index = ClusterIndex::new(c, table);
            let t = predict_table(params, cfg, c, &index, bp)?;
            Ok(ClusterPrediction::from_table(&c.cluster_id, &t))
        })
        .collect()
}

fn dev_f1<T: Scalar>(params: &ModelParams<T>, cfg: &ModelConfig, dev: &[Cluster], table: &EmbeddingTable<T>, bp: BpIterations) -> Result<f64, TrainError> {
    let preds = predict_all(params, cfg, dev, table, bp)?;
    Ok(modified_prf(&preds, dev)?.f1)
}

/// Trains with Adam, one update per cluster, clusters shuffled each epoch.
///
/// When `dev` is non-empty, the parameters with the best development
/// modified F1 are returned, and training stops after `patience` epochs
/// without improvement.
pub fn train<T: Scalar>(
    train: &[Cluster],
    dev: &[Cluster],
    table: &EmbeddingTable<T>,
    hp: &Hyperparams,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>, TrainError> {
    let cfg = hp.model_config()?;
    if table.dim() != hp.embed_dim {
        return Err(TrainError::Config(format!("embed_dim {} does not match embeddings of size {}", hp.embed_dim, table.dim())));
    }
    let prepared: Vec<Prepared<T>> = train.par_iter().map(|c| Prepared::new(c, table, &cfg)).collect();
    if prepared.iter().all(|p| p.index.is_empty()) {
        return Err(TrainError::NoData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut params = ModelParams::<T>::init(&cfg, hp.init_scale, &mut rng);
    let mut adam = AdamState::new(params.tensors());
    let adam_cfg = hp.adam();
    let dropout = DropoutMode {
        keep_prob: hp.keep_prob,
        training: true,
    };

    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::new();
    let mut best = (params.clone(), adam.clone(), 0usize, None::<f64>);
    let mut since = 0;
    let mut stopped_early = false;
    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for &i in &order {
            let prep = &prepared[i];
            let mut tape = Tape::new();
            let step = cluster_loss(&mut tape, &params, prep, &cfg, hp.bp_train_rounds, dropout, &mut rng);
            let diverged = |reason: String, params: &ModelParams<T>, adam: &AdamState<T>| {
                diverge(epoch, &prep.index.cluster_id, reason, params, adam, hp, opts)
            };
            let (loss, vars) = match step {
                Ok(Some(x)) => x,
                Ok(None) => continue,
                Err(e) => return Err(diverged(e.to_string(), &params, &adam)),
            };
            let value = tape.value(loss).item().to_f64_lossy();
            if !value.is_finite() {
                return Err(diverged(format!("loss is {}", value), &params, &adam));
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
            if let Err(e) = adam.step(&mut params.tensors_mut(), &grads, &PARAM_NAMES, &adam_cfg) {
                return Err(diverged(e.to_string(), &params, &adam));
            }
            total += value;
            count += 1;
        }
        let train_loss = if count > 0 { total / count as f64 } else { 0.0 };
        let (f0, f1) = if dev.is_empty() {
            (None, None)
        } else {
            (
                Some(dev_f1(&params, &cfg, dev, table, BpIterations::Fixed(0))?),
                Some(dev_f1(&params, &cfg, dev, table, BpIterations::Fixed(1))?),
            )
        };
        log::info!(
            "epoch {:>3} loss {:.4} dev F1 bp0 {} bp1 {}",
            epoch,
            train_loss,
            f0.map_or("-".into(), |f| format!("{:.4}", f)),
            f1.map_or("-".into(), |f| format!("{:.4}", f))
        );
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev_f1: f0,
            dev_f1_bp1: f1,
        });
        match f0 {
            None => best = (params.clone(), adam.clone(), epoch, None),
            Some(f) if best.3.is_none_or(|b| f > b) => {
                best = (params.clone(), adam.clone(), epoch, Some(f));
                since = 0;
            }
            Some(_) => {
                since += 1;
                if since >= hp.patience.max(1) {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let (params, adam, best_epoch, best_dev_f1) = best;
    Ok(TrainOutcome {
        params,
        adam,
        config: cfg,
        report: TrainReport {
            history,
            best_epoch,
            best_dev_f1,
            stopped_early,
        },
    })
}

fn diverge<T: Scalar>(
    epoch: usize,
    cluster_id: &str,
    reason: String,
    params: &ModelParams<T>,
    adam: &AdamState<T>,
    hp: &Hyperparams,
    opts: &TrainOptions,
) -> TrainError {
    let dump = opts.dump_path.as_ref().and_then(|path| {
        let meta = serde_json::json!({ "diverged_at_epoch": epoch, "cluster_id": cluster_id, "reason": reason, "hyperparams": hp });
        match params.to_checkpoint(hp.seed, Some(adam), meta).save(path) {
            Ok(()) => Some(path.clone()),
            Err(e) => {
                log::error!("could not write divergence dump: {}", e);
                None
            }
        }
    });
    TrainError::Divergence {
        epoch,
        cluster_id: cluster_id.to_string(),
        reason,
        dump,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub loss: f64,
}

/// Relative error with a floor on the denominator so that both-near-zero
/// pairs compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares backpropagated gradients of one cluster's loss with central
/// differences, for every parameter coordinate. Dropout is disabled.
pub fn gradient_check(
    cluster: &Cluster,
    table: &EmbeddingTable<f64>,
    cfg: &ModelConfig,
    params: &ModelParams<f64>,
    bp_rounds: usize,
    h: f64,
) -> Result<GradCheckReport, TrainError> {
    let prep = Prepared::new(cluster, table, cfg);
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let eval = |p: &ModelParams<f64>, rng: &mut rand::rngs::mock::StepRng| -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let (l, _) = cluster_loss(&mut tape, p, &prep, cfg, bp_rounds, DropoutMode::INFERENCE, rng)?.ok_or(TrainError::NoData)?;
        Ok(tape.value(l).item())
    };
    let mut tape = Tape::new();
    let (loss, vars) = cluster_loss(&mut tape, params, &prep, cfg, bp_rounds, DropoutMode::INFERENCE, &mut rng)?.ok_or(TrainError::NoData)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        loss: tape.value(loss).item(),
    };
    let mut probe = params.clone();
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        for i in 0..analytic[k].numel() {
            let orig = probe.tensors()[k].data()[i];
            probe.tensors_mut()[k].data_mut()[i] = orig + h;
            let up = eval(&probe, &mut rng)?;
            probe.tensors_mut()[k].data_mut()[i] = orig - h;
            let dn = eval(&probe, &mut rng)?;
            probe.tensors_mut()[k].data_mut()[i] = orig;
            let numeric = (up - dn) / (2.0 * h);
            let err = relative_error(analytic[k].data()[i], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_cluster;

    fn loss_of(table: Vec<f64>, rows: usize, gold: &[(Slot, Option<Vec<usize>>)], normalize: bool) -> Option<f64> {
        let mut tape = Tape::new();
        let t = tape.param(Tensor::matrix(rows, MODEL_SLOTS.len(), table).unwrap());
        let gold: BTreeMap<_, _> = gold.iter().cloned().collect();
        value_loss(&mut tape, t, &gold, normalize).unwrap().map(|l| tape.value(l).item())
    }

    #[test]
    fn value_loss_examples() {
        let mut t = vec![0.0; 16];
        t[0] = 1.0;
        assert_eq!(loss_of(t.clone(), 2, &[(Slot::AircraftType, Some(vec![0]))], false), Some(0.0));
        t[0] = 0.5;
        let l = loss_of(t, 2, &[(Slot::AircraftType, Some(vec![0]))], false).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn value_loss_sums_gold_and_skips_unscorable() {
        let mut t = vec![0.0; 24];
        // slot 1 (crash site): rows 0 and 2 carry 0.2 and 0.3
        t[1] = 0.2;
        t[2 * 8 + 1] = 0.3;
        let l = loss_of(t.clone(), 3, &[(Slot::CrashSite, Some(vec![0, 2])), (Slot::Crew, None)], false).unwrap();
        assert!((l + 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(loss_of(t, 3, &[(Slot::Crew, None)], false), None);
    }

    #[test]
    fn normalized_loss_divides_by_slot_total() {
        let mut t = vec![0.0; 16];
        t[0] = 0.9;
        t[8] = 0.3;
        let l = loss_of(t, 2, &[(Slot::AircraftType, Some(vec![1]))], true).unwrap();
        assert!((l - (1.2f64 / 0.3).ln()).abs() < 1e-12);
    }

    #[test]
    fn tape_logits_match_table_logits() {
        let data = vec![0.2, 0.0, 0.5, 0.3, 0.3, 0.7];
        let table = crate::aggregator::ValueScoreTable {
            slots: MODEL_SLOTS[..2].to_vec(),
            values: vec!["a".into(), "b".into()],
            scores: vec![data[0..2].to_vec(), data[2..4].to_vec()],
            null: Some(data[4..6].to_vec()),
        };
        let expect = crate::model::local_logits(&table);
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::matrix(3, 2, data).unwrap());
        let l = logits_on_tape(&mut tape, t).unwrap();
        let got = tape.value(l).data().to_vec();
        let want: Vec<f64> = expect.scores.concat().into_iter().chain(expect.null.unwrap()).collect();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{} vs {}", g, w);
        }
    }

    #[test]
    fn mention_labels_use_null_class() {
        let c = tiny_cluster();
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        let idx = ClusterIndex::new(&c, &table);
        let labels = mention_labels(&c, &idx);
        // air_foo fills operator (index 5), n12 fills passengers (index 6)
        assert_eq!(labels.len(), 2);
        assert!(labels.iter().all(|&(_, cl)| cl == 5 || cl == 6));
        let mut c2 = c.clone();
        c2.gold.clear();
        assert!(mention_labels(&c2, &idx).iter().all(|&(_, cl)| cl == 8));
    }

    #[test]
    fn hyperparams_toml() {
        let hp = Hyperparams::from_toml("lr = 0.01\naggregation = \"topic\"\nloss_mode = \"mention_level\"\n").unwrap();
        assert_eq!(hp.lr, 0.01);
        assert_eq!(hp.loss_mode, LossMode::MentionLevel);
        assert_eq!(Hyperparams::from_toml(&hp.to_toml()).unwrap(), hp);
        assert!(Hyperparams::from_toml("learning_rate = 1").is_err());
        let bad = Hyperparams {
            max_pooling: true,
            ..Hyperparams::default()
        };
        assert!(matches!(bad.model_config(), Err(TrainError::Config(_))));
        let bad = Hyperparams {
            aggregation: "mean".into(),
            ..Hyperparams::default()
        };
        assert!(bad.model_config().is_err());
    }

    fn small_hp() -> Hyperparams {
        Hyperparams {
            embed_dim: 6,
            widths: [3, 3],
            dims: [5, 4],
            keep_prob: 1.0,
            lr: 0.05,
            l2: 0.0,
            init_scale: 0.3,
            max_epochs: 30,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let c = tiny_cluster();
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        let hp = small_hp();
        let a = train(std::slice::from_ref(&c), &[], &table, &hp, &TrainOptions::default()).unwrap();
        let h = &a.report.history;
        assert!(h.last().unwrap().train_loss < h[0].train_loss);
        let b = train(std::slice::from_ref(&c), &[], &table, &hp, &TrainOptions::default()).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let c = tiny_cluster();
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        let hp = Hyperparams {
            patience: 2,
            lr: 1e-9,
            max_epochs: 50,
            ..small_hp()
        };
        let out = train(std::slice::from_ref(&c), std::slice::from_ref(&c), &table, &hp, &TrainOptions::default()).unwrap();
        assert!(out.report.stopped_early);
        assert_eq!(out.report.history.len(), out.report.best_epoch + 2);
    }

    #[test]
    fn divergence_dumps_state() {
        let c = tiny_cluster();
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        let hp = Hyperparams {
            lr: f64::MAX,
            max_epochs: 5,
            ..small_hp()
        };
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            dump_path: Some(dir.path().join("dump.json")),
        };
        match train(std::slice::from_ref(&c), &[], &table, &hp, &opts) {
            Err(TrainError::Divergence { dump: Some(p), .. }) => assert!(p.exists()),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.report)),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = tiny_cluster();
        let table = EmbeddingTable::<f64>::hashed_for_clusters(std::slice::from_ref(&c), 6, 1);
        for (agg, loss_mode, bp) in [
            ("sum", LossMode::ValueLevel, 0),
            ("max", LossMode::ValueLevel, 0),
            ("per-doc", LossMode::ValueLevel, 0),
            ("sum", LossMode::ValueLevel, 2),
            ("sum", LossMode::MentionLevel, 0),
        ] {
            let hp = Hyperparams {
                aggregation: agg.into(),
                loss_mode,
                ..small_hp()
            };
            let cfg = hp.model_config().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let params = ModelParams::init(&cfg, 0.3, &mut rng);
            let r = gradient_check(&c, &table, &cfg, &params, bp, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{} {:?} bp{}: {:?}", agg, loss_mode, bp, r);
        }
    }
}
