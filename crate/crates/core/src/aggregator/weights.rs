use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_2_PI, PI};

use statrs::function::erf::erf;

use crate::corpus::{Cluster, Document, Slot};

/// Nonnegative per-token aggregation weights, `weights[doc][token]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionWeights {
    pub weights: Vec<Vec<f64>>,
}

impl MentionWeights {
    pub fn unit(cluster: &Cluster) -> Self {
        Self {
            weights: cluster.documents.iter().map(|d| vec![1.0; d.len()]).collect(),
        }
    }

    /// One weight for every token of each document.
    pub fn per_document(cluster: &Cluster, doc_weights: &[f64]) -> Self {
        Self {
            weights: cluster
                .documents
                .iter()
                .zip(doc_weights)
                .map(|(d, &w)| vec![w; d.len()])
                .collect(),
        }
    }

    pub fn get(&self, doc: usize, token: usize) -> f64 {
        self.weights[doc][token]
    }
}

/// 1 for tokens in topical sentences, 0 otherwise.
pub fn topic_weights(cluster: &Cluster) -> MentionWeights {
    MentionWeights {
        weights: cluster
            .documents
            .iter()
            .map(|d| {
                d.tokens
                    .iter()
                    .map(|t| if d.topical.get(t.sentence_id).copied().unwrap_or(true) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
    }
}

/// Number of distinct gold values mentioned in a document.
pub fn information_content(doc: &Document, gold_values: &BTreeSet<&str>) -> usize {
    doc.mentions
        .iter()
        .map(|m| m.value_id.as_str())
        .filter(|v| gold_values.contains(v))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Skew-normal distribution with location `xi`, scale `omega`, shape `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormal {
    pub xi: f64,
    pub omega: f64,
    pub alpha: f64,
}

const MAX_SKEWNESS: f64 = 0.99;

impl SkewNormal {
    /// Method-of-moments fit to weighted samples. `None` when the total
    /// weight is zero.
    pub fn fit_weighted(xs: &[f64], ws: &[f64]) -> Option<Self> {
        let total: f64 = ws.iter().sum();
        if total <= 0.0 || xs.len() != ws.len() {
            return None;
        }
        let mean = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / total;
        let central = |k: i32| xs.iter().zip(ws).map(|(x, w)| w * (x - mean).powi(k)).sum::<f64>() / total;
        // all mass on one position: spread it over that position's width
        let var = central(2).max(1.0 / 12.0);
        let sd = var.sqrt();
        let gamma = (central(3) / sd.powi(3)).clamp(-MAX_SKEWNESS, MAX_SKEWNESS);

        let g23 = gamma.abs().powf(2.0 / 3.0);
        let c = ((4.0 - PI) / 2.0).powf(2.0 / 3.0);
        let delta = ((PI / 2.0) * g23 / (g23 + c)).sqrt().copysign(gamma);
        let omega = sd / (1.0 - FRAC_2_PI * delta * delta).sqrt();
        let xi = mean - omega * delta * FRAC_2_PI.sqrt();
        let alpha = delta / (1.0 - delta * delta).sqrt();
        Some(Self { xi, omega, alpha })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.xi) / self.omega;
        let phi = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        let cdf = 0.5 * (1.0 + erf(self.alpha * z / std::f64::consts::SQRT_2));
        2.0 / self.omega * phi * cdf
    }

    pub fn mean(&self) -> f64 {
        let delta = self.alpha / (1.0 + self.alpha * self.alpha).sqrt();
        self.xi + self.omega * delta * FRAC_2_PI.sqrt()
    }
}

/// Per-document weights from a skew-normal fitted to information content
/// over publication position, min-max normalized to [0, 1].
///
/// Without gold, with fewer than three dated documents, or when every dated
/// document carries the same information content, all weights are 1.
/// Undated documents always get 1.
pub fn date_weights(cluster: &Cluster, gold: Option<&BTreeMap<Slot, BTreeSet<String>>>) -> (Vec<f64>, MentionWeights) {
    let n = cluster.documents.len();
    let unit = || (vec![1.0; n], MentionWeights::unit(cluster));
    let Some(gold) = gold else { return unit() };
    let gold_values: BTreeSet<&str> = gold.values().flatten().map(String::as_str).collect();

    let dated: Vec<usize> = (0..n).filter(|&i| cluster.documents[i].dateline.is_some()).collect();
    if dated.len() < 3 {
        return unit();
    }
    // position among dated documents in publication order
    let xs: Vec<f64> = (0..dated.len()).map(|p| p as f64).collect();
    let ic: Vec<f64> = dated
        .iter()
        .map(|&i| information_content(&cluster.documents[i], &gold_values) as f64)
        .collect();
    if ic.iter().all(|&c| c == ic[0]) {
        return unit();
    }
    let Some(sn) = SkewNormal::fit_weighted(&xs, &ic) else { return unit() };
    let dens: Vec<f64> = xs.iter().map(|&x| sn.pdf(x)).collect();
    let lo = dens.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut doc_w = vec![1.0; n];
    for (&i, &d) in dated.iter().zip(&dens) {
        doc_w[i] = if hi > lo { (d - lo) / (hi - lo) } else { 1.0 };
    }
    let mw = MentionWeights::per_document(cluster, &doc_w);
    (doc_w, mw)
}
