//! Token embeddings with masked mentions, and the two-layer CNN context
//! encoder producing one representation row per token.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::compute::{dropout, ComputeError, Tape, Tensor, Var};
use crate::corpus::{Cluster, Document};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },
}

/// Frozen pretrained vectors. Out-of-vocabulary tokens map to `unk`.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<T> {
    vocab: HashMap<String, usize>,
    matrix: Tensor<T>,
    unk: Vec<T>,
}

/// 64-bit FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(words: Vec<String>, matrix: Tensor<T>) -> Result<Self, ComputeError> {
        if matrix.ndim() != 2 || matrix.rows() != words.len() {
            return Err(ComputeError::ShapeMismatch {
                op: "embedding_table",
                detail: format!("{} words, matrix {:?}", words.len(), matrix.shape()),
            });
        }
        let dim = matrix.cols();
        let vocab = words.into_iter().enumerate().map(|(i, w)| (w, i)).collect();
        Ok(Self {
            vocab,
            matrix,
            unk: vec![T::zero(); dim],
        })
    }

    /// Seeded pseudo-random vectors for `words`, uniform in `[-1, 1]`.
    ///
    /// Each word's vector depends only on the word and `seed`, so tables built
    /// from different corpora agree on shared words.
    pub fn hashed<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let mut uniq: Vec<&str> = words.into_iter().collect();
        uniq.sort_unstable();
        uniq.dedup();
        let mut data = Vec::with_capacity(uniq.len() * dim);
        for w in &uniq {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(w.as_bytes()) ^ seed);
            data.extend((0..dim).map(|_| T::lit(rng.gen_range(-1.0..1.0))));
        }
        let matrix = Tensor::matrix(uniq.len(), dim, data).expect("sized above");
        Self::new(uniq.into_iter().map(str::to_string).collect(), matrix).expect("sized above")
    }

    pub fn hashed_for_clusters(clusters: &[Cluster], dim: usize, seed: u64) -> Self {
        let words = clusters
            .iter()
            .flat_map(|c| c.documents.iter())
            .flat_map(|d| d.tokens.iter().map(|t| t.text.as_str()));
        Self::hashed(words, dim, seed)
    }

    /// Reads `token v1 v2 ... ve` lines; every line must have the same `e`.
    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let f = File::open(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut words = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|source| EmbeddingError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(|p| p.parse::<f64>().map(T::lit))
                .collect::<Result<Vec<T>, _>>()
                .map_err(|e| EmbeddingError::Format {
                    line: i + 1,
                    detail: e.to_string(),
                })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(EmbeddingError::Format {
                        line: i + 1,
                        detail: format!("expected {} values, found {}", d, values.len()),
                    })
                }
                _ => {}
            }
            words.push(word.to_string());
            data.extend(values);
        }
        let dim = dim.unwrap_or(0);
        let matrix = Tensor::matrix(words.len(), dim, data).map_err(|e| EmbeddingError::Format {
            line: 0,
            detail: e.to_string(),
        })?;
        Self::new(words, matrix).map_err(|e| EmbeddingError::Format {
            line: 0,
            detail: e.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn lookup(&self, word: &str) -> &[T] {
        match self.vocab.get(word) {
            Some(&i) => self.matrix.row(i),
            None => &self.unk,
        }
    }

    /// Document embedding with mention tokens zeroed, plus the rows that
    /// receive the mask vector.
    pub fn document_rows(&self, doc: &Document) -> (Tensor<T>, Vec<usize>) {
        let e = self.dim();
        let mask = doc.mention_mask();
        let mut data = Vec::with_capacity(doc.len() * e);
        let mut masked = Vec::new();
        for (i, t) in doc.tokens.iter().enumerate() {
            if mask[i] {
                data.extend(std::iter::repeat_n(T::zero(), e));
                masked.push(i);
            } else {
                data.extend_from_slice(self.lookup(&t.text));
            }
        }
        (Tensor::matrix(doc.len(), e, data).expect("sized above"), masked)
    }
}

/// Embeds every token of a cluster in document order; mention tokens take
/// `mask_vector`, unknown words the table's `unk` row.
pub fn embed_cluster<T: Scalar>(cluster: &Cluster, table: &EmbeddingTable<T>, mask_vector: &[T]) -> Tensor<T> {
    let e = table.dim();
    let mut data = Vec::with_capacity(cluster.num_tokens() * e);
    for d in &cluster.documents {
        let (rows, masked) = table.document_rows(d);
        let mut rows = rows.into_data();
        for r in masked {
            rows[r * e..(r + 1) * e].copy_from_slice(mask_vector);
        }
        data.extend(rows);
    }
    Tensor::matrix(cluster.num_tokens(), e, data).expect("sized above")
}

/// Filter widths and output sizes of the two convolution layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderShape {
    pub embed_dim: usize,
    pub widths: [usize; 2],
    pub dims: [usize; 2],
}

impl EncoderShape {
    /// Output representation size `r`.
    pub fn repr_dim(&self) -> usize {
        self.dims[1]
    }

    /// How far (in tokens, to either side) an output row can see.
    pub fn reach(&self) -> (usize, usize) {
        self.widths.iter().fold((0, 0), |(l, r), &w| (l + w / 2, r + (w - 1 - w / 2)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub conv1_filters: Tensor<T>,
    pub conv1_bias: Tensor<T>,
    pub conv2_filters: Tensor<T>,
    pub conv2_bias: Tensor<T>,
}

/// Encoder parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub conv1_filters: Var,
    pub conv1_bias: Var,
    pub conv2_filters: Var,
    pub conv2_bias: Var,
}

pub(crate) fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = T::lit(rng.gen_range(-scale..scale));
    }
    t
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init<R: Rng + ?Sized>(shape: &EncoderShape, init_scale: f64, rng: &mut R) -> Self {
        let [w1, w2] = shape.widths;
        let [d1, d2] = shape.dims;
        Self {
            conv1_filters: uniform(&[w1, shape.embed_dim, d1], init_scale, rng),
            conv1_bias: uniform(&[d1], init_scale, rng),
            conv2_filters: uniform(&[w2, d1, d2], init_scale, rng),
            conv2_bias: uniform(&[d2], init_scale, rng),
        }
    }

    pub fn on_tape(&self, tape: &mut Tape<T>) -> EncoderVars {
        EncoderVars {
            conv1_filters: tape.param(self.conv1_filters.clone()),
            conv1_bias: tape.param(self.conv1_bias.clone()),
            conv2_filters: tape.param(self.conv2_filters.clone()),
            conv2_bias: tape.param(self.conv2_bias.clone()),
        }
    }
}

/// Dropout setting for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DropoutMode {
    pub keep_prob: f64,
    pub training: bool,
}

impl DropoutMode {
    pub const INFERENCE: DropoutMode = DropoutMode {
        keep_prob: 1.0,
        training: false,
    };
}

/// Encodes one document: conv, rectifier, dropout, conv, dropout.
///
/// Returns `None` for an empty document, which contributes no rows.
pub fn encode_document<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    embedded: Var,
    vars: &EncoderVars,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Option<Var>, ComputeError> {
    if tape.value(embedded).rows() == 0 {
        return Ok(None);
    }
    let h = tape.conv1d(embedded, vars.conv1_filters, vars.conv1_bias)?;
    let h = tape.relu(h)?;
    let h = dropout(tape, h, mode.keep_prob, mode.training, rng)?;
    let out = tape.conv1d(h, vars.conv2_filters, vars.conv2_bias)?;
    Ok(Some(dropout(tape, out, mode.keep_prob, mode.training, rng)?))
}

/// Records the masked embedding of `doc` on the tape.
pub fn embed_document_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    doc: &Document,
    table: &EmbeddingTable<T>,
    mask_vector: Var,
) -> Result<Var, ComputeError> {
    let (rows, masked) = table.document_rows(doc);
    let n = rows.rows();
    let base = tape.constant(rows);
    if masked.is_empty() {
        return Ok(base);
    }
    let mask = tape.scatter_rows(mask_vector, masked, n)?;
    tape.add(base, mask)
}

/// Representation matrix `R` (tokens × r) for a whole cluster without
/// recording gradients of interest; convenience for inspection and tests.
pub fn encode<T: Scalar>(
    cluster: &Cluster,
    table: &EmbeddingTable<T>,
    mask_vector: &Tensor<T>,
    params: &EncoderParams<T>,
) -> Result<Tensor<T>, ComputeError> {
    let mut tape = Tape::new();
    let vars = params.on_tape(&mut tape);
    let mask = tape.param(mask_vector.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut parts = Vec::new();
    for d in &cluster.documents {
        let x = embed_document_on_tape(&mut tape, d, table, mask)?;
        if let Some(r) = encode_document(&mut tape, x, &vars, DropoutMode::INFERENCE, &mut rng)? {
            parts.push(r);
        }
    }
    if parts.is_empty() {
        return Ok(Tensor::zeros(&[0, params.conv2_bias.numel()]));
    }
    let r = tape.concat_rows(&parts)?;
    Ok(tape.value(r).clone())
}
