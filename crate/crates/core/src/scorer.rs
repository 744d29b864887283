//! Slot-specific attention over token representations.

use std::io::{self, Write};

use rand::Rng;

use crate::compute::{softmax, ComputeError, Tensor};
use crate::corpus::Slot;
use crate::encoder::uniform;
use crate::scalar::Scalar;

/// One trainable query vector per slot, stacked as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotEmbeddings<T> {
    pub slots: Vec<Slot>,
    pub matrix: Tensor<T>,
}

impl<T: Scalar> SlotEmbeddings<T> {
    pub fn init<R: Rng + ?Sized>(slots: Vec<Slot>, rows: usize, repr_dim: usize, scale: f64, rng: &mut R) -> Self {
        debug_assert!(rows >= slots.len());
        Self {
            slots,
            matrix: uniform(&[rows, repr_dim], scale, rng),
        }
    }

    pub fn query(&self, row: usize) -> &[T] {
        self.matrix.row(row)
    }
}

/// `u = R · π`: one compatibility score per token.
pub fn score_tokens<T: Scalar>(repr: &Tensor<T>, query: &[T]) -> Result<Vec<T>, ComputeError> {
    if repr.cols() != query.len() {
        return Err(ComputeError::ShapeMismatch {
            op: "score_tokens",
            detail: format!("R has {} columns, query has {}", repr.cols(), query.len()),
        });
    }
    Ok((0..repr.rows())
        .map(|i| repr.row(i).iter().zip(query).map(|(&a, &b)| a * b).sum())
        .collect())
}

/// Attention distribution over every token of the cluster.
pub fn attend<T: Scalar>(scores: &[T]) -> Result<Vec<T>, ComputeError> {
    softmax(scores)
}

/// Attention mass at the mention's first token.
pub fn mention_score<T: Scalar>(attention: &[T], first_token: usize) -> Result<T, ComputeError> {
    attention.get(first_token).copied().ok_or(ComputeError::IndexOutOfRange {
        op: "mention_score",
        index: first_token,
        len: attention.len(),
    })
}

/// Writes `token_index,token,attention` rows for one slot.
pub fn write_attention_csv<T: Scalar, W: Write>(mut w: W, tokens: &[&str], attention: &[T]) -> io::Result<()> {
    writeln!(w, "token_index,token,attention")?;
    for (i, (tok, a)) in tokens.iter().zip(attention).enumerate() {
        let tok = if tok.contains([',', '"']) {
            format!("\"{}\"", tok.replace('"', "\"\""))
        } else {
            tok.to_string()
        };
        writeln!(w, "{},{},{}", i, tok, a)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_query_scores_zero() {
        let r = Tensor::matrix(3, 2, vec![1.0f64, 2.0, -3.0, 4.0, 0.5, 0.5]).unwrap();
        assert_eq!(score_tokens(&r, &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn duplicated_rows_score_equal() {
        let r = Tensor::matrix(3, 2, vec![1.0f64, 2.0, 7.0, -1.0, 1.0, 2.0]).unwrap();
        let u = score_tokens(&r, &[0.3, -0.9]).unwrap();
        assert_eq!(u[0], u[2]);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r: Tensor<f64> = uniform(&[9, 4], 2.0, &mut rng);
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = score_tokens(&r, &q).unwrap();
        for i in 0..9 {
            let mut acc = 0.0;
            for j in 0..4 {
                acc += r.data()[i * 4 + j] * q[j];
            }
            assert!((u[i] - acc).abs() < 1e-14);
        }
        assert!(score_tokens(&r, &q[..3]).is_err());
    }

    #[test]
    fn attention_examples() {
        assert_eq!(attend(&[2.0f64; 5]).unwrap(), vec![0.2; 5]);
        let a = attend(&[0.0f64, 50.0, 0.0, 0.0]).unwrap();
        assert!(a[1] > 0.999);
        let u = [0.3f64, -1.0, 2.2, 0.9];
        let perm = [2usize, 0, 3, 1];
        let a = attend(&u).unwrap();
        let ap = attend(&perm.iter().map(|&i| u[i]).collect::<Vec<_>>()).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(ap[k], a[i]);
        }
    }

    #[test]
    fn competition() {
        let u = [0.1f64, 0.4, -0.3, 0.8];
        let a = attend(&u).unwrap();
        let mut bumped = u;
        bumped[1] += 0.5;
        let b = attend(&bumped).unwrap();
        for i in [0, 2, 3] {
            assert!(b[i] < a[i]);
        }
        assert!(b[1] > a[1]);
    }

    #[test]
    fn mention_score_examples() {
        let a = [0.25f64; 4];
        assert_eq!(mention_score(&a, 2).unwrap(), 0.25);
        assert!(mention_score(&a, 4).is_err());
        let r = Tensor::matrix(2, 1, vec![1.0f64, 3.0]).unwrap();
        let a = attend(&score_tokens(&r, &[0.5]).unwrap()).unwrap();
        assert_eq!(mention_score(&a, 1).unwrap(), a[1]);
    }

    #[test]
    fn csv_dump() {
        let mut buf = Vec::new();
        write_attention_csv(&mut buf, &["the", "a,b"], &[0.25f64, 0.75]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "token_index,token,attention\n0,the,0.25\n1,\"a,b\",0.75\n");
    }
}
