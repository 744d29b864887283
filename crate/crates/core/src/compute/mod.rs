//! Dense tensors, a reverse-mode tape, dropout, and Adam.

mod adam;
pub mod checkpoint;
mod tape;
mod tensor;

use rand::Rng;
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use tape::{Axis, Gradients, Tape, Var, WeightedIndex};
pub use tensor::Tensor;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ComputeError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("loss must hold exactly one element, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Softmax of a plain slice, shifted by its maximum.
pub fn softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>, ComputeError> {
    if v.is_empty() {
        return Err(ComputeError::EmptyInput { op: "softmax" });
    }
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = v.iter().map(|&x| (x - m).exp()).collect();
    let z: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

pub use crate::scalar::sigmoid;

/// Inverted-dropout mask with the shape of `like`.
///
/// Survivors carry `1 / keep_prob`, dropped entries zero. Outside training,
/// or with `keep_prob == 1`, the mask is all ones.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    keep_prob: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>, ComputeError> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(ComputeError::InvalidArgument(format!("keep_prob {} outside (0, 1]", keep_prob)));
    }
    if !training || keep_prob == 1.0 {
        return Ok(Tensor::filled(shape, T::one()));
    }
    let scale = T::lit(1.0 / keep_prob);
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        if rng.gen::<f64>() < keep_prob {
            *m = scale;
        }
    }
    Ok(mask)
}

/// Records dropout of `x` on the tape.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    x: Var,
    keep_prob: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var, ComputeError> {
    let mask = dropout_mask(tape.value(x).shape(), keep_prob, training, rng)?;
    if !training || keep_prob == 1.0 {
        return Ok(x);
    }
    let mask = tape.constant(mask);
    tape.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[1.0f64; 4]).unwrap(), vec![0.25; 4]);
        assert_eq!(softmax(&[7.3f64]).unwrap(), vec![1.0]);
        assert!(softmax::<f64>(&[]).is_err());
        let v = [0.3f64, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = v.iter().map(|x| x + 123.4).collect();
        let (a, b) = (softmax(&v).unwrap(), softmax(&shifted).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0f64, -2.0, 3.0]));
        assert_eq!(dropout(&mut tape, x, 1.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut tape, x, 0.5, false, &mut rng).unwrap(), x);
        assert!(dropout(&mut tape, x, 0.0, true, &mut rng).is_err());
        assert!(dropout(&mut tape, x, 1.5, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mask = dropout_mask::<f64, _>(&[draws], 0.8, true, &mut rng).unwrap();
        let mean = mask.sum() / draws as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {}", mean);
        let kept = mask.data().iter().filter(|&&m| m > 0.0).count() as f64 / draws as f64;
        assert!((kept - 0.8).abs() < 0.01);
    }

    #[test]
    fn dropout_is_seeded() {
        let a = dropout_mask::<f64, _>(&[50], 0.8, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = dropout_mask::<f64, _>(&[50], 0.8, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }
}
