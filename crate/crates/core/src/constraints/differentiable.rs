use crate::compute::{Axis, ComputeError, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Belief propagation recorded on the tape so gradients reach `phi`.
///
/// Works in odds space, where an Exactly-1 factor's message to a neighbor is
/// the reciprocal of the summed odds of the others. `phi` is `V × S`, with
/// the null row last when `has_null`. Returns beliefs of the same shape,
/// matching [`super::run_bp`] with a fixed round count.
pub fn bp_on_tape<T: Scalar>(tape: &mut Tape<T>, phi: Var, has_null: bool, rounds: usize) -> Result<Var, ComputeError> {
    let shape = tape.value(phi).shape().to_vec();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(ComputeError::InvalidArgument(format!("bp_on_tape needs a V x S grid, got {:?}", shape)));
    }
    let (nv, ns) = (shape[0], shape[1]);
    let eps = T::prob_eps();
    let max_logit = ((T::one() - eps) / eps).ln();
    let odds_lo = eps / (T::one() - eps);
    let odds_hi = (T::one() - eps) / eps;

    let phi_c = tape.clamp(phi, -max_logit, max_logit)?;
    let lambda = tape.exp(phi_c)?;
    let ones = tape.constant(Tensor::filled(&[nv, ns], T::one()));
    let valued = if has_null { nv - 1 } else { nv };
    let null_ones = tape.constant(Tensor::filled(&[1, ns], T::one()));

    let mut to_slot = lambda;
    let mut to_value = lambda;
    let mut from_slot = ones;
    let mut from_value = ones;
    for _ in 0..rounds {
        let others = tape.sum_others(to_slot, Axis::Rows)?;
        let others = tape.clamp(others, odds_lo, T::max_value())?;
        from_slot = tape.recip(others)?;

        from_value = if valued == 0 {
            ones
        } else {
            let rows = tape.slice_rows(to_value, 0, valued)?;
            let others = tape.sum_others(rows, Axis::Cols)?;
            let others = tape.clamp(others, odds_lo, T::max_value())?;
            let msg = tape.recip(others)?;
            if has_null {
                tape.concat_rows(&[msg, null_ones])?
            } else {
                msg
            }
        };

        let ts = tape.mul(lambda, from_value)?;
        to_slot = tape.clamp(ts, odds_lo, odds_hi)?;
        let tv = tape.mul(lambda, from_slot)?;
        to_value = tape.clamp(tv, odds_lo, odds_hi)?;
    }
    let b = tape.mul(lambda, from_slot)?;
    let b = tape.mul(b, from_value)?;
    let inv = tape.recip(b)?;
    let denom = tape.add(ones, inv)?;
    tape.recip(denom)
}
