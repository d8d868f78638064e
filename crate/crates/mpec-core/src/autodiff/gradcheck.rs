//! Central-finite-difference gradient verification.

use super::{AdError, AdResult, Tape, Tensor, Var};

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences at step `h`.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// The function is probed twice at the base point first; a bitwise mismatch
/// means it is not deterministic and the check errors out.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> AdResult<f64>
where
    F: Fn(&mut Tape, Var) -> AdResult<Var>,
{
    let eval = |t: &Tensor| -> AdResult<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t.clone(), false)?;
        let out = f(&mut tape, v)?;
        if tape.value(out).numel() != 1 {
            return Err(AdError::NonScalarLoss(tape.value(out).shape().to_vec()));
        }
        Ok(tape.scalar_value(out))
    };

    // Analytic gradient.
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true)?;
    let out = f(&mut tape, v)?;
    let base = tape.scalar_value(out);
    tape.backward(out)?;
    let analytic: Vec<f64> = match tape.grad(v) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.numel()],
    };

    // Determinism probe.
    let probe = eval(x)?;
    if probe.to_bits() != base.to_bits() {
        return Err(AdError::NonDeterministic);
    }

    let mut max_rel: f64 = 0.0;
    let mut probe_point = x.clone();
    for i in 0..x.numel() {
        let orig = probe_point.data()[i];
        probe_point.data_mut()[i] = orig + h;
        let plus = eval(&probe_point)?;
        probe_point.data_mut()[i] = orig - h;
        let minus = eval(&probe_point)?;
        probe_point.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm_gradient() {
        // f = 0.5 * sum(x^2); grad = x.
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.7, -0.1, 1.5]).unwrap();
        let err = grad_check(
            |tape, v| {
                let sq = tape.mul(v, v)?;
                let s = tape.sum(sq)?;
                tape.scale(s, 0.5)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {}", err);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = grad_check(
            |tape, _v| {
                let c = tape.constant(Tensor::scalar(4.0)?)?;
                tape.scale(c, 1.0)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn cross_entropy_self_check() {
        let x = Tensor::new(
            vec![4, 3],
            vec![
                0.3, -0.8, 1.1, 0.0, 0.5, -0.2, 2.0, -1.0, 0.4, -0.6, 0.9, 0.1,
            ],
        )
        .unwrap();
        let err = grad_check(
            |tape, v| tape.cross_entropy_from_logits(v, &[0, 2, 1, 1]),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {}", err);
    }
}
