use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central
/// differences and returns the largest per-coordinate error
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `f` is re-run on a fresh tape for every probe, so it must be a pure
/// function of its input.
pub fn gradcheck<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape.grad_or_zeros(xv);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.variable(probe);
        let o = f(&mut t, v)?;
        let val = t.value(o);
        if val.len() != 1 {
            return Err(Error::Usage(format!(
                "gradcheck needs a scalar function, got shape {:?}",
                val.shape()
            )));
        }
        Ok(val.item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if err.is_nan() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.5, 0.7]);
        let w = Tensor::vector(vec![2.0, -1.0, 0.5, 3.0]);
        let err = gradcheck(
            |tape, x| {
                let c = tape.constant(w.clone());
                let p = tape.mul(x, c)?;
                Ok(tape.sum(p))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_wrong_backward() {
        let x = Tensor::vector(vec![0.1, 0.2]);
        let err = gradcheck(
            |tape, x| {
                let v = tape.value(x).map(|a| a * a);
                // derivative of a^2 deliberately reported as 3a
                let y = tape.custom(
                    vec![x],
                    v,
                    Box::new(|ins, _, g| {
                        vec![Tensor::vector(
                            ins[0]
                                .data()
                                .iter()
                                .zip(g.data())
                                .map(|(a, g)| 3.0 * a * g)
                                .collect(),
                        )]
                    }),
                );
                Ok(tape.sum(y))
            },
            &x,
            1e-4,
        );
        let err = err.unwrap();
        assert!(err > 1e-3, "{err}");
    }
}
