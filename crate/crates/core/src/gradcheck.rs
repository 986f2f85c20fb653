//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest per-input `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`
    /// over the checked coordinates; 0 when both vanish.
    pub max_rel_error: f64,
    /// Number of coordinates compared.
    pub coordinates: usize,
    /// Coordinates re-measured with smaller steps because the function is
    /// not smooth within the original step (e.g. a leaky-ReLU kink).
    pub refined: usize,
}

/// Compare the tape gradient of the scalar `f(inputs)` with central
/// differences of step `step`, on at most `max_coords` randomly chosen
/// coordinates per input (all when `None`).
///
/// A coordinate whose difference quotient disagrees with the analytic value
/// is re-measured at `step / 10` and `step / 100`, and the last quotient is
/// used. This separates kinks lying within `step` of the probe point from
/// wrong gradients, which do not converge.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    max_coords: Option<usize>,
    rng: &mut impl Rng,
    f: F,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if out.value().numel() != 1 {
        return Err(Error::Shape(format!(
            "gradient check needs a scalar, got {:?}",
            out.shape()
        )));
    }
    let grads = tape.backward(out);
    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };
    let mut worst = 0.0f64;
    let mut coordinates = 0;
    let mut refined = 0;
    let mut probe = inputs.to_vec();
    for (vi, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v);
        let n = inputs[vi].numel();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let (mut diff, mut an_norm, mut fd_norm) = (0.0, 0.0, 0.0);
        for &i in &coords {
            let x = inputs[vi].data()[i];
            let mut quotient = |h: f64| -> Result<f64> {
                probe[vi].data_mut()[i] = x + h;
                let plus = eval(&probe)?;
                probe[vi].data_mut()[i] = x - h;
                let minus = eval(&probe)?;
                probe[vi].data_mut()[i] = x;
                Ok((plus - minus) / (2.0 * h))
            };
            let an = analytic.data()[i];
            let mut fd = quotient(step)?;
            if (fd - an).abs() > 1e-6 * an.abs().max(fd.abs()) + 1e-10 {
                quotient(step / 10.0)?;
                fd = quotient(step / 100.0)?;
                refined += 1;
            }
            diff += (an - fd).powi(2);
            an_norm += an * an;
            fd_norm += fd * fd;
        }
        let scale = an_norm.max(fd_norm).sqrt();
        if scale > 0.0 {
            worst = worst.max(diff.sqrt() / scale);
        }
        coordinates += coords.len();
    }
    Ok(GradCheck {
        max_rel_error: worst,
        coordinates,
        refined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_f64(&[3], &[0.3, -0.7, 1.1]).unwrap();
        let good = check_gradients(std::slice::from_ref(&x), 1e-5, None, &mut rng, |_, v| {
            Ok(v[0].square().sum())
        })
        .unwrap();
        assert!(good.max_rel_error < 1e-8);
        // detach hides the square's gradient, leaving only the linear part
        let bad = check_gradients(&[x], 1e-5, None, &mut rng, |_, v| {
            Ok(v[0].mul(v[0].detach()).sum().add(v[0].sum()))
        })
        .unwrap();
        assert!(bad.max_rel_error > 0.1);
    }
}
