//! Central-difference gradient checking for traced functions.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<(Tape, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(i, t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::contract("gradient check needs a scalar output"));
    }
    Ok((tape, out))
}

/// Numerical gradient of the scalar built by `build` w.r.t. every input.
pub fn numeric_gradients<F>(inputs: &[Tensor], h: f64, build: F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut probe = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for (k, gk) in g.iter_mut().enumerate() {
            let x = inputs[i].data()[k];
            probe[i].data_mut()[k] = x + h;
            let (t, v) = evaluate(&probe, &build)?;
            let plus = t.value(v).item();
            probe[i].data_mut()[k] = x - h;
            let (t, v) = evaluate(&probe, &build)?;
            let minus = t.value(v).item();
            probe[i].data_mut()[k] = x;
            *gk = (plus - minus) / (2.0 * h);
        }
        out.push(Tensor::new(inputs[i].shape().to_vec(), g)?);
    }
    Ok(out)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or 0 when both vanish.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.data().iter().zip(numeric.data()).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.data().iter().copied()).max(norm(&mut numeric.data().iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Largest relative error between tape gradients and central differences
/// over all inputs.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, out) = evaluate(inputs, &build)?;
    let analytic = tape.backward(out)?;
    let numeric = numeric_gradients(inputs, h, &build)?;
    let mut worst = 0.0f64;
    for (i, n) in numeric.iter().enumerate() {
        let zero = Tensor::zeros(n.shape());
        let a = analytic.get(i).unwrap_or(&zero);
        worst = worst.max(relative_error(a, n));
    }
    Ok(worst)
}
