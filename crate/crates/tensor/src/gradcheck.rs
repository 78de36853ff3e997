//! Central finite-difference gradient checks.

use crate::tape::{Tape, Var};
use crate::{Error, Result, Tensor};

/// Outcome of [`check_gradients`]: relative error per input, measured as
/// `‖analytic - numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-8)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub per_input: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `h` in every input coordinate.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item().ok_or_else(|| Error::NonScalarOutput(tape.value(out).shape().to_vec()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let analytic = tape.backward(out, &vars)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (k, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; inputs[k].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[j];
            work[k].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        let diff: f64 = a.data().iter().zip(&numeric).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        per_input.push(diff / na.max(nn).max(1e-8));
    }
    Ok(GradCheck { per_input })
}
