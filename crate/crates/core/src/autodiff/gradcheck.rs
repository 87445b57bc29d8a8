//! Central finite-difference gradient checks against the tape.

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors so that gradients which are zero up
/// to rounding compare absolutely. A central difference with step `1e-6` on a
/// loss of order one carries about `1e-10` of rounding noise, so smaller
/// floors would grade the noise rather than the gradient.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Distance of the closest non-differentiable point at the unperturbed
    /// inputs. Central differences are unreliable when it is below `step`.
    pub nearest_kink: Option<f64>,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences with the given `step`, over every element of every input.
pub fn check_gradients<F>(inputs: &[Matrix], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .ok_or_else(|| Error::Contract("gradient check needs a scalar output".into()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let nearest_kink = tape.nearest_kink();
    tape.backward(out)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(inputs)
        .map(|(v, m)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        nearest_kink,
    };
    let mut probe: Vec<Matrix> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            probe[i].data_mut()[k] = x + step;
            let up = eval(&probe)?;
            probe[i].data_mut()[k] = x - step;
            let down = eval(&probe)?;
            probe[i].data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * step);
            let a = grad.data()[k];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst = (i, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
