//! Central finite-difference gradient checking.
//!
//! Only forward evaluation is used to build the numerical gradient, so the
//! check is independent of every backward rule it validates.

use super::{AutodiffError, Tape, Tensor, Var};

/// Denominator floor for the relative error, so that gradients which are
/// zero up to rounding are compared absolutely at this scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t)).collect();
    Ok(f(&tape, &vars)?.item())
}

/// Compares tape gradients of the scalar `f(inputs)` with central differences
/// of width `2·step` for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    let params: Vec<Tensor> = inputs.iter().cloned().map(Tensor::into_parameter).collect();
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let plus = evaluate(&probe, &f)?;
            probe[i].data_mut()[j] = orig - step;
            let minus = evaluate(&probe, &f)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[j], numeric);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, j, analytic[j], numeric));
            }
        }
    }
    Ok(report)
}
