use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of [`grad_check`], with the location of the worst entry.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares tape gradients of a scalar function with central differences.
///
/// The error of each entry is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)` and the
/// maximum over all entries of all inputs is reported.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::invalid(
            "grad_check",
            format!("eps must be positive, got {eps}"),
        ));
    }
    let tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::NotScalar(tape.shape(out)));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let t = Tape::new();
        let vs = probe
            .iter()
            .map(|x| t.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let o = f(&t, &vs)?;
        let v = t.value(o).item();
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > report.max_relative_error || !err.is_finite() {
                report = GradCheckReport {
                    max_relative_error: err,
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
