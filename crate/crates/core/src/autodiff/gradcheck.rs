use super::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose ±eps evaluations crossed a rectifier kink.
    pub skipped_kinks: usize,
    /// (input index, flat offset) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval<F, E>(f: &F, inputs: &[Tensor]) -> Result<(Tape, Vec<Var>, Var), E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let len = tape.value(out).len();
    if len != 1 {
        return Err(TensorError::NonScalarOutput {
            shape: tape.value(out).shape().to_vec(),
        }
        .into());
    }
    Ok((tape, vars, out))
}

/// Compares the analytic gradient of a scalar function of one tensor with
/// central differences at every coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let coords: Vec<(usize, usize)> = (0..x.len()).map(|i| (0, i)).collect();
    let wrapped = |tape: &mut Tape, vars: &[Var]| f(tape, vars[0]);
    grad_check_coords(wrapped, std::slice::from_ref(x), &coords, eps)
}

/// Central-difference check of selected coordinates of several inputs.
///
/// A coordinate whose perturbed evaluations change the rectifier sign
/// pattern straddles a kink; it is counted in `skipped_kinks` and left out
/// of `max_rel_err`.
pub fn grad_check_coords<F, E>(
    f: F,
    inputs: &[Tensor],
    coords: &[(usize, usize)],
    eps: f64,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(eps > 0.0) {
        return Err(TensorError::BadStep(eps).into());
    }
    let (tape, vars, out) = eval(&f, inputs)?;
    let grads = tape.backward(out)?;
    let base_pattern = tape.relu_pattern();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for &(input, offset) in coords {
        let orig = work[input].data()[offset];
        work[input].data_mut()[offset] = orig + eps;
        let (tp, _, op) = eval(&f, &work)?;
        let plus = tp.value(op).item();
        let plus_pattern = tp.relu_pattern();
        work[input].data_mut()[offset] = orig - eps;
        let (tm, _, om) = eval(&f, &work)?;
        let minus = tm.value(om).item();
        let minus_pattern = tm.relu_pattern();
        work[input].data_mut()[offset] = orig;

        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = rel_err(analytic[input].data()[offset], numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((input, offset));
        }
    }
    Ok(report)
}
