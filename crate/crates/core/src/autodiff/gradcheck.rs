//! Central finite-difference gradient checking.

use super::{Matrix, Params, Tape, Var};
use crate::error::Result;

/// Entries whose analytic and numeric gradients are both smaller than this
/// are compared absolutely instead of relatively.
pub const ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, ERR_FLOOR)`.
    pub max_rel_err: f64,
    /// (input index, flat element index) of the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERR_FLOOR)
}

/// Compares reverse-mode gradients of the scalar returned by `f` with
/// central differences of step `h`, for every entry of every input.
///
/// `f` receives one gradient-tracked leaf per input and must build a fresh
/// computation on the given tape each call.
pub fn check_gradients<F>(inputs: &[Matrix], h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Matrix]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.var(x.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let analytic: Vec<Matrix> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.var(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, x)| {
                grads
                    .get(*v)
                    .map(|g| g.as_standard_layout().into_owned())
                    .unwrap_or_else(|| Matrix::zeros(x.raw_dim()))
            })
            .collect()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut xs: Vec<Matrix> = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for e in 0..grad.len() {
            let orig = xs[k].as_slice().expect("standard layout")[e];
            xs[k].as_slice_mut().expect("standard layout")[e] = orig + h;
            let up = eval(&xs)?;
            xs[k].as_slice_mut().expect("standard layout")[e] = orig - h;
            let down = eval(&xs)?;
            xs[k].as_slice_mut().expect("standard layout")[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grad.as_slice().expect("standard layout")[e], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((k, e));
            }
        }
    }
    Ok(report)
}

/// Like [`check_gradients`], but perturbs every entry of every parameter in
/// `params`; `worst` holds (parameter index, flat element index).
pub fn check_param_gradients<F>(params: &Params, h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &Params) -> Result<Var<'t>>,
{
    let eval = |p: &Params| -> Result<f64> {
        let tape = Tape::new();
        Ok(f(&tape, p)?.item())
    };
    let mut work = params.clone();
    work.zero_grads();
    {
        let tape = Tape::new();
        let out = f(&tape, &work)?;
        let grads = tape.backward(out)?;
        grads.accumulate(&mut work);
    }
    work.fill_missing_grads();
    let analytic: Vec<Matrix> = work
        .ids()
        .map(|id| work.grad(id).expect("filled").as_standard_layout().into_owned())
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = work.ids().collect();
    for (k, &id) in ids.iter().enumerate() {
        for e in 0..analytic[k].len() {
            let orig = work.value(id).as_slice().expect("standard layout")[e];
            work.value_mut(id).as_slice_mut().expect("standard layout")[e] = orig + h;
            let up = eval(&work)?;
            work.value_mut(id).as_slice_mut().expect("standard layout")[e] = orig - h;
            let down = eval(&work)?;
            work.value_mut(id).as_slice_mut().expect("standard layout")[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[k].as_slice().expect("standard layout")[e], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((k, e));
            }
        }
    }
    Ok(report)
}
