//! Central finite-difference oracle for analytic gradients.
//!
//! Only forward evaluations are used here, so the comparison stays
//! independent of the reverse pass being checked.

use super::{Gradients, ParamStore, Tape, Var};
use crate::error::Result;

/// Relative error floor: below this magnitude both gradients count as zero.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient of `loss_fn` for every element of every
/// registered parameter against `(f(w+h) - f(w-h)) / 2h`.
///
/// `max_per_param` caps how many elements of each parameter are probed
/// (evenly strided); `None` probes all of them.
pub fn check_gradients<F>(
    store: &ParamStore,
    step: f64,
    max_per_param: Option<usize>,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic: Gradients = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let loss = loss_fn(&mut tape)?;
        Ok(tape.scalar(loss))
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for id in store.ids() {
        let n = store.tensor(id).numel();
        let stride = match max_per_param {
            Some(cap) if cap > 0 && n > cap => n.div_ceil(cap),
            _ => 1,
        };
        let grad = analytic
            .get(id)
            .expect("backward fills every parameter")
            .data()
            .to_vec();
        for i in (0..n).step_by(stride) {
            let orig = store.tensor(id).data()[i];
            work.tensor_mut(id).data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.tensor_mut(id).data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.tensor_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_error(grad[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
