use super::{NnError, ParamStore, Tape, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding compare by absolute error instead.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a − n| / max(|a|, |n|, 1e-6)` over every parameter entry.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub n_checked: usize,
    /// Smallest `|pre-activation|` seen by any ReLU in the unperturbed pass;
    /// finite differences are only meaningful when this exceeds the step.
    pub min_relu_margin: f64,
}

/// Compares reverse-mode gradients of the scalar returned by `f` against
/// central finite differences over every entry of every parameter in
/// `store`. `f` must build the whole computation on the fresh tape it is
/// given and be deterministic in the parameters.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&mut Tape, &mut ParamStore) -> Result<Var, NnError>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let min_relu_margin = tape.min_relu_margin();
    tape.backward(loss)?;
    tape.accumulate_param_grads(store);
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| {
            let t = store.get(id);
            if t.grad.is_empty() {
                vec![0.0; t.len()]
            } else {
                t.grad.clone()
            }
        })
        .collect();

    let mut eval = |store: &mut ParamStore| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let l = f(&mut tape, store)?;
        Ok(tape.value(l).values[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        n_checked: 0,
        min_relu_margin,
    };
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).values[i];
            store.get_mut(id).values[i] = orig + FD_STEP;
            let up = eval(store)?;
            store.get_mut(id).values[i] = orig - FD_STEP;
            let down = eval(store)?;
            store.get_mut(id).values[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[pi][i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.n_checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || !rel.is_finite() {
                report.max_rel_err = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
