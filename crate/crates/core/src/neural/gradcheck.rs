use super::{Gradients, ParamStore};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric values at the worst entry.
    pub worst_values: (f64, f64),
}

/// Relative error with a floor on the denominator, so entries where both
/// gradients are essentially zero compare on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Perturbs every entry of every parameter by `±eps` and compares the
/// central difference of `loss` with `analytic`.
pub fn check_gradients<M>(
    model: &mut M,
    analytic: &Gradients,
    eps: f64,
    store: impl Fn(&mut M) -> &mut ParamStore,
    loss: impl Fn(&M) -> f64,
) -> GradCheckReport {
    let ids: Vec<_> = store(model).ids().collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
    };
    for id in ids {
        let n = store(model).value(id).len();
        for k in 0..n {
            let orig = store(model).value(id).as_slice()[k];
            store(model).value_mut(id).as_mut_slice()[k] = orig + eps;
            let up = loss(model);
            store(model).value_mut(id).as_mut_slice()[k] = orig - eps;
            let down = loss(model);
            store(model).value_mut(id).as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id).as_slice()[k];
            let rel = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store(model).name(id).to_owned(), k));
                report.worst_values = (a, numeric);
            }
        }
    }
    report
}
