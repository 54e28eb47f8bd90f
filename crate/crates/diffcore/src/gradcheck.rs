//! Central finite-difference check of analytic gradients.

use crate::error::{DiffError, Result};
use crate::graph::{Fault, Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Corrupts one backward rule; used for negative controls.
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = build(&mut g, store)?;
    let v = g.value(root);
    if v.len() != 1 {
        return Err(DiffError::NonScalarRoot(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the backward pass of `build` against central differences for
/// every scalar of every parameter in `store`.
pub fn gradcheck<F>(store: &ParamStore, build: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let first = evaluate(store, &build)?;
    let second = evaluate(store, &build)?;
    if first.to_bits() != second.to_bits() {
        return Err(DiffError::Nondeterministic { first, second });
    }

    let mut g = Graph::new().with_fault(opts.fault);
    let root = build(&mut g, store)?;
    let analytic = g.backward(root, store)?;

    let mut probe = store.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        tolerance: opts.tolerance,
        passed: true,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for j in 0..store.get(id).len() {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + opts.step;
            let plus = evaluate(&probe, &build)?;
            probe.get_mut(id).data_mut()[j] = orig - opts.step;
            let minus = evaluate(&probe, &build)?;
            probe.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.get(id).data()[j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), j));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < opts.tolerance;
    Ok(report)
}
