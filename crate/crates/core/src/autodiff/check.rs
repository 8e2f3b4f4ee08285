//! Central-difference gradient oracle.

use crate::autodiff::params::{Gradients, ParamId, ParamSet};
use crate::autodiff::tape::{AutodiffError, Fault, NodeId, Tape};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError<E> {
    #[error("model function is not deterministic: {first} then {second} at the base point")]
    NonDeterministic { first: f64, second: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("model function failed: {0}")]
    Model(E),
}

/// How `f(θ + eps) − f(θ − eps)` is obtained for each entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Difference {
    /// Pushed through the recorded graph without cancellation.
    #[default]
    Propagated,
    /// Two full re-evaluations of the model function, then a subtraction.
    Reevaluated,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub difference: Difference,
    /// When set, at most this many evenly spaced entries of each parameter
    /// are perturbed.
    pub max_entries_per_param: Option<usize>,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            difference: Difference::default(),
            max_entries_per_param: None,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat entry index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients against central differences for every
/// entry of every parameter.
///
/// `build` records the loss on the given tape and returns the scalar loss
/// node; it must be a deterministic function of the parameter values.
/// Parameters are perturbed in place and restored bit-for-bit.
pub fn grad_check<T, E, F>(
    params: &mut ParamSet<T>,
    options: GradCheckOptions,
    mut build: F,
) -> Result<GradCheckReport, GradCheckError<E>>
where
    T: Scalar,
    F: FnMut(&mut Tape<'_, T>) -> Result<NodeId, E>,
{
    let analytic: Gradients<T> = {
        let mut tape = Tape::new(&*params).with_fault(options.fault);
        let loss = build(&mut tape).map_err(GradCheckError::Model)?;
        tape.backward(loss)?
    };

    let mut eval = |params: &ParamSet<T>| -> Result<f64, GradCheckError<E>> {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape).map_err(GradCheckError::Model)?;
        Ok(tape.scalar(loss).to_f64_lossless())
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(GradCheckError::NonDeterministic { first, second });
    }

    let eps = T::lit(options.eps);
    let two_eps = 2.0 * options.eps;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
    };
    let mut record = |name: &str, i: usize, a: f64, numeric: f64| {
        let err = relative_error(a, numeric);
        report.entries_checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = err.max(report.max_relative_error);
            report.worst = Some((name.to_string(), i));
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    };
    let picks = |len: usize| -> Vec<usize> {
        match options.max_entries_per_param {
            Some(k) if k < len => (0..k).map(|j| j * len / k).collect(),
            _ => (0..len).collect(),
        }
    };
    let ids: Vec<ParamId> = params.ids().collect();
    match options.difference {
        Difference::Propagated => {
            let mut tape = Tape::new(&*params);
            let loss = build(&mut tape).map_err(GradCheckError::Model)?;
            for &id in &ids {
                for i in picks(params.value(id).len()) {
                    let orig = params.value(id).as_slice()[i];
                    let diff = tape.entry_difference(id, i, orig - eps, orig + eps, loss);
                    let numeric = diff.to_f64_lossless() / two_eps;
                    record(params.name(id), i, analytic.get(id)[i].to_f64_lossless(), numeric);
                }
            }
        }
        Difference::Reevaluated => {
            for &id in &ids {
                for i in picks(params.value(id).len()) {
                    let orig = params.value(id).as_slice()[i];
                    params.value_mut(id).as_mut_slice()[i] = orig + eps;
                    let plus = eval(params);
                    params.value_mut(id).as_mut_slice()[i] = orig - eps;
                    let minus = eval(params);
                    params.value_mut(id).as_mut_slice()[i] = orig;
                    let numeric = (plus? - minus?) / two_eps;
                    record(params.name(id), i, analytic.get(id)[i].to_f64_lossless(), numeric);
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::dot_nodes;
    use crate::linalg::Matrix;
    use std::convert::Infallible;

    #[test]
    fn quadratic_matches_to_high_precision() {
        let mut ps = ParamSet::new();
        let id = ps.add("theta", Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new(&ps);
        let t = tape.param(id);
        let loss = dot_nodes(&mut tape, t, t);
        assert_eq!(tape.backward(loss).unwrap().get(id), &[2.0, 4.0]);

        let report = grad_check(&mut ps, GradCheckOptions::default(), |tape| {
            let t = tape.param(id);
            Ok::<_, Infallible>(dot_nodes(tape, t, t))
        })
        .unwrap();
        assert!(report.max_relative_error <= 1e-9, "{report:?}");
        assert_eq!(report.entries_checked, 2);
        assert_eq!(ps.value(id).as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let mut ps = ParamSet::new();
        let id = ps.add("theta", Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let mut calls = 0.0;
        let res = grad_check(&mut ps, GradCheckOptions::default(), |tape| {
            calls += 1.0;
            let t = tape.param(id);
            let c = tape.constant(vec![calls]);
            Ok::<_, Infallible>(dot_nodes(tape, t, c))
        });
        assert!(matches!(res, Err(GradCheckError::NonDeterministic { .. })));
    }

    #[test]
    fn injected_fault_is_detected() {
        let mut ps = ParamSet::new();
        let id = ps.add("theta", Matrix::from_vec(2, 1, vec![0.3, -0.7]).unwrap());
        let options = GradCheckOptions {
            fault: Some(Fault::SigmoidBackward),
            ..Default::default()
        };
        let report = grad_check(&mut ps, options, |tape| {
            let t = tape.param(id);
            let s = tape.sigmoid(t);
            Ok::<_, Infallible>(dot_nodes(tape, s, s))
        })
        .unwrap();
        assert!(report.max_relative_error > 1e-3);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0001) - 0.0001 / 2.0001).abs() < 1e-15);
    }
}
