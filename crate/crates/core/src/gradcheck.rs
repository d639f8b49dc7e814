//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<GradCheckEntry>,
    pub tolerance: f64,
    /// Denominator floor used by the relative error, see [`noise_floor`].
    pub noise_floor: f64,
    pub passed: bool,
    /// Largest relative error per parameter, in registry order.
    pub per_param: Vec<(String, f64)>,
}

/// `|a - n| / max(|a|, |n|, floor)`, zero when both agree exactly.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    if analytic == numeric {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Smallest gradient magnitude a central difference can resolve at `f`.
///
/// Rounding `f(x ± ε)` to f64 perturbs the quotient by about
/// `u·max(|f|, 1) / ε` (`u` the unit roundoff), so a gradient that is
/// exactly zero still shows that much numeric noise. Dividing by the
/// tolerance makes one such unit of noise land exactly on `tolerance`
/// rather than on a relative error of 1.
pub fn noise_floor(f: f64, eps: f64, tolerance: f64) -> f64 {
    f64::EPSILON * f.abs().max(1.0) / (eps * tolerance)
}

/// Checks every element of every trainable parameter in `store`.
///
/// `f` builds a scalar on the tape it is handed, reading parameters through
/// [`Tape::param`]. It must be deterministic: the base point is evaluated
/// twice and any difference is reported as [`Error::NonDeterministic`].
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, eps: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument {
            op: "grad_check",
            msg: format!("epsilon {eps} outside [1e-6, 1e-4]"),
        });
    }
    let analytic: Vec<Option<Tensor>> = {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let grads = tape.backward(out)?;
        store.ids().map(|id| grads.param(store, id).cloned()).collect()
    };

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let out = f(&mut tape, store)?;
        Ok(tape.value(out).item())
    };

    let first = eval(store)?;
    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let floor = noise_floor(first, eps, tolerance);
    let mut checked = 0;
    let mut worst: Option<GradCheckEntry> = None;
    let mut per_param = Vec::new();
    let ids: Vec<_> = store.trainable().collect();
    for id in ids {
        let numel = store.value(id).numel();
        let mut param_max = 0.0f64;
        for index in 0..numel {
            let original = store.value(id).data()[index];
            store.value_mut(id).data_mut()[index] = original + eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[index] = original - eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[index] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g.data()[index]);
            let rel = relative_error(a, numeric, floor);
            checked += 1;
            param_max = param_max.max(rel);
            if worst.as_ref().is_none_or(|w| rel > w.rel_error) {
                worst = Some(GradCheckEntry {
                    param: store.get(id).name.clone(),
                    index,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        per_param.push((store.get(id).name.clone(), param_max));
    }
    let max_rel_error = worst.as_ref().map_or(0.0, |w| w.rel_error);
    Ok(GradCheckReport {
        checked,
        max_rel_error,
        worst,
        tolerance,
        noise_floor: floor,
        passed: max_rel_error <= tolerance,
        per_param,
    })
}

/// Checks the gradient of `f` with respect to a list of plain tensors.
pub fn grad_check_tensors<F>(inputs: &[Tensor], mut f: F, eps: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("input{i}"), t.clone(), false))
        .collect();
    grad_check(
        &mut store,
        |tape, store| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            f(tape, &vars)
        },
        eps,
        tolerance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::row(vec![1.0, 2.0, 3.0]);
        let report = grad_check_tensors(
            &[x],
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            1e-5,
            1e-7,
        )
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-7, "{report:?}");
        assert!(report.passed);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::row(vec![0.3, -0.7]);
        let report = grad_check_tensors(&[x], |t, _| Ok(t.constant(Tensor::scalar(4.2))), 1e-5, 1e-12).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn detects_non_determinism() {
        let x = Tensor::row(vec![1.0]);
        let mut calls = 0.0;
        let err = grad_check_tensors(
            &[x],
            |t, v| {
                calls += 1.0;
                let c = t.constant(Tensor::row(vec![calls]));
                let y = t.add(v[0], c)?;
                Ok(t.sum(y))
            },
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }

    #[test]
    fn floor_only_matters_below_roundoff() {
        assert_eq!(relative_error(2.0, 2.0, 1e-6), 0.0);
        assert!((relative_error(1.0, 1.0 + 1e-6, 1e-6) - 1e-6 / (1.0 + 1e-6)).abs() < 1e-15);
        assert!(relative_error(0.0, 1e-11, 0.0) == 1.0);
        assert!(relative_error(0.0, 1e-11, noise_floor(2.0, 1e-5, 1e-4)) < 1e-4);
    }

    #[test]
    fn rejects_epsilon_out_of_range() {
        let x = Tensor::row(vec![1.0]);
        assert!(grad_check_tensors(&[x], |t, v| Ok(t.sum(v[0])), 1e-2, 1e-4).is_err());
    }
}
