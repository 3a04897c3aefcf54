//! Finite-difference gradient checking, shared by unit tests and the
//! acceptance suite.

use crate::tape::{NodeId, Tape};
use indexmap::IndexMap;
use ndarray::Array2;

/// Relative L2 distance between two gradients. The denominator floor keeps
/// the comparison meaningful for parameters whose true gradient is zero
/// (for example a key-projection bias, which cancels inside the softmax):
/// both sides are then pure roundoff.
pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let na = a.mapv(|x| x * x).sum().sqrt();
    let nb = b.mapv(|x| x * x).sum().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Check the tape gradient of `build` against central finite differences for
/// every named input. `build` must construct the loss from scratch on the
/// given tape using exactly the provided values, returning the `1 x 1` loss
/// node. Panics with a diagnostic if any relative error exceeds `tol`.
pub fn fd_check_tape<F>(inputs: &[(&str, Array2<f64>)], build: F, h: f64, tol: f64)
where
    F: Fn(&mut Tape, &IndexMap<String, Array2<f64>>) -> NodeId,
{
    let errs = fd_errors(inputs, build, h);
    for (name, err) in errs {
        assert!(err < tol, "finite-difference mismatch for `{name}`: rel err {err:.3e} >= {tol:e}");
    }
}

/// Like [`fd_check_tape`] but returns the per-input relative errors.
pub fn fd_errors<F>(inputs: &[(&str, Array2<f64>)], build: F, h: f64) -> Vec<(String, f64)>
where
    F: Fn(&mut Tape, &IndexMap<String, Array2<f64>>) -> NodeId,
{
    let mut vals: IndexMap<String, Array2<f64>> = IndexMap::new();
    for (name, v) in inputs {
        vals.insert((*name).to_string(), v.clone());
    }

    let mut tape = Tape::new();
    let loss = build(&mut tape, &vals);
    tape.backward(loss);
    let analytic = tape.param_grads();

    let mut out = Vec::new();
    for (name, v) in inputs {
        let mut fd = Array2::zeros(v.raw_dim());
        for idx in ndarray::indices(v.raw_dim()) {
            let orig = vals[*name][idx];
            vals[*name][idx] = orig + h;
            let mut tp = Tape::new();
            let lp = build(&mut tp, &vals);
            let fp = tp.scalar(lp);
            vals[*name][idx] = orig - h;
            let mut tm = Tape::new();
            let lm = build(&mut tm, &vals);
            let fm = tm.scalar(lm);
            vals[*name][idx] = orig;
            fd[idx] = (fp - fm) / (2.0 * h);
        }
        // Inputs the loss never touches have zero analytic gradient.
        let zero = Array2::zeros(v.raw_dim());
        let ana = analytic.get(*name).unwrap_or(&zero);
        let err = rel_err(ana, &fd);
        out.push(((*name).to_string(), err));
    }
    out
}
