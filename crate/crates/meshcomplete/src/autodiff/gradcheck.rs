//! Central finite-difference verification of analytic gradients.

use super::{AutodiffError, Tape, Tensor, Value};

/// Compares the tape gradient of `f` at `x` against central finite
/// differences with the given step, returning the maximum over coordinates
/// of `|analytic - fd| / max(1, |fd|)`.
///
/// `f` must build a scalar loss from its input on the supplied tape; it is
/// re-invoked on a fresh tape for every perturbed evaluation.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&Tape, &Value) -> Result<Value, AutodiffError>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let loss = f(&tape, &leaf)?;
    tape.backward(&loss)?;
    let analytic = tape.grad(&leaf);

    let eval = |data: Tensor| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let leaf = tape.leaf(data, false);
        Ok(f(&tape, &leaf)?.item())
    };

    let mut max_err = 0.0f64;
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(i, j, x.get(i, j) + step);
            let mut minus = x.clone();
            minus.set(i, j, x.get(i, j) - step);
            let fd = (eval(plus)? - eval(minus)?) / (2.0 * step);
            let err = (analytic.get(i, j) - fd).abs() / fd.abs().max(1.0);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

/// Like [`grad_check`] but only over a subset of coordinates, for expensive
/// composites.
pub fn grad_check_coords<F>(
    f: F,
    x: &Tensor,
    step: f64,
    coords: &[(usize, usize)],
) -> Result<f64, AutodiffError>
where
    F: Fn(&Tape, &Value) -> Result<Value, AutodiffError>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let loss = f(&tape, &leaf)?;
    tape.backward(&loss)?;
    let analytic = tape.grad(&leaf);

    let eval = |data: Tensor| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let leaf = tape.leaf(data, false);
        Ok(f(&tape, &leaf)?.item())
    };

    let mut max_err = 0.0f64;
    for &(i, j) in coords {
        let mut plus = x.clone();
        plus.set(i, j, x.get(i, j) + step);
        let mut minus = x.clone();
        minus.set(i, j, x.get(i, j) - step);
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let err = (analytic.get(i, j) - fd).abs() / fd.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
