use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `|a − b| / max(1e−8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Worst coordinate found by [`grad_check_detail`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_error: f64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares reverse-mode gradients of a scalar function with central
/// differences `(f(x + εe) − f(x − εe)) / 2ε`, coordinate by coordinate, and
/// returns the largest [`relative_error`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    Ok(grad_check_detail(f, x, eps)?.max_error)
}

/// [`grad_check`], also reporting where the worst error occurred.
pub fn grad_check_detail<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let analytic = {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let loss = f(&tape, xv)?;
        tape.backward(loss)?.wrt(xv)
    };
    let eval = |point: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.constant(point);
        let out = f(&tape, xv)?;
        let v = out.value();
        Ok(v.item())
    };
    let mut worst = GradCheck {
        max_error: 0.0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = relative_error(analytic.data()[i], numeric);
        if err > worst.max_error || i == 0 {
            worst = GradCheck {
                max_error: err,
                index: i,
                analytic: analytic.data()[i],
                numeric,
            };
        }
    }
    Ok(worst)
}
