use alloc::vec::Vec;

use super::{Graph, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Gradients smaller than this are compared absolutely rather than relatively,
/// since central differences cannot resolve them to a relative tolerance.
const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub passed: bool,
}

/// Compares the backward-pass gradient of `f` at `x` with central finite
/// differences on every coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, &coords, h, tol)
}

/// Like [`grad_check`] but only probes the listed flat coordinates.
pub fn grad_check_coords<F>(
    f: F,
    x: &Tensor,
    coords: &[usize],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(h > 0.0 && tol > 0.0) {
        return Err(Error::Config(alloc::format!(
            "grad_check needs h > 0 and tol > 0, got h={h}, tol={tol}"
        )));
    }
    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(t, false);
        let out = f(&mut g, v)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let out = f(&mut g, xv)?;
    g.backward(out)?;
    let full = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));

    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0;
    for &c in coords {
        if c >= x.len() {
            return Err(Error::IndexOutOfRange {
                what: "coordinate",
                index: c,
                limit: x.len(),
            });
        }
        let mut plus = x.clone();
        plus.data_mut()[c] += h;
        let mut minus = x.clone();
        minus.data_mut()[c] -= h;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let an = full.data()[c];
        let denom = an.abs().max(fd.abs()).max(REL_FLOOR);
        let rel = (an - fd).abs() / denom;
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = c;
        }
        analytic.push(an);
        numeric.push(fd);
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
        passed: max_rel_error < tol,
    })
}
