//! Central finite-difference verification of supplied derivatives.

use rayon::prelude::*;
use serde::Serialize;

use super::sparse::SparseRows;
use super::NlpProblem;

/// Worst entry of one derivative block.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCheck {
    pub block: String,
    pub max_rel_error: f64,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub finite_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub max_rel_error: f64,
    pub blocks: Vec<BlockCheck>,
}

fn rel_err(a: f64, fd: f64) -> f64 {
    let e = (a - fd).abs() / fd.abs().max(1.0);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

fn step(wi: f64) -> f64 {
    1e-6 * (1.0 + wi.abs())
}

/// Compares one Jacobian against central differences of `f`, column by column.
fn check_jacobian<F>(name: &str, w: &[f64], jac: &SparseRows, f: F) -> BlockCheck
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let cols = jac.columns();
    let m = jac.nrows();
    let worst = (0..w.len())
        .into_par_iter()
        .map(|j| {
            let h = step(w[j]);
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[j] += h;
            wm[j] -= h;
            let (fp, fm) = (f(&wp), f(&wm));
            let mut analytic = vec![0.0; m];
            for &(r, v) in &cols[j] {
                analytic[r] += v;
            }
            let mut best = (0.0, 0, j, 0.0, 0.0);
            for r in 0..m {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                let e = rel_err(analytic[r], fd);
                if e > best.0 {
                    best = (e, r, j, analytic[r], fd);
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0, 0, 0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    BlockCheck {
        block: name.to_string(),
        max_rel_error: worst.0,
        row: worst.1,
        col: worst.2,
        analytic: worst.3,
        finite_difference: worst.4,
    }
}

/// Worst relative discrepancy `|a - fd| / max(|fd|, 1)` between supplied and
/// finite-difference derivatives, per block and overall.
pub fn check_derivatives<P: NlpProblem + ?Sized>(p: &P, w: &[f64]) -> DerivativeCheck {
    let mut grad = SparseRows::new(w.len());
    grad.push(p.objective_gradient(w).into_iter().enumerate().collect());
    let mut blocks = vec![check_jacobian("objective_gradient", w, &grad, |x| {
        vec![p.objective(x)]
    })];
    blocks.push(check_jacobian(
        "residual_jacobian",
        w,
        &p.residual_jacobian(w),
        |x| p.residuals(x),
    ));
    if !p.eq(w).is_empty() {
        blocks.push(check_jacobian("eq_jacobian", w, &p.eq_jacobian(w), |x| {
            p.eq(x)
        }));
    }
    if !p.ineq(w).is_empty() {
        blocks.push(check_jacobian(
            "ineq_jacobian",
            w,
            &p.ineq_jacobian(w),
            |x| p.ineq(x),
        ));
    }
    let max_rel_error = blocks.iter().fold(0.0f64, |m, b| m.max(b.max_rel_error));
    DerivativeCheck {
        max_rel_error,
        blocks,
    }
}
