//! Constrained nonlinear least squares
//!
//! ```text
//!   min  ||r(w)||^2
//!   s.t. c(w) = 0,  lb <= g(w) <= ub,  wl <= w <= wu
//! ```
//!
//! solved by an augmented Lagrangian. Inequalities carry implicit slacks that
//! are minimized out in closed form, so every subproblem is again a sum of
//! squares and is handled by a projected Levenberg-Marquardt iteration.

mod check;
pub mod linalg;
pub mod sparse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{check_derivatives, BlockCheck, DerivativeCheck};
pub use linalg::{Curvature, LinalgError, Structure};
pub use sparse::SparseRows;

pub trait NlpProblem: Sync {
    fn dim(&self) -> usize;

    /// Objective residuals; the objective is their sum of squares.
    fn residuals(&self, w: &[f64]) -> Vec<f64>;
    fn residual_jacobian(&self, w: &[f64]) -> SparseRows;

    fn objective(&self, w: &[f64]) -> f64 {
        self.residuals(w).iter().map(|r| r * r).sum()
    }

    fn objective_gradient(&self, w: &[f64]) -> Vec<f64> {
        let r = self.residuals(w);
        let mut g = self.residual_jacobian(w).tmul(&r);
        g.iter_mut().for_each(|v| *v *= 2.0);
        g
    }

    fn eq(&self, _w: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn eq_jacobian(&self, _w: &[f64]) -> SparseRows {
        SparseRows::new(self.dim())
    }

    /// `(lb, ub)` of the general inequalities; infinite entries allowed.
    fn ineq_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (Vec::new(), Vec::new())
    }

    fn ineq(&self, _w: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn ineq_jacobian(&self, _w: &[f64]) -> SparseRows {
        SparseRows::new(self.dim())
    }

    /// `sum_i a_i H(r_i) + sum_i b_i H(c_i) + sum_j e_j H(g_j)` with `H` the
    /// Hessian, as symmetric entries. Terms may be left out; without any the
    /// inner iteration is plain Gauss-Newton.
    fn curvature(
        &self,
        _w: &[f64],
        _a: &[f64],
        _b: &[f64],
        _e: &[f64],
    ) -> Vec<(usize, usize, f64)> {
        Vec::new()
    }

    fn var_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }

    fn structure(&self) -> Structure {
        Structure::Dense
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub eps_eq: f64,
    pub eps_ineq: f64,
    pub eps_stat: f64,
    /// Cap on inner (Levenberg-Marquardt) iterations over the whole solve.
    pub max_iter: usize,
    pub max_outer: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_eq: 1e-6,
            eps_ineq: 1e-8,
            eps_stat: 1e-5,
            max_iter: 3000,
            max_outer: 60,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e14,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    /// Penalty exhausted, non-finite objective, or no step could be accepted
    /// before reaching the tolerances.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub eq_inf: f64,
    pub ineq_violation: f64,
    pub stationarity: f64,
    pub objective: f64,
    pub penalty: f64,
    pub inner_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub w: Vec<f64>,
    pub objective: f64,
    pub eq_inf: f64,
    pub ineq_violation: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub status: SolveStatus,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub history: Vec<OuterRecord>,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("non-finite {what} at iterate {iterate:?}")]
    EvaluatorFailure {
        what: &'static str,
        iterate: Vec<f64>,
    },
    #[error("starting point has dimension {got}, problem has {want}")]
    Dimension { got: usize, want: usize },
    #[error(transparent)]
    Structure(#[from] LinalgError),
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// `max(lb - g, g - ub, 0)` over all inequalities.
pub fn ineq_violation(g: &[f64], lb: &[f64], ub: &[f64]) -> f64 {
    g.iter()
        .zip(lb.iter().zip(ub))
        .fold(0.0, |m, (&gi, (&l, &u))| m.max(l - gi).max(gi - u))
}

/// `|| P(w - grad) - w ||_inf` for the variable box.
fn projected_gradient(w: &[f64], grad: &[f64], bounds: &Option<(Vec<f64>, Vec<f64>)>) -> f64 {
    match bounds {
        None => inf_norm(grad),
        Some((lo, hi)) => w
            .iter()
            .zip(grad)
            .enumerate()
            .fold(0.0, |m, (i, (&wi, &gi))| {
                m.max((clamp(wi - gi, lo[i], hi[i]) - wi).abs())
            }),
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Gradient of the Lagrangian `grad f + Jc^T lambda + Jg^T mu`.
pub fn lagrangian_gradient<P: NlpProblem + ?Sized>(
    p: &P,
    w: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> Vec<f64> {
    let mut g = p.objective_gradient(w);
    if !lambda.is_empty() {
        p.eq_jacobian(w).tmul_add(lambda, &mut g);
    }
    if !mu.is_empty() {
        p.ineq_jacobian(w).tmul_add(mu, &mut g);
    }
    g
}

/// Optimality measures at `w` for given multipliers: equality infinity norm,
/// inequality violation and projected Lagrangian gradient.
pub fn kkt_measures<P: NlpProblem + ?Sized>(
    p: &P,
    w: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> (f64, f64, f64) {
    let (lb, ub) = p.ineq_bounds();
    let eq = inf_norm(&p.eq(w));
    let viol = ineq_violation(&p.ineq(w), &lb, &ub);
    let stat = projected_gradient(w, &lagrangian_gradient(p, w, lambda, mu), &p.var_bounds());
    (eq, viol, stat)
}

/// The subproblem merit `||R||^2` with
/// `R = [r; sqrt(rho/2) (c + lambda/rho); sqrt(rho/2) e]`, `e` the distance of
/// `g + mu/rho` to `[lb, ub]`.
struct Merit<'a, P: ?Sized> {
    p: &'a P,
    lambda: &'a [f64],
    mu: &'a [f64],
    rho: f64,
    lb: &'a [f64],
    ub: &'a [f64],
}

struct MeritEval {
    r: Vec<f64>,
    n_obj: usize,
    n_eq: usize,
    /// shifted inequality values `g + mu/rho`
    shifted: Vec<f64>,
}

impl<P: NlpProblem + ?Sized> Merit<'_, P> {
    fn eval(&self, w: &[f64]) -> Option<MeritEval> {
        let r0 = self.p.residuals(w);
        let c = self.p.eq(w);
        let g = self.p.ineq(w);
        if !(all_finite(&r0) && all_finite(&c) && all_finite(&g)) {
            return None;
        }
        let s = (self.rho / 2.0).sqrt();
        let (n_obj, n_eq) = (r0.len(), c.len());
        let mut r = r0;
        r.extend(
            c.iter()
                .zip(self.lambda)
                .map(|(ci, li)| s * (ci + li / self.rho)),
        );
        let shifted: Vec<f64> = g
            .iter()
            .zip(self.mu)
            .map(|(gi, mi)| gi + mi / self.rho)
            .collect();
        r.extend(
            shifted
                .iter()
                .enumerate()
                .map(|(i, &v)| s * (v - clamp(v, self.lb[i], self.ub[i]))),
        );
        Some(MeritEval {
            r,
            n_obj,
            n_eq,
            shifted,
        })
    }

    fn jacobian(&self, w: &[f64], ev: &MeritEval) -> SparseRows {
        let s = (self.rho / 2.0).sqrt();
        let mut j = self.p.residual_jacobian(w);
        debug_assert_eq!(j.nrows(), ev.n_obj);
        let jc = self.p.eq_jacobian(w);
        debug_assert_eq!(jc.nrows(), ev.n_eq);
        for row in jc.rows() {
            j.push(row.iter().map(|&(c, v)| (c, s * v)).collect());
        }
        let jg = self.p.ineq_jacobian(w);
        for (i, row) in jg.rows().enumerate() {
            let v = ev.shifted[i];
            if v < self.lb[i] || v > self.ub[i] {
                j.push(row.iter().map(|&(c, x)| (c, s * x)).collect());
            } else {
                j.push(Vec::new());
            }
        }
        j
    }

    /// Second-order part of the merit model, `sum_i R_i H(R_i)`.
    fn curvature(&self, w: &[f64], ev: &MeritEval) -> Vec<(usize, usize, f64)> {
        let s = (self.rho / 2.0).sqrt();
        let (a, rest) = ev.r.split_at(ev.n_obj);
        let (b, e) = rest.split_at(ev.n_eq);
        let b: Vec<f64> = b.iter().map(|v| s * v).collect();
        let e: Vec<f64> = e.iter().map(|v| s * v).collect();
        self.p.curvature(w, a, &b, &e)
    }
}

/// `d^T K d`
fn quad_form(k: &Curvature, d: &[f64]) -> f64 {
    k.iter()
        .map(|&(i, j, v)| {
            if i == j {
                v * d[i] * d[i]
            } else {
                2.0 * v * d[i] * d[j]
            }
        })
        .sum()
}

struct InnerOutcome {
    w: Vec<f64>,
    iterations: usize,
    /// stopped because no step could be accepted
    stalled: bool,
}

/// Projected Levenberg-Marquardt on the merit until its projected gradient
/// drops below `tol`, progress stalls, or `budget` iterations are used.
fn inner_solve<P: NlpProblem + ?Sized>(
    merit: &Merit<'_, P>,
    structure: &Structure,
    bounds: &Option<(Vec<f64>, Vec<f64>)>,
    mut w: Vec<f64>,
    tol: f64,
    budget: usize,
    nu: &mut f64,
    second_order: bool,
) -> Result<InnerOutcome, SolveError> {
    let n = w.len();
    let mut ev = merit.eval(&w).ok_or_else(|| SolveError::EvaluatorFailure {
        what: "residual",
        iterate: w.clone(),
    })?;
    let mut iterations = 0;
    let mut stalled = false;
    let mut cached: Option<SparseRows> = None;
    while iterations < budget {
        let jac = cached.take().unwrap_or_else(|| merit.jacobian(&w, &ev));
        let half_grad = jac.tmul(&ev.r);
        if !all_finite(&half_grad) {
            return Err(SolveError::EvaluatorFailure {
                what: "jacobian",
                iterate: w,
            });
        }
        let grad: Vec<f64> = half_grad.iter().map(|g| 2.0 * g).collect();
        let pg = projected_gradient(&w, &grad, bounds);
        if pg <= tol {
            break;
        }
        // merit changes below this are lost in rounding
        let resolvable = 1e-12 * ev.r.iter().map(|r| r * r).sum::<f64>();
        let curv = if second_order {
            merit.curvature(&w, &ev)
        } else {
            Vec::new()
        };
        iterations += 1;
        let fixed: Vec<bool> = match bounds {
            None => vec![false; n],
            Some((lo, hi)) => (0..n)
                .map(|i| (w[i] <= lo[i] && grad[i] > 0.0) || (w[i] >= hi[i] && grad[i] < 0.0))
                .collect(),
        };
        let mut diag = vec![0.0; n];
        for row in jac.rows() {
            for &(c, v) in row {
                diag[c] += v * v;
            }
        }
        let dmax = diag.iter().fold(0.0f64, |m, &d| m.max(d));
        let floor = 1e-10 * dmax.max(1.0);
        let mut accepted = false;
        while *nu < 1e20 {
            let shift: Vec<f64> = diag.iter().map(|&d| *nu * d.max(floor)).collect();
            let step = match linalg::solve_damped(structure, &jac, &ev.r, &shift, &fixed, &curv) {
                Ok(s) => s,
                Err(LinalgError::RankDeficient(_) | LinalgError::Indefinite) => {
                    *nu *= 10.0;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let trial: Vec<f64> = match bounds {
                None => w.iter().zip(&step).map(|(a, b)| a + b).collect(),
                Some((lo, hi)) => (0..n)
                    .map(|i| clamp(w[i] + step[i], lo[i], hi[i]))
                    .collect(),
            };
            let taken: Vec<f64> = trial.iter().zip(&w).map(|(a, b)| a - b).collect();
            let lin = jac.mul(&taken);
            // both reductions formed without cancellation against the merit value
            let pred = -ev
                .r
                .iter()
                .zip(&lin)
                .map(|(r, l)| l * (2.0 * r + l))
                .sum::<f64>()
                - quad_form(&curv, &taken);
            let Some(tev) = merit.eval(&trial) else {
                *nu *= 4.0;
                continue;
            };
            let actual: f64 =
                ev.r.iter()
                    .zip(&tev.r)
                    .map(|(a, b)| (a - b) * (a + b))
                    .sum();
            if pred > 0.0 && actual > 1e-4 * pred {
                let ratio = actual / pred;
                *nu = (*nu * (1.0f64 / 3.0).max(1.0 - (2.0 * ratio - 1.0).powi(3))).max(1e-12);
                let small = inf_norm(&taken) <= 1e-15 * (1.0 + inf_norm(&w));
                w = trial;
                ev = tev;
                accepted = !small;
                break;
            }
            if pred > 0.0 && pred <= resolvable {
                // judge by the gradient instead
                let tjac = merit.jacobian(&trial, &tev);
                let tgrad: Vec<f64> = tjac.tmul(&tev.r).iter().map(|g| 2.0 * g).collect();
                if all_finite(&tgrad) && projected_gradient(&trial, &tgrad, bounds) < pg {
                    w = trial;
                    ev = tev;
                    cached = Some(tjac);
                    accepted = true;
                    break;
                }
            }
            log::trace!(
                "rejected step: nu={:.1e} pred={pred:.3e} actual={actual:.3e}",
                *nu
            );
            *nu *= 4.0;
        }
        if !accepted {
            // no decrease resolvable at working precision
            *nu = nu.min(1e6);
            stalled = true;
            break;
        }
    }
    Ok(InnerOutcome {
        w,
        iterations,
        stalled,
    })
}

/// Solves the problem from `w0`. Deterministic for fixed inputs.
pub fn solve<P: NlpProblem + ?Sized>(
    p: &P,
    w0: &[f64],
    opts: &SolverOptions,
) -> Result<SolveReport, SolveError> {
    let n = p.dim();
    if w0.len() != n {
        return Err(SolveError::Dimension {
            got: w0.len(),
            want: n,
        });
    }
    let structure = p.structure();
    structure.check(n)?;
    let bounds = p.var_bounds();
    let (lb, ub) = p.ineq_bounds();
    let mut w: Vec<f64> = match &bounds {
        None => w0.to_vec(),
        Some((lo, hi)) => (0..n).map(|i| clamp(w0[i], lo[i], hi[i])).collect(),
    };
    let n_eq = p.eq(&w).len();
    let mut lambda = vec![0.0; n_eq];
    let mut mu = vec![0.0; lb.len()];
    let mut rho = opts.penalty_init;
    let mut nu = 1e-3;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut prev_infeas = f64::INFINITY;
    let mut status = SolveStatus::IterationLimit;

    for outer in 0..opts.max_outer {
        let merit = Merit {
            p,
            lambda: &lambda,
            mu: &mu,
            rho,
            lb: &lb,
            ub: &ub,
        };
        let tol = (0.1f64.powi(outer as i32 + 1)).max(0.5 * opts.eps_stat);
        let budget = opts.max_iter.saturating_sub(iterations);
        let out = inner_solve(
            &merit,
            &structure,
            &bounds,
            w,
            tol,
            budget,
            &mut nu,
            outer > 0,
        )?;
        iterations += out.iterations;
        w = out.w;

        let c = p.eq(&w);
        let g = p.ineq(&w);
        for (l, ci) in lambda.iter_mut().zip(&c) {
            *l += rho * ci;
        }
        let mut comp = 0.0f64;
        for i in 0..mu.len() {
            let v = g[i] + mu[i] / rho;
            let m_new = rho * (v - clamp(v, lb[i], ub[i]));
            // how far an inactive constraint is from releasing its multiplier
            comp = comp.max((g[i] - clamp(g[i] - m_new / rho, lb[i], ub[i])).abs());
            mu[i] = m_new;
        }
        let (eq_inf, viol, stat) = kkt_measures(p, &w, &lambda, &mu);
        let objective = p.objective(&w);
        if !objective.is_finite() {
            status = SolveStatus::Diverged;
            break;
        }
        history.push(OuterRecord {
            eq_inf,
            ineq_violation: viol,
            stationarity: stat,
            objective,
            penalty: rho,
            inner_iterations: out.iterations,
        });
        log::debug!(
            "outer {outer}: f={objective:.6e} eq={eq_inf:.2e} viol={viol:.2e} stat={stat:.2e} rho={rho:.1e} inner={}",
            out.iterations
        );
        if eq_inf <= opts.eps_eq && viol <= opts.eps_ineq && stat <= opts.eps_stat {
            status = SolveStatus::Converged;
            break;
        }
        if iterations >= opts.max_iter {
            status = SolveStatus::IterationLimit;
            break;
        }
        if out.stalled && out.iterations <= 1 {
            status = SolveStatus::Diverged;
            break;
        }
        let infeas = eq_inf.max(viol).max(comp);
        if infeas > 0.25 * prev_infeas {
            rho *= opts.penalty_growth;
        }
        prev_infeas = infeas;
        if rho > opts.penalty_max {
            status = SolveStatus::Diverged;
            break;
        }
    }

    let (eq_inf, viol, stat) = kkt_measures(p, &w, &lambda, &mu);
    Ok(SolveReport {
        objective: p.objective(&w),
        eq_inf,
        ineq_violation: viol,
        stationarity: stat,
        iterations,
        outer_iterations: history.len(),
        status,
        eq_multipliers: lambda,
        ineq_multipliers: mu,
        history,
        w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct NormWithSum;
    impl NlpProblem for NormWithSum {
        fn dim(&self) -> usize {
            2
        }
        fn residuals(&self, w: &[f64]) -> Vec<f64> {
            w.to_vec()
        }
        fn residual_jacobian(&self, _w: &[f64]) -> SparseRows {
            let mut j = SparseRows::new(2);
            j.push(vec![(0, 1.0)]);
            j.push(vec![(1, 1.0)]);
            j
        }
        fn eq(&self, w: &[f64]) -> Vec<f64> {
            vec![w[0] + w[1] - 1.0]
        }
        fn eq_jacobian(&self, _w: &[f64]) -> SparseRows {
            let mut j = SparseRows::new(2);
            j.push(vec![(0, 1.0), (1, 1.0)]);
            j
        }
    }

    #[test]
    fn equality_constrained_norm() {
        let rep = solve(&NormWithSum, &[3.0, -2.0], &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        assert!(
            (rep.w[0] - 0.5).abs() < 1e-6 && (rep.w[1] - 0.5).abs() < 1e-6,
            "{:?}",
            rep.w
        );
        assert!((rep.eq_multipliers[0] + 1.0).abs() < 1e-5);
    }

    struct Shifted {
        as_bound: bool,
    }
    impl NlpProblem for Shifted {
        fn dim(&self) -> usize {
            1
        }
        fn residuals(&self, w: &[f64]) -> Vec<f64> {
            vec![w[0] - 2.0]
        }
        fn residual_jacobian(&self, _w: &[f64]) -> SparseRows {
            let mut j = SparseRows::new(1);
            j.push(vec![(0, 1.0)]);
            j
        }
        fn ineq_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            if self.as_bound {
                (vec![], vec![])
            } else {
                (vec![0.0], vec![1.0])
            }
        }
        fn ineq(&self, w: &[f64]) -> Vec<f64> {
            if self.as_bound {
                vec![]
            } else {
                vec![w[0]]
            }
        }
        fn ineq_jacobian(&self, _w: &[f64]) -> SparseRows {
            let mut j = SparseRows::new(1);
            if !self.as_bound {
                j.push(vec![(0, 1.0)]);
            }
            j
        }
        fn var_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
            self.as_bound.then(|| (vec![0.0], vec![1.0]))
        }
    }

    #[test]
    fn active_bound_both_ways() {
        for as_bound in [true, false] {
            let rep = solve(&Shifted { as_bound }, &[0.2], &SolverOptions::default()).unwrap();
            assert_eq!(rep.status, SolveStatus::Converged, "{rep:?}");
            assert!((rep.w[0] - 1.0).abs() < 1e-8, "{as_bound}: {:?}", rep.w);
            assert!(rep.ineq_violation <= 1e-8);
        }
    }

    pub(super) struct RosenCircle;
    impl NlpProblem for RosenCircle {
        fn dim(&self) -> usize {
            2
        }
        fn residuals(&self, w: &[f64]) -> Vec<f64> {
            vec![1.0 - w[0], 10.0 * (w[1] - w[0] * w[0])]
        }
        fn residual_jacobian(&self, w: &[f64]) -> SparseRows {
            let mut j = SparseRows::new(2);
            j.push(vec![(0, -1.0)]);
            j.push(vec![(0, -20.0 * w[0]), (1, 10.0)]);
            j
        }
        fn eq(&self, w: &[f64]) -> Vec<f64> {
            vec![w[0] * w[0] + w[1] * w[1] - 1.0]
        }
        fn eq_jacobian(&self, w: &[f64]) -> SparseRows {
            let mut j = SparseRows::new(2);
            j.push(vec![(0, 2.0 * w[0]), (1, 2.0 * w[1])]);
            j
        }
    }

    /// Minimizes over the circle by repeated grid refinement of the angle.
    fn circle_oracle() -> [f64; 2] {
        let f = |t: f64| {
            let (x, y) = (t.cos(), t.sin());
            (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
        };
        let (mut lo, mut hi) = (-std::f64::consts::PI, std::f64::consts::PI);
        let mut best = 0.0;
        for _ in 0..12 {
            let m = 2000;
            let h = (hi - lo) / m as f64;
            best = (0..=m)
                .map(|k| lo + k as f64 * h)
                .min_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
                .unwrap();
            lo = best - 2.0 * h;
            hi = best + 2.0 * h;
        }
        [best.cos(), best.sin()]
    }

    #[test]
    fn rosenbrock_on_circle_matches_grid_oracle() {
        let want = circle_oracle();
        let rep = solve(&RosenCircle, &[0.5, 0.5], &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        for i in 0..2 {
            assert!((rep.w[i] - want[i]).abs() < 1e-4, "{:?} vs {want:?}", rep.w);
        }
    }

    #[test]
    fn feasibility_trend_and_reported_measures() {
        let rep = solve(&RosenCircle, &[-0.3, 1.5], &SolverOptions::default()).unwrap();
        let eq: Vec<f64> = rep.history.iter().map(|h| h.eq_inf).collect();
        for win in eq.windows(3).skip(1) {
            assert!(win[2] <= 10.0 * win[0], "{eq:?}");
        }
        let (e, v, s) = kkt_measures(
            &RosenCircle,
            &rep.w,
            &rep.eq_multipliers,
            &rep.ineq_multipliers,
        );
        assert!((e - rep.eq_inf).abs() <= 1e-12);
        assert!((v - rep.ineq_violation).abs() <= 1e-12);
        assert!((s - rep.stationarity).abs() <= 1e-12);
        assert!((RosenCircle.objective(&rep.w) - rep.objective).abs() <= 1e-12);
    }

    #[test]
    fn repeat_solves_serialize_identically() {
        let a = serde_json::to_string(
            &solve(&RosenCircle, &[0.1, 0.9], &SolverOptions::default()).unwrap(),
        )
        .unwrap();
        let b = serde_json::to_string(
            &solve(&RosenCircle, &[0.1, 0.9], &SolverOptions::default()).unwrap(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let opts = SolverOptions {
            max_iter: 1,
            ..Default::default()
        };
        let rep = solve(&RosenCircle, &[-0.3, 1.5], &opts).unwrap();
        assert_eq!(rep.status, SolveStatus::IterationLimit);
    }

    struct Blows;
    impl NlpProblem for Blows {
        fn dim(&self) -> usize {
            1
        }
        fn residuals(&self, w: &[f64]) -> Vec<f64> {
            vec![w[0].ln()]
        }
        fn residual_jacobian(&self, w: &[f64]) -> SparseRows {
            let mut j = SparseRows::new(1);
            j.push(vec![(0, 1.0 / w[0])]);
            j
        }
    }

    #[test]
    fn non_finite_start_is_an_evaluator_failure() {
        let err = solve(&Blows, &[-1.0], &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, SolveError::EvaluatorFailure { .. }));
        let rep = solve(&Blows, &[3.0], &SolverOptions::default()).unwrap();
        assert!((rep.w[0] - 1.0).abs() < 1e-5, "{rep:?}");
    }

    #[test]
    fn options_round_trip() {
        let o: SolverOptions = serde_json::from_str(r#"{"eps_eq": 1e-7}"#).unwrap();
        assert_eq!(o.eps_eq, 1e-7);
        assert_eq!(o.penalty_growth, 10.0);
    }
}
