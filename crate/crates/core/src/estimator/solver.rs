use rand::Rng;

use super::objective::{evaluate, Gradient, ObjectiveContext, Sensing};
use super::{FactorPair, SolverParams};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, re_inner, CMat, CVec, C64};
use crate::signal::{Combiner, MeasurementBlock};

/// One accepted iterate of the conjugate-gradient solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 0 for the initial point.
    pub iteration: usize,
    pub objective: f64,
    /// Frobenius norm of the `Gamma` gradient at this iterate.
    pub grad_norm: f64,
    /// Accepted step size (0 for the initial point).
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The `Gamma` gradient norm fell to the tolerance.
    Converged,
    MaxIterations,
    /// Backtracking found no decrease; the last iterate is kept.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub factors: FactorPair,
    pub e: CVec,
    pub trace: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl Solution {
    /// `h = Gamma0 Gamma1^H`.
    pub fn channel(&self) -> CVec {
        self.factors.channel()
    }

    /// Number of accepted updates.
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }

    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.objective)
    }
}

/// Random starting factors with i.i.d. `CN(0, 1 / (n rank))` entries.
pub fn init_factors<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> FactorPair {
    let var = 1.0 / (n * rank) as f64;
    let g = gaussian_matrix(rng, n + 1, rank, var);
    FactorPair { gamma0: g.rows(0, n).into_owned(), gamma1: g.rows(n, 1).into_owned() }
}

fn inner(a: &Gradient, b: &Gradient) -> f64 {
    re_inner(a.gamma0.as_slice(), b.gamma0.as_slice())
        + re_inner(a.gamma1.as_slice(), b.gamma1.as_slice())
        + re_inner(a.e.as_slice(), b.e.as_slice())
}

fn axpy(a: f64, x: &Gradient, y: &Gradient) -> Gradient {
    let s = C64::new(a, 0.0);
    Gradient {
        gamma0: &x.gamma0 * s + &y.gamma0,
        gamma1: &x.gamma1 * s + &y.gamma1,
        e: &x.e * s + &y.e,
    }
}

fn negated(g: &Gradient) -> Gradient {
    Gradient { gamma0: -&g.gamma0, gamma1: -&g.gamma1, e: -&g.e }
}

fn stepped(f: &FactorPair, e: &CVec, step: f64, d: &Gradient) -> (FactorPair, CVec) {
    let s = C64::new(step, 0.0);
    (
        FactorPair { gamma0: &f.gamma0 + &d.gamma0 * s, gamma1: &f.gamma1 + &d.gamma1 * s },
        e + &d.e * s,
    )
}

fn non_finite(iteration: usize, what: &str) -> Error {
    Error::Solver { iteration, message: format!("non-finite {what}") }
}

/// Nonlinear conjugate gradient (Hestenes-Stiefel weights) with Armijo
/// backtracking over `(Gamma, e)`.
pub fn cgd_solve(init: FactorPair, e_init: CVec, ctx: &ObjectiveContext, params: &SolverParams) -> Result<Solution> {
    cgd_solve_observed(init, e_init, ctx, params, &mut |_, _, _| {})
}

/// As [`cgd_solve`], calling `observer` on the initial point and every accepted iterate.
pub fn cgd_solve_observed(
    init: FactorPair,
    e_init: CVec,
    ctx: &ObjectiveContext,
    params: &SolverParams,
    observer: &mut dyn FnMut(&IterationRecord, &FactorPair, &CVec),
) -> Result<Solution> {
    params.validate()?;
    let armijo = params.armijo;
    let mut f = init;
    let mut e = e_init;
    let ev = evaluate(&f, e.as_slice(), ctx, params, true)?;
    let mut value = ev.value;
    let mut grad = ev.gradient.expect("requested");
    if !value.is_finite() {
        return Err(non_finite(0, "initial objective"));
    }
    let first = IterationRecord { iteration: 0, objective: value, grad_norm: grad.gamma_norm(), step: 0.0 };
    observer(&first, &f, &e);
    let mut trace = vec![first];

    let mut prev: Option<(Gradient, Gradient)> = None;
    let mut stop = StopReason::MaxIterations;
    for iteration in 1..=params.max_iters {
        if grad.gamma_norm() <= params.eps_stop {
            stop = StopReason::Converged;
            break;
        }
        let steepest = negated(&grad);
        let mut dir = match &prev {
            Some((g_prev, d_prev)) => {
                let diff = axpy(-1.0, g_prev, &grad);
                let den = inner(d_prev, &diff);
                if den.abs() < 1e-12 {
                    steepest.clone()
                } else {
                    axpy(inner(&grad, &diff) / den, d_prev, &steepest)
                }
            }
            None => steepest.clone(),
        };
        let mut slope = inner(&grad, &dir);
        if !(slope < 0.0) {
            dir = steepest;
            slope = inner(&grad, &dir);
        }

        let mut step = armijo.initial_step;
        let mut accepted = None;
        for _ in 0..=armijo.max_backtracks {
            let (f_try, e_try) = stepped(&f, &e, step, &dir);
            let v = evaluate(&f_try, e_try.as_slice(), ctx, params, false)?.value;
            // a non-finite trial is treated as insufficient decrease
            if v.is_finite() && v <= value + armijo.c * step * slope {
                accepted = Some((f_try, e_try));
                break;
            }
            step *= armijo.shrink;
        }
        let Some((f_new, e_new)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        f = f_new;
        e = e_new;
        let ev = evaluate(&f, e.as_slice(), ctx, params, true)?;
        if !ev.value.is_finite() {
            return Err(non_finite(iteration, "objective"));
        }
        value = ev.value;
        let new_grad = ev.gradient.expect("requested");
        if !new_grad.gamma_norm().is_finite() {
            return Err(non_finite(iteration, "gradient"));
        }
        prev = Some((std::mem::replace(&mut grad, new_grad), dir));
        let rec = IterationRecord { iteration, objective: value, grad_norm: grad.gamma_norm(), step };
        observer(&rec, &f, &e);
        trace.push(rec);
    }
    if stop == StopReason::MaxIterations && grad.gamma_norm() <= params.eps_stop {
        stop = StopReason::Converged;
    }
    Ok(Solution { factors: f, e, trace, stop })
}

/// Pilot-only estimate from a block with known transmit matrix.
pub fn cg_pilot<R: Rng + ?Sized>(block: &MeasurementBlock, params: &SolverParams, rng: &mut R) -> Result<Solution> {
    let y = CVec::from_column_slice(block.y.as_slice());
    let ctx = ObjectiveContext::new(y, block.w.clone(), Sensing::Pilot { x: block.x.clone() })?;
    let init = init_factors(ctx.channel_len(), params.rank, rng);
    cgd_solve(init, CVec::zeros(0), &ctx, params)
}

/// Joint estimate of the channel and the demodulation error of a data block.
///
/// `sensing` carries the demodulated symbols (`HbData` or `GsmData`); the
/// returned `e` is `vec` of the estimated error matrix.
pub fn cg_data<R: Rng + ?Sized>(
    y: &CMat,
    w: &Combiner,
    sensing: Sensing,
    params: &SolverParams,
    rng: &mut R,
) -> Result<Solution> {
    let y = CVec::from_column_slice(y.as_slice());
    let ctx = ObjectiveContext::new(y, w.clone(), sensing)?;
    let init = init_factors(ctx.channel_len(), params.rank, rng);
    let e0 = CVec::zeros(ctx.error_len());
    cgd_solve(init, e0, &ctx, params)
}
