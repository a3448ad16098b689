//! Gridless channel estimation by atomic-norm minimization in factored form.
//!
//! The positive-semidefinite variable `Psi = Gamma Gamma^H` is never formed:
//! the solver works on `Gamma = [Gamma0; Gamma1]`, where `Gamma0` spans the
//! channel space and `Gamma1` is a single row, so that the channel estimate is
//! `h = Gamma0 Gamma1^H`. The block-Toeplitz constraint on `Gamma0 Gamma0^H`
//! enters as a quadratic penalty, and decision errors in the data-aided mode
//! are modelled by an extra variable `e` with a smoothed l1 cost.

mod objective;
mod solver;

pub use objective::{grad_e, grad_gamma, objective, smooth_l1, Gradient, ObjectiveContext, Sensing};
pub use solver::{cg_data, cg_pilot, cgd_solve, cgd_solve_observed, init_factors, IterationRecord, Solution, StopReason};

use crate::error::{domain, Result};
use crate::linalg::{CMat, CVec};

/// The factors of `Psi = [Gamma0; Gamma1] [Gamma0; Gamma1]^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// `N x rank` with `N = Nt Nr`.
    pub gamma0: CMat,
    /// `1 x rank`.
    pub gamma1: CMat,
}

impl FactorPair {
    pub fn new(gamma0: CMat, gamma1: CMat) -> Result<Self> {
        if gamma1.nrows() != 1 || gamma1.ncols() != gamma0.ncols() {
            return Err(domain(format!(
                "Gamma1 must be 1 x {}, got {:?}",
                gamma0.ncols(),
                gamma1.shape()
            )));
        }
        Ok(Self { gamma0, gamma1 })
    }

    pub fn zeros(n: usize, rank: usize) -> Self {
        Self { gamma0: CMat::zeros(n, rank), gamma1: CMat::zeros(1, rank) }
    }

    pub fn rank_bound(&self) -> usize {
        self.gamma0.ncols()
    }

    /// `h = Gamma0 Gamma1^H`.
    pub fn channel(&self) -> CVec {
        let h = &self.gamma0 * self.gamma1.adjoint();
        CVec::from_column_slice(h.as_slice())
    }

    /// `Psi0 = Gamma0 Gamma0^H`.
    pub fn psi0(&self) -> CMat {
        &self.gamma0 * self.gamma0.adjoint()
    }

    /// `epsilon = Gamma1 Gamma1^H`.
    pub fn epsilon(&self) -> f64 {
        self.gamma1.norm_squared()
    }

    /// The stacked `(N + 1) x rank` factor.
    pub fn stacked(&self) -> CMat {
        let (n, r) = self.gamma0.shape();
        let mut g = CMat::zeros(n + 1, r);
        g.rows_mut(0, n).copy_from(&self.gamma0);
        g.rows_mut(n, 1).copy_from(&self.gamma1);
        g
    }

    /// `Psi = Gamma Gamma^H` of size `(N + 1) x (N + 1)`.
    pub fn psi(&self) -> CMat {
        let g = self.stacked();
        &g * g.adjoint()
    }
}

/// Armijo backtracking constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Armijo {
    pub c: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for Armijo {
    fn default() -> Self {
        Self { c: 1e-4, shrink: 0.5, initial_step: 1.0, max_backtracks: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Atomic-norm weight.
    pub mu: f64,
    /// Weight of the smoothed l1 cost on `e`.
    pub lambda: f64,
    /// Smoothing width of the l1 surrogate.
    pub tau: f64,
    /// Toeplitz penalty weight.
    pub rho: f64,
    /// Stop once the Frobenius norm of the `Gamma` gradient is at most this.
    pub eps_stop: f64,
    pub max_iters: usize,
    /// Number of columns `L̄` of `Gamma`.
    pub rank: usize,
    pub armijo: Armijo,
}

impl SolverParams {
    /// Defaults for noise standard deviation `sigma` and channel length `n`:
    /// `mu = sigma sqrt(n ln n)`, `lambda = mu / sqrt(n)`, `tau = 0.01`,
    /// `rho = 5`, rank 9.
    pub fn for_noise(sigma: f64, n: usize) -> Self {
        let nf = n as f64;
        let mu = sigma * (nf * nf.ln().max(1.0)).sqrt();
        Self {
            mu,
            lambda: mu / nf.sqrt(),
            tau: 0.01,
            rho: 5.0,
            eps_stop: 0.01,
            max_iters: 1000,
            rank: 9,
            armijo: Armijo::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("mu", self.mu), ("tau", self.tau), ("rho", self.rho), ("eps_stop", self.eps_stop)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(domain(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.rank == 0 {
            return Err(domain("rank bound must be positive"));
        }
        let a = &self.armijo;
        if !(a.c > 0.0 && a.c < 1.0 && a.shrink > 0.0 && a.shrink < 1.0 && a.initial_step > 0.0) {
            return Err(domain("invalid Armijo constants"));
        }
        Ok(())
    }
}
