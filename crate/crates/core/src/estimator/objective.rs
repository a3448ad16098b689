use super::{FactorPair, SolverParams};
use crate::error::{domain, Result};
use crate::linalg::{norm_sqr, CMat, CVec, C64, ONE};
use crate::signal::{measurement_adjoint, measurement_apply, spread, Combiner};
use crate::toeplitz::{FactoredToeplitz, ToeplitzShape};

/// How the transmit matrix seen by the channel depends on the error variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Sensing {
    /// Known transmit matrix; there is no error variable.
    Pilot { x: CMat },
    /// Hybrid beamforming data block: `X = F (S + E)` with `e = vec(E)` of length `Ms K`.
    HbData { precoder: CMat, symbols: CMat },
    /// GSM data block: `X = X + E` with `e = vec(E)` of length `Nt K`.
    GsmData { symbols: CMat },
}

/// Observation and measurement model shared by every evaluation of one solve.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    y: CVec,
    w: Combiner,
    sensing: Sensing,
    tx: usize,
    rx: usize,
    toeplitz: FactoredToeplitz,
}

impl ObjectiveContext {
    /// `y` is `vec(Y)` of length `nr K`; `w` acts on an `rx`-element array.
    pub fn new(y: CVec, w: Combiner, sensing: Sensing) -> Result<Self> {
        let (tx, slots) = match &sensing {
            Sensing::Pilot { x } | Sensing::GsmData { symbols: x } => (x.nrows(), x.ncols()),
            Sensing::HbData { precoder, symbols } => {
                if precoder.ncols() != symbols.nrows() {
                    return Err(domain("precoder and symbol matrix disagree in stream count"));
                }
                (precoder.nrows(), symbols.ncols())
            }
        };
        if let Combiner::PerSlot(ws) = &w {
            if ws.len() != slots {
                return Err(domain(format!("{} per-slot combiners for {slots} slots", ws.len())));
            }
        }
        let rx = w.antennas();
        if y.len() != w.outputs() * slots {
            return Err(domain(format!("observation length {} != {} * {slots}", y.len(), w.outputs())));
        }
        let shape = ToeplitzShape::for_channel(tx, rx)?;
        Ok(Self { y, w, sensing, tx, rx, toeplitz: FactoredToeplitz::new(shape) })
    }

    pub fn y(&self) -> &CVec {
        &self.y
    }

    pub fn combiner(&self) -> &Combiner {
        &self.w
    }

    pub fn sensing(&self) -> &Sensing {
        &self.sensing
    }

    pub fn tx_antennas(&self) -> usize {
        self.tx
    }

    pub fn rx_antennas(&self) -> usize {
        self.rx
    }

    pub fn channel_len(&self) -> usize {
        self.tx * self.rx
    }

    /// Length of the error variable (0 in pilot mode).
    pub fn error_len(&self) -> usize {
        match &self.sensing {
            Sensing::Pilot { .. } => 0,
            Sensing::HbData { symbols, .. } | Sensing::GsmData { symbols } => symbols.len(),
        }
    }

    pub fn is_data_aided(&self) -> bool {
        self.error_len() > 0
    }

    /// Transmit matrix `X(e)`.
    pub fn transmit(&self, e: &[C64]) -> CMat {
        match &self.sensing {
            Sensing::Pilot { x } => x.clone(),
            Sensing::HbData { precoder, symbols } => {
                let mut s = symbols.clone();
                add_error(&mut s, e);
                precoder * s
            }
            Sensing::GsmData { symbols } => {
                let mut x = symbols.clone();
                add_error(&mut x, e);
                x
            }
        }
    }

    fn check(&self, f: &FactorPair, e: &[C64]) -> Result<()> {
        if f.gamma0.nrows() != self.channel_len() {
            return Err(domain(format!(
                "Gamma0 has {} rows, expected {}",
                f.gamma0.nrows(),
                self.channel_len()
            )));
        }
        if f.gamma1.nrows() != 1 || f.gamma1.ncols() != f.gamma0.ncols() {
            return Err(domain("Gamma1 must be a single row matching Gamma0"));
        }
        if e.len() != self.error_len() {
            return Err(domain(format!("error vector length {} != {}", e.len(), self.error_len())));
        }
        Ok(())
    }
}

fn add_error(m: &mut CMat, e: &[C64]) {
    if !e.is_empty() {
        for (a, b) in m.iter_mut().zip(e) {
            *a += b;
        }
    }
}

/// `tau sum log cosh(|e_m| / tau)` and its gradient `tanh(|e_m| / tau) e_m / |e_m|`.
pub fn smooth_l1(e: &[C64], tau: f64) -> (f64, CVec) {
    let mut value = 0.0;
    let mut grad = CVec::zeros(e.len());
    for (g, z) in grad.iter_mut().zip(e) {
        let a = z.norm();
        let x = a / tau;
        // log cosh x = x + log(1 + e^{-2x}) - log 2, stable for large x
        value += tau * (x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2);
        if a > 0.0 {
            *g = z * (x.tanh() / a);
        }
    }
    (value, grad)
}

/// Gradient with respect to the real and imaginary parts, packed as
/// `d/dRe + i d/dIm`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub gamma0: CMat,
    pub gamma1: CMat,
    pub e: CVec,
}

impl Gradient {
    /// Frobenius norm of the `Gamma` part.
    pub fn gamma_norm(&self) -> f64 {
        (self.gamma0.norm_squared() + self.gamma1.norm_squared()).sqrt()
    }
}

pub(crate) struct Evaluation {
    pub value: f64,
    pub gradient: Option<Gradient>,
}

pub(crate) fn evaluate(
    f: &FactorPair,
    e: &[C64],
    ctx: &ObjectiveContext,
    params: &SolverParams,
    with_gradient: bool,
) -> Result<Evaluation> {
    ctx.check(f, e)?;
    let n = ctx.channel_len() as f64;
    let h = f.channel();
    let x = ctx.transmit(e);
    let mut r = measurement_apply(&x, &ctx.w, h.as_slice())?;
    r -= &ctx.y;

    let data = 0.5 * norm_sqr(r.as_slice());
    let trace = params.mu / (2.0 * n) * f.gamma0.norm_squared() + params.mu / 2.0 * f.gamma1.norm_squared();
    let (l1, l1_grad) = if e.is_empty() { (0.0, CVec::zeros(0)) } else { smooth_l1(e, params.tau) };

    if !with_gradient {
        let pen = ctx.toeplitz.penalty(&f.gamma0)?;
        let value = trace + data + params.rho / 2.0 * pen + params.lambda * l1;
        return Ok(Evaluation { value, gradient: None });
    }

    let terms = ctx.toeplitz.penalty_terms(&f.gamma0)?;
    let value = trace + data + params.rho / 2.0 * terms.value + params.lambda * l1;

    let g_h = measurement_adjoint(&x, &ctx.w, r.as_slice())?;
    let g_h = CMat::from_column_slice(g_h.len(), 1, g_h.as_slice());
    let gram = f.gamma0.adjoint() * &f.gamma0;
    let mut gamma0 = &f.gamma0 * C64::new(params.mu / n, 0.0) + &g_h * &f.gamma1;
    gamma0 += (&f.gamma0 * gram - terms.projected_times_gamma) * C64::new(2.0 * params.rho, 0.0);
    let gamma1 = &f.gamma1 * C64::new(params.mu, 0.0) + g_h.adjoint() * &f.gamma0;

    let e_grad = if e.is_empty() {
        CVec::zeros(0)
    } else {
        // d/dX of the data term is H^H [W_k r_k]_k; chain through X = P (S + E)
        let hm = CMat::from_column_slice(ctx.rx, ctx.tx, h.as_slice());
        let rm = CMat::from_column_slice(ctx.w.outputs(), x.ncols(), r.as_slice());
        let gx = hm.adjoint() * spread(&ctx.w, &rm);
        let ge = match &ctx.sensing {
            Sensing::HbData { precoder, .. } => precoder.adjoint() * gx,
            _ => gx,
        };
        let mut g = CVec::from_column_slice(ge.as_slice());
        g.axpy(C64::new(params.lambda, 0.0), &l1_grad, ONE);
        g
    };
    Ok(Evaluation { value, gradient: Some(Gradient { gamma0, gamma1, e: e_grad }) })
}

/// The smoothed, penalized factored objective.
pub fn objective(f: &FactorPair, e: &[C64], ctx: &ObjectiveContext, params: &SolverParams) -> Result<f64> {
    Ok(evaluate(f, e, ctx, params, false)?.value)
}

/// Gradient with respect to `(Gamma0, Gamma1)`.
pub fn grad_gamma(
    f: &FactorPair,
    e: &[C64],
    ctx: &ObjectiveContext,
    params: &SolverParams,
) -> Result<(CMat, CMat)> {
    let g = evaluate(f, e, ctx, params, true)?.gradient.expect("requested");
    Ok((g.gamma0, g.gamma1))
}

/// Gradient with respect to the error variable; only defined in data-aided mode.
pub fn grad_e(f: &FactorPair, e: &[C64], ctx: &ObjectiveContext, params: &SolverParams) -> Result<CVec> {
    if !ctx.is_data_aided() {
        return Err(domain("the pilot objective has no error variable"));
    }
    Ok(evaluate(f, e, ctx, params, true)?.gradient.expect("requested").e)
}
