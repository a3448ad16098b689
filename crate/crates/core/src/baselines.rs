//! On-grid compressed-sensing baselines: a uniform angle-grid dictionary,
//! orthogonal matching pursuit, and l1-regularized least squares solved by
//! monotone FISTA.

use crate::array::ArrayGeometry;
use crate::error::{domain, Result};
use crate::linalg::{norm_sqr, CMat, CVec, C64, ZERO};
use crate::signal::Combiner;

/// Dictionary of atoms on a `J x J` grid of uniformly spaced directions in `[0, 1)`.
///
/// Column `i * J + j` is the atom with departure direction `i / J` and
/// arrival direction `j / J`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDictionary {
    grid: usize,
    tx: ArrayGeometry,
    rx: ArrayGeometry,
}

impl GridDictionary {
    pub fn new(grid: usize, tx: ArrayGeometry, rx: ArrayGeometry) -> Result<Self> {
        if grid == 0 {
            return Err(domain("grid size must be positive"));
        }
        Ok(Self { grid, tx, rx })
    }

    pub fn grid_size(&self) -> usize {
        self.grid
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.grid).map(|j| j as f64 / self.grid as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.grid * self.grid
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(departure, arrival)` directions of column `c`.
    pub fn directions(&self, c: usize) -> (f64, f64) {
        let g = self.grid as f64;
        ((c / self.grid) as f64 / g, (c % self.grid) as f64 / g)
    }

    /// Column `c` as a channel vector `conj(a_T) ⊗ a_R`.
    pub fn atom(&self, c: usize) -> CVec {
        let (aod, aoa) = self.directions(c);
        crate::array::atom_unchecked(aod, aoa, &self.tx, &self.rx)
    }

    /// Effective sensing matrix `Phi` whose column `c` is the measurement of atom `c`.
    pub fn sensing_matrix(&self, x: &CMat, w: &Combiner) -> Result<CMat> {
        let (nt, nr) = (self.tx.n_elements(), self.rx.n_elements());
        if x.nrows() != nt || w.antennas() != nr {
            return Err(domain("transmit matrix or combiner does not match the dictionary arrays"));
        }
        let slots = x.ncols();
        let out = w.outputs();
        let pts = self.points();
        // a_T(theta_i)^H x_k for every grid point and slot
        let mut tx_gain = CMat::zeros(self.grid, slots);
        for (i, &t) in pts.iter().enumerate() {
            let a = self.tx.response(t);
            for k in 0..slots {
                tx_gain[(i, k)] = a.dotc(&x.column(k));
            }
        }
        // W_k^H a_R(phi_j) for every slot and grid point
        let rx_resp: Vec<CVec> = pts.iter().map(|&p| self.rx.response(p)).collect();
        let mut rx_gain = vec![CMat::zeros(out, self.grid); slots];
        for (k, g) in rx_gain.iter_mut().enumerate() {
            let wk = w.slot(k);
            for (j, a) in rx_resp.iter().enumerate() {
                g.set_column(j, &(wk.adjoint() * a));
            }
        }
        let mut phi = CMat::zeros(out * slots, self.len());
        for c in 0..self.len() {
            let (i, j) = (c / self.grid, c % self.grid);
            let mut col = phi.column_mut(c);
            for k in 0..slots {
                for o in 0..out {
                    col[k * out + o] = rx_gain[k][(o, j)] * tx_gain[(i, k)];
                }
            }
        }
        Ok(phi)
    }
}

/// `H = sum_c coeffs[c] a_R(phi_c) a_T(theta_c)^H`, returned as an `Nr x Nt` matrix.
pub fn reconstruct_channel(coeffs: &[C64], dict: &GridDictionary) -> Result<CMat> {
    if coeffs.len() != dict.len() {
        return Err(domain(format!("expected {} coefficients, got {}", dict.len(), coeffs.len())));
    }
    let (nt, nr) = (dict.tx.n_elements(), dict.rx.n_elements());
    let mut h = CMat::zeros(nr, nt);
    for (c, &a) in coeffs.iter().enumerate() {
        if a != ZERO {
            let (aod, aoa) = dict.directions(c);
            h += dict.rx.response(aoa) * dict.tx.response(aod).adjoint() * a;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpStop {
    pub max_atoms: usize,
    /// Stop once the residual norm is at most this.
    pub residual_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    pub coeffs: CVec,
    pub support: Vec<usize>,
    /// Residual norm after each accepted atom, starting with `||y||`.
    pub residual_norms: Vec<f64>,
}

/// Orthogonal matching pursuit on an explicit sensing matrix.
pub fn omp_matrix(y: &CVec, phi: &CMat, stop: OmpStop) -> Result<OmpResult> {
    if y.len() != phi.nrows() {
        return Err(domain("observation length does not match the sensing matrix"));
    }
    if !(stop.residual_tol >= 0.0) {
        return Err(domain("residual tolerance must be non-negative"));
    }
    let norms: Vec<f64> = phi.column_iter().map(|c| c.norm()).collect();
    // columns the measurement cannot see carry only rounding noise
    let floor = 1e-8 * norms.iter().copied().fold(0.0, f64::max);
    let mut support: Vec<usize> = Vec::new();
    let mut coef_sel = CVec::zeros(0);
    let mut residual = y.clone();
    let mut residual_norms = vec![residual.norm()];
    while support.len() < stop.max_atoms.min(phi.nrows()) && residual.norm() > stop.residual_tol {
        let corr = phi.ad_mul(&residual);
        let mut best = None;
        let mut best_v = 0.0;
        for (c, z) in corr.iter().enumerate() {
            if norms[c] <= floor || support.contains(&c) {
                continue;
            }
            let v = z.norm() / norms[c];
            if v > best_v {
                best_v = v;
                best = Some(c);
            }
        }
        let Some(c) = best else { break };
        support.push(c);
        let sub = CMat::from_columns(&support.iter().map(|&s| phi.column(s)).collect::<Vec<_>>());
        let svd = sub.clone().svd(true, true);
        let (smax, smin) = svd
            .singular_values
            .iter()
            .fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
        if !(smin > 1e-10 * smax) {
            // the newest atom is (numerically) dependent on the selected set
            support.pop();
            break;
        }
        let sol = svd.solve(y, 0.0).map_err(|e| domain(e.to_string()))?;
        let new_residual = y - &sub * &sol;
        if new_residual.norm() >= residual.norm() {
            support.pop();
            break;
        }
        coef_sel = sol;
        residual = new_residual;
        residual_norms.push(residual.norm());
    }
    let mut coeffs = CVec::zeros(phi.ncols());
    for (s, &c) in support.iter().enumerate() {
        coeffs[c] = coef_sel[s];
    }
    Ok(OmpResult { coeffs, support, residual_norms })
}

/// OMP over the grid dictionary for observations `y = vec(Y)` of transmit
/// matrix `x` through combiner `w`.
pub fn omp(y: &CVec, dict: &GridDictionary, x: &CMat, w: &Combiner, stop: OmpStop) -> Result<OmpResult> {
    omp_matrix(y, &dict.sensing_matrix(x, w)?, stop)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Options {
    pub max_iters: usize,
    /// Stop once `||a_k - a_{k-1}|| <= tol * max(||a_k||, 1e-12)`.
    pub tol: f64,
}

impl Default for L1Options {
    fn default() -> Self {
        Self { max_iters: 2000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Result {
    pub coeffs: CVec,
    pub iterations: usize,
    /// Objective of every accepted iterate, starting at the zero vector.
    pub objectives: Vec<f64>,
}

fn soft_threshold(z: &CVec, t: f64) -> CVec {
    z.map(|v| {
        let a = v.norm();
        if a <= t {
            ZERO
        } else {
            v * ((a - t) / a)
        }
    })
}

fn l1_objective(phi: &CMat, y: &CVec, a: &CVec, mu: f64) -> f64 {
    0.5 * norm_sqr((phi * a - y).as_slice()) + mu * a.iter().map(|z| z.norm()).sum::<f64>()
}

/// `min 0.5 ||y - Phi a||^2 + mu ||a||_1` by monotone FISTA with backtracking,
/// started from zero.
pub fn cs_l1_matrix(y: &CVec, phi: &CMat, mu: f64, opts: L1Options) -> Result<L1Result> {
    if !(mu > 0.0) {
        return Err(domain("l1 weight must be positive"));
    }
    if y.len() != phi.nrows() {
        return Err(domain("observation length does not match the sensing matrix"));
    }
    let n = phi.ncols();
    let mut a = CVec::zeros(n);
    let mut f_a = l1_objective(phi, y, &a, mu);
    let mut objectives = vec![f_a];
    // zero is optimal exactly when every correlation is within the threshold
    if phi.ad_mul(y).iter().all(|c| c.norm() <= mu) {
        return Ok(L1Result { coeffs: a, iterations: 0, objectives });
    }
    let mut z = a.clone();
    let mut t: f64 = 1.0;
    let mut lip = 1.0;
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        iterations += 1;
        let rz = phi * &z - y;
        let smooth_z = 0.5 * rz.norm_squared();
        let grad = phi.ad_mul(&rz);
        let candidate = loop {
            let u = soft_threshold(&(&z - &grad / C64::new(lip, 0.0)), mu / lip);
            let d = &u - &z;
            let smooth_u = 0.5 * (phi * &u - y).norm_squared();
            let bound = smooth_z + grad.dotc(&d).re + 0.5 * lip * d.norm_squared();
            if smooth_u <= bound * (1.0 + 1e-12) + 1e-300 {
                break u;
            }
            lip *= 2.0;
        };
        let f_c = l1_objective(phi, y, &candidate, mu);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let prev = a.clone();
        // keep the better of the proximal point and the previous iterate
        if f_c <= f_a {
            a = candidate.clone();
            f_a = f_c;
        }
        z = &a + (&candidate - &a) * C64::new(t / t_next, 0.0) + (&a - &prev) * C64::new((t - 1.0) / t_next, 0.0);
        t = t_next;
        objectives.push(f_a);
        let change = (&candidate - &prev).norm();
        if change <= opts.tol * a.norm().max(1e-12) {
            break;
        }
    }
    Ok(L1Result { coeffs: a, iterations, objectives })
}

/// l1-regularized least squares over the grid dictionary.
pub fn cs_l1(y: &CVec, dict: &GridDictionary, x: &CMat, w: &Combiner, mu: f64, opts: L1Options) -> Result<L1Result> {
    cs_l1_matrix(y, &dict.sensing_matrix(x, w)?, mu, opts)
}
