//! Two-level (block) Toeplitz structure.
//!
//! An `n x n` matrix with `n = inner * outer` is split into `outer x outer`
//! blocks of size `inner x inner`. Row `o * inner + i` therefore carries the
//! pair `(o, i)`, matching the column-major layout of an `inner x outer` array.
//! A block-Toeplitz matrix is fixed by its parameter matrix `V` of size
//! `(2 inner - 1) x (2 outer - 1)`: entry `((o1, i1), (o2, i2))` equals
//! `V(i1 - i2, o1 - o2)`, with offset `i` stored at row `i + inner - 1` and
//! offset `j` at column `j + outer - 1`.
//!
//! For a channel vector `vec(H)` with `H` of size `Nr x Nt`, the inner size is
//! `Nr` and the outer size is `Nt`.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{domain, Result};
use crate::linalg::{CMat, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToeplitzShape {
    pub inner: usize,
    pub outer: usize,
}

impl ToeplitzShape {
    pub fn new(inner: usize, outer: usize) -> Result<Self> {
        if inner == 0 || outer == 0 {
            return Err(domain("Toeplitz block sizes must be positive"));
        }
        Ok(Self { inner, outer })
    }

    /// Shape of `vec(H)` for an `rx x tx` channel matrix.
    pub fn for_channel(tx_antennas: usize, rx_antennas: usize) -> Result<Self> {
        Self::new(rx_antennas, tx_antennas)
    }

    pub fn dim(&self) -> usize {
        self.inner * self.outer
    }

    /// Shape `(2 inner - 1, 2 outer - 1)` of the parameter matrix.
    pub fn params_shape(&self) -> (usize, usize) {
        (2 * self.inner - 1, 2 * self.outer - 1)
    }

    /// Number of entries in the class with offsets `(i, j)`.
    pub fn kappa(&self, i: isize, j: isize) -> usize {
        let a = self.inner as isize - i.abs();
        let b = self.outer as isize - j.abs();
        if a <= 0 || b <= 0 {
            0
        } else {
            (a * b) as usize
        }
    }

    fn check_square(&self, p: &CMat) -> Result<()> {
        let n = self.dim();
        if p.shape() != (n, n) {
            return Err(domain(format!("expected a {n}x{n} matrix, got {:?}", p.shape())));
        }
        Ok(())
    }

    fn check_params(&self, v: &CMat) -> Result<()> {
        if v.shape() != self.params_shape() {
            return Err(domain(format!(
                "parameter matrix must be {:?}, got {:?}",
                self.params_shape(),
                v.shape()
            )));
        }
        Ok(())
    }
}

/// Toeplitz matrix with entry `(p, q) = v(p - q)`, where `v` has odd length
/// `2n - 1` and `v(0)` is its center element.
pub fn toep(v: &[C64]) -> Result<CMat> {
    if v.len().is_multiple_of(2) {
        return Err(domain(format!("Toeplitz generator must have odd length, got {}", v.len())));
    }
    let n = v.len().div_ceil(2);
    Ok(CMat::from_fn(n, n, |p, q| v[p + n - 1 - q]))
}

/// Block-Toeplitz matrix whose block `(m, n)` is `toep(column m - n of V)`.
pub fn block_toep(shape: ToeplitzShape, v: &CMat) -> Result<CMat> {
    shape.check_params(v)?;
    let (ni, no) = (shape.inner, shape.outer);
    let n = shape.dim();
    Ok(CMat::from_fn(n, n, |r, c| {
        let (o1, i1) = (r / ni, r % ni);
        let (o2, i2) = (c / ni, c % ni);
        v[(i1 + ni - 1 - i2, o1 + no - 1 - o2)]
    }))
}

/// Class sums of `p` binned by offsets `(i1 - i2, o1 - o2)`.
fn class_sums_dense(shape: ToeplitzShape, p: &CMat) -> CMat {
    let (ni, no) = (shape.inner, shape.outer);
    let mut s = CMat::zeros(2 * ni - 1, 2 * no - 1);
    for c in 0..shape.dim() {
        let (o2, i2) = (c / ni, c % ni);
        for r in 0..shape.dim() {
            let (o1, i1) = (r / ni, r % ni);
            s[(i1 + ni - 1 - i2, o1 + no - 1 - o2)] += p[(r, c)];
        }
    }
    s
}

fn divide_by_kappa(shape: ToeplitzShape, s: &mut CMat) {
    let (ni, no) = (shape.inner as isize, shape.outer as isize);
    for j in -(no - 1)..no {
        for i in -(ni - 1)..ni {
            let k = shape.kappa(i, j) as f64;
            s[((i + ni - 1) as usize, (j + no - 1) as usize)] /= k;
        }
    }
}

/// Class averages of `p`: the parameters of the nearest block-Toeplitz matrix.
pub fn average_g(shape: ToeplitzShape, p: &CMat) -> Result<CMat> {
    shape.check_square(p)?;
    let mut s = class_sums_dense(shape, p);
    divide_by_kappa(shape, &mut s);
    Ok(s)
}

/// Orthogonal projection onto block-Toeplitz matrices, `T(G(p))`.
pub fn project_pt(shape: ToeplitzShape, p: &CMat) -> Result<CMat> {
    block_toep(shape, &average_g(shape, p)?)
}

/// FFT evaluation of the Toeplitz penalty for a factored `Psi = Gamma Gamma^H`.
///
/// Each column of `Gamma` is treated as an `inner x outer` array. The class
/// sums of `Gamma Gamma^H` are the summed 2-D autocorrelations of the columns,
/// and `T(V) Gamma` is a truncated 2-D convolution, so both reduce to
/// zero-padded FFTs of size `2 inner x 2 outer`.
#[derive(Clone)]
pub struct FactoredToeplitz {
    shape: ToeplitzShape,
    pad_inner: usize,
    pad_outer: usize,
    fwd_inner: Arc<dyn Fft<f64>>,
    inv_inner: Arc<dyn Fft<f64>>,
    fwd_outer: Arc<dyn Fft<f64>>,
    inv_outer: Arc<dyn Fft<f64>>,
    /// `1 / kappa` laid out on the padded grid (zero outside the valid offsets).
    inv_kappa: Vec<f64>,
}

impl std::fmt::Debug for FactoredToeplitz {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FactoredToeplitz").field("shape", &self.shape).finish()
    }
}

/// Penalty value together with the matrix `T(G(Gamma Gamma^H)) Gamma`.
#[derive(Debug, Clone)]
pub struct PenaltyTerms {
    /// `||P_T(Psi) - Psi||_F^2`.
    pub value: f64,
    pub projected_times_gamma: CMat,
}

impl FactoredToeplitz {
    pub fn new(shape: ToeplitzShape) -> Self {
        let (pi, po) = (2 * shape.inner, 2 * shape.outer);
        let mut planner = FftPlanner::new();
        let mut inv_kappa = vec![0.0; pi * po];
        let (ni, no) = (shape.inner as isize, shape.outer as isize);
        for j in -(no - 1)..no {
            for i in -(ni - 1)..ni {
                let (ri, rj) = (i.rem_euclid(pi as isize) as usize, j.rem_euclid(po as isize) as usize);
                inv_kappa[rj * pi + ri] = 1.0 / shape.kappa(i, j) as f64;
            }
        }
        Self {
            shape,
            pad_inner: pi,
            pad_outer: po,
            fwd_inner: planner.plan_fft_forward(pi),
            inv_inner: planner.plan_fft_inverse(pi),
            fwd_outer: planner.plan_fft_forward(po),
            inv_outer: planner.plan_fft_inverse(po),
            inv_kappa,
        }
    }

    pub fn shape(&self) -> ToeplitzShape {
        self.shape
    }

    fn grid_len(&self) -> usize {
        self.pad_inner * self.pad_outer
    }

    /// Forward 2-D FFT of a padded grid. The spectrum is returned transposed
    /// (outer index fastest); inverse transforms expect that layout.
    fn forward(&self, grid: &mut [C64], scratch: &mut [C64]) {
        let (pi, po) = (self.pad_inner, self.pad_outer);
        self.fwd_inner.process(grid);
        transpose(grid, scratch, pi, po);
        self.fwd_outer.process(scratch);
        grid.copy_from_slice(scratch);
    }

    fn inverse(&self, spec: &mut [C64], scratch: &mut [C64]) {
        let (pi, po) = (self.pad_inner, self.pad_outer);
        self.inv_outer.process(spec);
        transpose(spec, scratch, po, pi);
        self.inv_inner.process(scratch);
        let scale = 1.0 / self.grid_len() as f64;
        for (d, s) in spec.iter_mut().zip(scratch.iter()) {
            *d = s * scale;
        }
    }

    fn embed(&self, col: &[C64], grid: &mut [C64]) {
        grid.fill(ZERO);
        let ni = self.shape.inner;
        for o in 0..self.shape.outer {
            grid[o * self.pad_inner..o * self.pad_inner + ni].copy_from_slice(&col[o * ni..(o + 1) * ni]);
        }
    }

    fn check_factor(&self, gamma: &CMat) -> Result<()> {
        if gamma.nrows() != self.shape.dim() {
            return Err(domain(format!(
                "factor has {} rows, expected {}",
                gamma.nrows(),
                self.shape.dim()
            )));
        }
        Ok(())
    }

    /// Spectra of every column plus the summed power spectrum.
    fn spectra(&self, gamma: &CMat, keep: bool) -> (Vec<Vec<C64>>, Vec<f64>) {
        let len = self.grid_len();
        let mut power = vec![0.0; len];
        let mut kept = Vec::new();
        let mut scratch = vec![ZERO; len];
        for col in gamma.column_iter() {
            let mut grid = vec![ZERO; len];
            let col: Vec<C64> = col.iter().copied().collect();
            self.embed(&col, &mut grid);
            self.forward(&mut grid, &mut scratch);
            for (p, g) in power.iter_mut().zip(&grid) {
                *p += g.norm_sqr();
            }
            if keep {
                kept.push(grid);
            }
        }
        (kept, power)
    }

    /// Class sums on the padded grid (offset `(i, j)` at `(i mod 2inner, j mod 2outer)`).
    fn padded_class_sums(&self, power: &[f64]) -> Vec<C64> {
        let len = self.grid_len();
        let mut spec: Vec<C64> = power.iter().map(|&p| C64::new(p, 0.0)).collect();
        let mut scratch = vec![ZERO; len];
        self.inverse(&mut spec, &mut scratch);
        spec
    }

    /// `G(Gamma Gamma^H)` in the parameter layout of [`block_toep`].
    pub fn average_of_factor(&self, gamma: &CMat) -> Result<CMat> {
        self.check_factor(gamma)?;
        let (_, power) = self.spectra(gamma, false);
        let sums = self.padded_class_sums(&power);
        let (ni, no) = (self.shape.inner as isize, self.shape.outer as isize);
        let mut v = CMat::zeros(self.shape.params_shape().0, self.shape.params_shape().1);
        for j in -(no - 1)..no {
            for i in -(ni - 1)..ni {
                let idx = j.rem_euclid(self.pad_outer as isize) as usize * self.pad_inner
                    + i.rem_euclid(self.pad_inner as isize) as usize;
                v[((i + ni - 1) as usize, (j + no - 1) as usize)] = sums[idx] * self.inv_kappa[idx];
            }
        }
        Ok(v)
    }

    fn penalty_from(&self, gamma: &CMat, sums: &[C64]) -> f64 {
        let gram = gamma.adjoint() * gamma;
        let total = gram.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let kept: f64 = sums.iter().zip(&self.inv_kappa).map(|(s, k)| s.norm_sqr() * k).sum();
        (total - kept).max(0.0)
    }

    /// `||P_T(Gamma Gamma^H) - Gamma Gamma^H||_F^2`.
    pub fn penalty(&self, gamma: &CMat) -> Result<f64> {
        self.check_factor(gamma)?;
        let (_, power) = self.spectra(gamma, false);
        let sums = self.padded_class_sums(&power);
        Ok(self.penalty_from(gamma, &sums))
    }

    /// Penalty value and `T(G(Gamma Gamma^H)) Gamma`.
    pub fn penalty_terms(&self, gamma: &CMat) -> Result<PenaltyTerms> {
        self.check_factor(gamma)?;
        let len = self.grid_len();
        let (spectra, power) = self.spectra(gamma, true);
        let sums = self.padded_class_sums(&power);
        let value = self.penalty_from(gamma, &sums);

        let mut scratch = vec![ZERO; len];
        let mut kernel: Vec<C64> = sums.iter().zip(&self.inv_kappa).map(|(s, k)| s * *k).collect();
        self.forward(&mut kernel, &mut scratch);

        let ni = self.shape.inner;
        let mut out = CMat::zeros(gamma.nrows(), gamma.ncols());
        for (l, spec) in spectra.into_iter().enumerate() {
            let mut prod: Vec<C64> = spec.iter().zip(&kernel).map(|(a, b)| a * b).collect();
            self.inverse(&mut prod, &mut scratch);
            let mut col = out.column_mut(l);
            for o in 0..self.shape.outer {
                for i in 0..ni {
                    col[o * ni + i] = prod[o * self.pad_inner + i];
                }
            }
        }
        Ok(PenaltyTerms { value, projected_times_gamma: out })
    }
}

/// Transposes a column-major `rows x cols` array into `dst` (`cols x rows`).
fn transpose(src: &[C64], dst: &mut [C64], rows: usize, cols: usize) {
    for c in 0..cols {
        for r in 0..rows {
            dst[r * cols + c] = src[c * rows + r];
        }
    }
}
