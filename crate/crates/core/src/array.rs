//! Uniform linear arrays, geometric multipath channels and their atoms.
//!
//! Directions are the sine of the physical azimuth and live on the torus
//! `[0, 1)`. The channel vector is `vec(H)` with `H` of size `Nr x Nt`, so the
//! atom of a path is `conj(a_T(aod)) ⊗ a_R(aoa)` and entry `t * Nr + r` belongs
//! to transmit element `t` and receive element `r`.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{domain, Result};
use crate::linalg::{complex_gaussian, CMat, CVec, C64};

/// A uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    n_elements: usize,
    spacing: f64,
}

impl ArrayGeometry {
    /// Half-wavelength array with `n_elements` antennas.
    pub fn half_wavelength(n_elements: usize) -> Result<Self> {
        Self::new(n_elements, 0.5)
    }

    /// `spacing` is the element spacing divided by the wavelength.
    pub fn new(n_elements: usize, spacing: f64) -> Result<Self> {
        if n_elements == 0 {
            return Err(domain("array needs at least one element"));
        }
        if !(spacing >= 0.5) || !spacing.is_finite() {
            return Err(domain(format!("element spacing {spacing} below half a wavelength")));
        }
        Ok(Self { n_elements, spacing })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Response without range checking; `direction` may be any real.
    pub(crate) fn response(&self, direction: f64) -> CVec {
        let n = self.n_elements;
        let scale = 1.0 / (n as f64).sqrt();
        let w = 2.0 * PI * self.spacing * direction;
        CVec::from_iterator(n, (0..n).map(|k| C64::from_polar(scale, w * k as f64)))
    }
}

/// Maps any real direction onto `[0, 1)`.
pub fn wrap_direction(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Distance between two directions on the unit torus.
pub fn wrap_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 1.0;
    d.min(1.0 - d)
}

fn check_direction(x: f64) -> Result<()> {
    if (0.0..1.0).contains(&x) {
        Ok(())
    } else {
        Err(domain(format!("direction {x} outside [0, 1)")))
    }
}

/// Normalized array response `(1/sqrt(N)) exp(j 2 pi (d/lambda) direction n)`.
pub fn steering_vector(geom: &ArrayGeometry, direction: f64) -> Result<CVec> {
    check_direction(direction)?;
    Ok(geom.response(direction))
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: C64,
    /// Departure direction, in `[0, 1)`.
    pub aod: f64,
    /// Arrival direction, in `[0, 1)`.
    pub aoa: f64,
    /// Average power `E|gain|^2` of this path.
    pub power: f64,
}

/// A non-empty set of paths with every direction in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(domain("a path set needs at least one path"));
        }
        for p in &paths {
            check_direction(p.aod)?;
            check_direction(p.aoa)?;
            if !(p.power > 0.0) {
                return Err(domain("path power must be positive"));
            }
        }
        Ok(Self { paths })
    }

    /// `count` paths with unit power, `CN(0, 1)` gains and uniform directions.
    pub fn random<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Result<Self> {
        let paths = (0..count)
            .map(|_| {
                let gain = complex_gaussian(rng, 1.0);
                let aod = wrap_direction(rng.random::<f64>());
                let aoa = wrap_direction(rng.random::<f64>());
                Path { gain, aod, aoa, power: 1.0 }
            })
            .collect();
        Self::new(paths)
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// `H = sum_l gain_l a_R(aoa_l) a_T(aod_l)^H`, an `Nr x Nt` matrix.
pub fn channel_from_paths(paths: &PathSet, tx: &ArrayGeometry, rx: &ArrayGeometry) -> Result<CMat> {
    if paths.is_empty() {
        return Err(domain("empty path set"));
    }
    let mut h = CMat::zeros(rx.n_elements(), tx.n_elements());
    for p in paths.paths() {
        let at = tx.response(p.aod);
        let ar = rx.response(p.aoa);
        h += (ar * p.gain) * at.adjoint();
    }
    Ok(h)
}

/// The 2D atom `conj(a_T(aod)) ⊗ a_R(aoa)` of length `Nt * Nr`.
pub fn atom(aod: f64, aoa: f64, tx: &ArrayGeometry, rx: &ArrayGeometry) -> Result<CVec> {
    check_direction(aod)?;
    check_direction(aoa)?;
    Ok(atom_unchecked(aod, aoa, tx, rx))
}

pub(crate) fn atom_unchecked(aod: f64, aoa: f64, tx: &ArrayGeometry, rx: &ArrayGeometry) -> CVec {
    let at = tx.response(aod);
    let ar = rx.response(aoa);
    let nr = rx.n_elements();
    CVec::from_iterator(
        tx.n_elements() * nr,
        (0..tx.n_elements() * nr).map(|i| at[i / nr].conj() * ar[i % nr]),
    )
}

/// One step of the block-to-block channel evolution.
///
/// Each gain moves by `CN(0, 0.01 * power * step_scale^2)` and each direction
/// is redrawn uniformly within `±0.1 * step_scale` of its previous value, then
/// wrapped onto `[0, 1)`.
pub fn evolve_paths<R: Rng + ?Sized>(paths: &PathSet, step_scale: f64, rng: &mut R) -> PathSet {
    if step_scale == 0.0 {
        return paths.clone();
    }
    let half_width = 0.1 * step_scale;
    let evolved = paths
        .paths()
        .iter()
        .map(|p| {
            let dg = complex_gaussian(rng, 0.01 * p.power * step_scale * step_scale);
            let aod = wrap_direction(p.aod + half_width * (2.0 * rng.random::<f64>() - 1.0));
            let aoa = wrap_direction(p.aoa + half_width * (2.0 * rng.random::<f64>() - 1.0));
            Path { gain: p.gain + dg, aod, aoa, power: p.power }
        })
        .collect();
    PathSet { paths: evolved }
}

/// Smallest pairwise separation `max(|d aod|, |d aoa|)` under wrap-around distance.
pub fn min_separation(paths: &PathSet) -> Result<f64> {
    let ps = paths.paths();
    if ps.len() < 2 {
        return Err(domain("separation needs at least two paths"));
    }
    let mut best = f64::INFINITY;
    for (m, a) in ps.iter().enumerate() {
        for b in &ps[m + 1..] {
            let d = wrap_distance(a.aod, b.aod).max(wrap_distance(a.aoa, b.aoa));
            best = best.min(d);
        }
    }
    Ok(best)
}
