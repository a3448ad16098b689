//! Exhaustive per-slot ML demodulation, error-aware refinement, and
//! beamformer updates from a channel estimate.

use crate::error::{domain, Error, Result};
use crate::linalg::{CMat, CVec, C64, ZERO};
use crate::signal::{dft_beamformers, legal_supports, Beamformers, Constellation, SystemConfig};

const MAX_HB_CANDIDATES: usize = 4096;
const MAX_GSM_CANDIDATES: usize = 65536;

/// All `M^n` symbol vectors, first entry varying slowest.
fn symbol_vectors(c: &Constellation, n: usize) -> Vec<Vec<C64>> {
    let m = c.order();
    let count = m.pow(n as u32);
    (0..count)
        .map(|mut idx| {
            let mut v = vec![ZERO; n];
            for slot in (0..n).rev() {
                v[slot] = c.point(idx % m);
                idx /= m;
            }
            v
        })
        .collect()
}

fn argmin_column(y: &CVec, candidates: &[CVec]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let d = (y - c).norm_squared();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// ML symbols `argmin_s ||y_k - W^H H F s||` for every slot.
pub fn hb_demod(y: &CMat, h: &CMat, f: &CMat, w: &CMat, c: &Constellation) -> Result<CMat> {
    let ms = f.ncols();
    let count = c.order().checked_pow(ms as u32).unwrap_or(usize::MAX);
    if count > MAX_HB_CANDIDATES {
        return Err(Error::Config(format!(
            "{count} candidate symbol vectors per slot exceeds {MAX_HB_CANDIDATES}; reduce Ms or M"
        )));
    }
    if h.shape() != (w.nrows(), f.nrows()) || y.nrows() != w.ncols() {
        return Err(domain("observation, channel, precoder and combiner disagree in size"));
    }
    let g = w.adjoint() * h * f;
    let symbols = symbol_vectors(c, ms);
    let images: Vec<CVec> = symbols.iter().map(|s| &g * CVec::from_column_slice(s)).collect();
    let mut out = CMat::zeros(ms, y.ncols());
    for k in 0..y.ncols() {
        let best = argmin_column(&y.column(k).into_owned(), &images);
        out.set_column(k, &CVec::from_column_slice(&symbols[best]));
    }
    Ok(out)
}

/// Nearest constellation point to each entry of `S + E`.
pub fn hb_refine(s: &CMat, e: &CMat, c: &Constellation) -> Result<CMat> {
    if s.shape() != e.shape() {
        return Err(domain("symbol and error matrices differ in shape"));
    }
    Ok((s + e).map(|z| c.nearest(z)))
}

fn gsm_candidate_count(cfg: &SystemConfig) -> usize {
    let supports = 1usize << cfg.gsm_index_bits();
    supports.saturating_mul(cfg.constellation.order().saturating_pow(cfg.tx_rf as u32))
}

/// ML GSM codewords `argmin_x ||y_k - W^H H x||` over every legal codeword.
pub fn gsm_demod(y: &CMat, h: &CMat, w: &CMat, cfg: &SystemConfig) -> Result<CMat> {
    let count = gsm_candidate_count(cfg);
    if count > MAX_GSM_CANDIDATES {
        return Err(Error::Config(format!(
            "{count} GSM candidates per slot exceeds {MAX_GSM_CANDIDATES}; reduce Nt, nt or M"
        )));
    }
    if h.shape() != (w.nrows(), cfg.tx_antennas) || y.nrows() != w.ncols() {
        return Err(domain("observation, channel and combiner disagree in size"));
    }
    let g = w.adjoint() * h;
    let symbols = symbol_vectors(&cfg.constellation, cfg.tx_rf);
    let mut codewords = Vec::with_capacity(count);
    let mut images = Vec::with_capacity(count);
    for support in legal_supports(cfg) {
        for s in &symbols {
            let mut img = CVec::zeros(g.nrows());
            for (&ant, &sym) in support.iter().zip(s) {
                img.axpy(sym, &g.column(ant), C64::new(1.0, 0.0));
            }
            codewords.push((support.clone(), s.clone()));
            images.push(img);
        }
    }
    let mut out = CMat::zeros(cfg.tx_antennas, y.ncols());
    for k in 0..y.ncols() {
        let best = argmin_column(&y.column(k).into_owned(), &images);
        let (support, s) = &codewords[best];
        for (&ant, &sym) in support.iter().zip(s) {
            out[(ant, k)] = sym;
        }
    }
    Ok(out)
}

/// Closest legal GSM codeword to each column of `X + E`.
pub fn gsm_refine(x: &CMat, e: &CMat, cfg: &SystemConfig) -> Result<CMat> {
    if x.shape() != e.shape() || x.nrows() != cfg.tx_antennas {
        return Err(domain("codeword and error matrices differ in shape"));
    }
    let z = x + e;
    let supports = legal_supports(cfg);
    let c = &cfg.constellation;
    let mut out = CMat::zeros(x.nrows(), x.ncols());
    for k in 0..z.ncols() {
        let col = z.column(k);
        // distance of a codeword on support S: sum_{i in S} |z_i - q(z_i)|^2 + sum_{i not in S} |z_i|^2
        let gain: Vec<f64> = col.iter().map(|&v| v.norm_sqr() - (v - c.nearest(v)).norm_sqr()).collect();
        let best = supports
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.iter().map(|&a| gain[a]).sum::<f64>()))
            .fold((0, f64::NEG_INFINITY), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc })
            .0;
        for &a in &supports[best] {
            out[(a, k)] = c.nearest(col[a]);
        }
    }
    Ok(out)
}

/// Constant-modulus beams from the phases of the leading singular vectors.
fn phase_beams(vectors: &CMat, order: &[usize], n: usize) -> CMat {
    let rows = vectors.nrows();
    let s = 1.0 / (rows as f64).sqrt();
    let mut out = CMat::zeros(rows, n);
    for (j, &col) in order.iter().take(n).enumerate() {
        for i in 0..rows {
            let v = vectors[(i, col)];
            // a zero entry carries no phase; use phase 0
            out[(i, j)] = if v == ZERO { C64::new(s, 0.0) } else { C64::from_polar(s, v.arg()) };
        }
    }
    out
}

/// Analog beams matched to `h`; falls back to DFT beams when `h = 0`.
pub fn update_beamformers(h: &CMat, cfg: &SystemConfig) -> Result<Beamformers> {
    if h.shape() != (cfg.rx_antennas, cfg.tx_antennas) {
        return Err(domain("channel estimate does not match the configuration"));
    }
    let streams = match cfg.mode {
        crate::signal::Mode::Hb => cfg.streams,
        crate::signal::Mode::Gsm => cfg.rx_rf,
    };
    let fd = CMat::identity(cfg.tx_rf, streams);
    let wd = CMat::identity(cfg.rx_rf, streams);
    if h.iter().all(|z| *z == ZERO) {
        return Ok(Beamformers {
            fa: dft_beamformers(&cfg.tx_geometry(), cfg.tx_rf, 0.0)?,
            fd,
            wa: dft_beamformers(&cfg.rx_geometry(), cfg.rx_rf, 0.0)?,
            wd,
        });
    }
    let svd = h.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let u = svd.u.as_ref().expect("requested");
    let v = svd.v_t.as_ref().expect("requested").adjoint();
    Ok(Beamformers { fa: phase_beams(&v, &order, cfg.tx_rf), fd, wa: phase_beams(u, &order, cfg.rx_rf), wd })
}
