use std::io::{self, Write};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::config::{EstimatorKind, ExperimentSpec};
use super::metrics::{nmse_ratio, ser, sort_records, MetricRecord};
use super::trial_rng;
use crate::array::{channel_from_paths, evolve_paths, wrap_direction, Path, PathSet};
use crate::baselines::{cs_l1_matrix, omp_matrix, reconstruct_channel, GridDictionary, L1Options, OmpStop};
use crate::demod::{gsm_demod, gsm_refine, hb_demod, hb_refine, update_beamformers};
use crate::error::{domain, Result};
use crate::estimator::{cg_data, cg_pilot, cgd_solve_observed, init_factors, ObjectiveContext, Sensing};
use crate::linalg::{complex_gaussian, gaussian_matrix, unvec, CMat, CVec};
use crate::signal::{observe, pilot_block, random_gsm_block, Combiner, MeasurementBlock, Mode, SystemConfig};

const LANE_CHANNEL: u64 = 0;
const LANE_SNR: u64 = 1;

fn channel(paths: &PathSet, cfg: &SystemConfig) -> Result<CMat> {
    channel_from_paths(paths, &cfg.tx_geometry(), &cfg.rx_geometry())
}

fn as_channel(h: &CVec, cfg: &SystemConfig) -> CMat {
    unvec(h.as_slice(), cfg.rx_antennas, cfg.tx_antennas)
}

struct Clock(Option<Instant>);

impl Clock {
    fn start(enabled: bool) -> Self {
        Clock(enabled.then(Instant::now))
    }

    fn seconds(&self) -> f64 {
        self.0.map_or(0.0, |t| t.elapsed().as_secs_f64())
    }
}

struct RecordBase<'a> {
    spec: &'a ExperimentSpec,
    snr_db: f64,
    trial: usize,
}

impl RecordBase<'_> {
    fn record(&self, estimator: String, block: usize, nmse: Option<f64>, ser: Option<f64>, iters: usize, clock: &Clock) -> MetricRecord {
        MetricRecord {
            estimator,
            mode: self.spec.system.mode,
            snr_db: self.snr_db,
            block,
            trial: self.trial,
            nmse,
            ser,
            iters,
            seconds: clock.seconds(),
            seed: self.spec.seed,
        }
    }
}

fn run_trials<F>(spec: &ExperimentSpec, trial: F) -> Result<Vec<MetricRecord>>
where
    F: Fn(usize) -> Result<Vec<MetricRecord>> + Sync + Send,
{
    spec.validate()?;
    let per_trial: Vec<Vec<MetricRecord>> = (0..spec.trials).into_par_iter().map(trial).collect::<Result<_>>()?;
    let mut records: Vec<MetricRecord> = per_trial.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

/// Pilot-block NMSE of the gridless estimator and the on-grid baselines.
///
/// Each trial draws one channel and one pilot block, then observes it at
/// every SNR of the grid with independent noise.
pub fn run_pilot_experiment(spec: &ExperimentSpec) -> Result<Vec<MetricRecord>> {
    let cfg = &spec.system;
    let wants = |k| spec.estimators.contains(&k);
    let dicts = if wants(EstimatorKind::Omp) || wants(EstimatorKind::CsL1) {
        spec.grids
            .iter()
            .map(|&g| GridDictionary::new(g, cfg.tx_geometry(), cfg.rx_geometry()))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let n = cfg.channel_len();
    run_trials(spec, |trial| {
        let mut rng = trial_rng(spec.seed, trial, LANE_CHANNEL);
        let paths = PathSet::random(spec.paths, &mut rng)?;
        let h = channel(&paths, cfg)?;
        let pilot = pilot_block(cfg, spec.pilot_beams, &mut rng)?;
        let phis = dicts.iter().map(|d| d.sensing_matrix(&pilot.x, &pilot.w)).collect::<Result<Vec<_>>>()?;
        let mut out = Vec::new();
        for (i, &snr_db) in spec.snr_db.iter().enumerate() {
            let base = RecordBase { spec, snr_db, trial };
            let mut rng = trial_rng(spec.seed, trial, LANE_SNR + i as u64);
            let sigma = cfg.noise_std(snr_db);
            let y = observe(&h, &pilot.x, &pilot.w, sigma, &mut rng)?;
            let params = spec.solver.params(sigma, n);
            let yv = CVec::from_column_slice(y.as_slice());
            if wants(EstimatorKind::AtomPilot) {
                let clock = Clock::start(spec.timing);
                let block = MeasurementBlock { y: y.clone(), x: pilot.x.clone(), w: pilot.w.clone() };
                let (nmse, iters) = match cg_pilot(&block, &params, &mut rng) {
                    Ok(sol) => (nmse_ratio(&h, &as_channel(&sol.channel(), cfg)).ok(), sol.iterations()),
                    Err(_) => (None, 0),
                };
                out.push(base.record("atom_pilot".into(), 0, nmse, None, iters, &clock));
            }
            for (dict, phi) in dicts.iter().zip(&phis) {
                let grid = dict.grid_size();
                if wants(EstimatorKind::Omp) {
                    let clock = Clock::start(spec.timing);
                    let stop = OmpStop { max_atoms: spec.paths, residual_tol: 0.0 };
                    let res = omp_matrix(&yv, phi, stop)
                        .and_then(|r| Ok((reconstruct_channel(r.coeffs.as_slice(), dict)?, r.support.len())));
                    let (nmse, iters) = match res {
                        Ok((est, k)) => (nmse_ratio(&h, &est).ok(), k),
                        Err(_) => (None, 0),
                    };
                    out.push(base.record(format!("omp_j{grid}"), 0, nmse, None, iters, &clock));
                }
                if wants(EstimatorKind::CsL1) {
                    let clock = Clock::start(spec.timing);
                    // the atomic penalty acts as an l1 penalty of weight mu / sqrt(N) on unit-norm atoms
                    let mu = params.mu / (n as f64).sqrt();
                    let res = cs_l1_matrix(&yv, phi, mu, L1Options::default())
                        .and_then(|r| Ok((reconstruct_channel(r.coeffs.as_slice(), dict)?, r.iterations)));
                    let (nmse, iters) = match res {
                        Ok((est, k)) => (nmse_ratio(&h, &est).ok(), k),
                        Err(_) => (None, 0),
                    };
                    out.push(base.record(format!("cs_l1_j{grid}"), 0, nmse, None, iters, &clock));
                }
            }
        }
        Ok(out)
    })
}

/// Transmit matrix, receive combiner and the decoded block for one link.
struct Link {
    /// `F` for HB, unused for GSM.
    precoder: CMat,
    w: CMat,
}

impl Link {
    fn from_estimate(h: &CMat, cfg: &SystemConfig) -> Result<Self> {
        let bf = update_beamformers(h, cfg)?;
        Ok(match cfg.mode {
            Mode::Hb => Link { precoder: bf.precoder(), w: bf.combiner() },
            Mode::Gsm => Link { precoder: CMat::zeros(0, 0), w: bf.wa },
        })
    }

    fn transmit(&self, data: &CMat, cfg: &SystemConfig) -> CMat {
        match cfg.mode {
            Mode::Hb => &self.precoder * data,
            Mode::Gsm => data.clone(),
        }
    }

    fn receive(&self, h: &CMat, data: &CMat, noise: &CMat, cfg: &SystemConfig) -> CMat {
        self.w.adjoint() * (h * self.transmit(data, cfg) + noise)
    }

    fn demodulate(&self, y: &CMat, h_est: &CMat, cfg: &SystemConfig) -> Result<CMat> {
        match cfg.mode {
            Mode::Hb => hb_demod(y, h_est, &self.precoder, &self.w, &cfg.constellation),
            Mode::Gsm => gsm_demod(y, h_est, &self.w, cfg),
        }
    }

    fn sensing(&self, decided: CMat, cfg: &SystemConfig) -> Sensing {
        match cfg.mode {
            Mode::Hb => Sensing::HbData { precoder: self.precoder.clone(), symbols: decided },
            Mode::Gsm => Sensing::GsmData { symbols: decided },
        }
    }

    fn refine(&self, decided: &CMat, e: &CVec, cfg: &SystemConfig) -> Result<CMat> {
        let err = unvec(e.as_slice(), decided.nrows(), decided.ncols());
        match cfg.mode {
            Mode::Hb => hb_refine(decided, &err, &cfg.constellation),
            Mode::Gsm => gsm_refine(decided, &err, cfg),
        }
    }
}

fn random_data<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> CMat {
    match cfg.mode {
        Mode::Hb => cfg.constellation.random_symbols(cfg.streams, cfg.slots, rng),
        Mode::Gsm => random_gsm_block(cfg, rng),
    }
}

/// Channel tracking over `blocks` data blocks after one pilot block.
///
/// Records per data block `t >= 1`:
/// `atom_da` (data-aided estimate, SER after refinement),
/// `atom_da_initial` (estimate used for demodulation, SER before refinement),
/// `atom_pilot` (pilot estimate frozen over all blocks) and
/// `pilot_lower_bound` (fresh pilot block every block). Block 0 holds the
/// shared pilot estimate under `atom_pilot`.
pub fn run_data_aided_experiment(spec: &ExperimentSpec) -> Result<Vec<MetricRecord>> {
    let cfg = &spec.system;
    if spec.blocks == 0 {
        return Err(domain("the data-aided experiment needs at least one data block"));
    }
    let wants = |k| spec.estimators.contains(&k);
    let n = cfg.channel_len();
    run_trials(spec, |trial| {
        let mut out = Vec::new();
        for (i, &snr_db) in spec.snr_db.iter().enumerate() {
            let base = RecordBase { spec, snr_db, trial };
            // the channel realization is shared across SNR values
            let mut chan_rng = trial_rng(spec.seed, trial, LANE_CHANNEL);
            let mut rng = trial_rng(spec.seed, trial, LANE_SNR + i as u64);
            let sigma = cfg.noise_std(snr_db);
            let params = spec.solver.params(sigma, n);

            let mut paths = PathSet::random(spec.paths, &mut chan_rng)?;
            let h0 = channel(&paths, cfg)?;
            let clock = Clock::start(spec.timing);
            let pilot = pilot_block(cfg, spec.pilot_beams, &mut chan_rng)?;
            let y0 = observe(&h0, &pilot.x, &pilot.w, sigma, &mut rng)?;
            let sol = cg_pilot(&MeasurementBlock { y: y0, x: pilot.x, w: pilot.w }, &params, &mut rng)?;
            let h_pilot = as_channel(&sol.channel(), cfg);
            out.push(base.record("atom_pilot".into(), 0, nmse_ratio(&h0, &h_pilot).ok(), None, sol.iterations(), &clock));

            let frozen = Link::from_estimate(&h_pilot, cfg)?;
            let mut h_da = h_pilot.clone();
            let mut h_lb = h_pilot.clone();
            for t in 1..=spec.blocks {
                paths = evolve_paths(&paths, spec.step_scale, &mut chan_rng);
                let h = channel(&paths, cfg)?;
                let data = random_data(cfg, &mut chan_rng);
                let noise = gaussian_matrix(&mut rng, cfg.rx_antennas, cfg.slots, sigma * sigma);

                if wants(EstimatorKind::AtomDa) {
                    let clock = Clock::start(spec.timing);
                    let link = Link::from_estimate(&h_da, cfg)?;
                    let y = link.receive(&h, &data, &noise, cfg);
                    let decided = link.demodulate(&y, &h_da, cfg)?;
                    let initial_ser = ser(&data, &decided)?;
                    out.push(base.record(
                        "atom_da_initial".into(),
                        t,
                        nmse_ratio(&h, &h_da).ok(),
                        Some(initial_ser),
                        0,
                        &clock,
                    ));
                    let w = Combiner::Fixed(link.w.clone());
                    match cg_data(&y, &w, link.sensing(decided.clone(), cfg), &params, &mut rng) {
                        Ok(sol) => {
                            h_da = as_channel(&sol.channel(), cfg);
                            let refined = link.refine(&decided, &sol.e, cfg)?;
                            out.push(base.record(
                                "atom_da".into(),
                                t,
                                nmse_ratio(&h, &h_da).ok(),
                                Some(ser(&data, &refined)?),
                                sol.iterations(),
                                &clock,
                            ));
                        }
                        Err(_) => out.push(base.record("atom_da".into(), t, None, Some(initial_ser), 0, &clock)),
                    }
                }
                if wants(EstimatorKind::AtomPilot) {
                    let clock = Clock::start(spec.timing);
                    let y = frozen.receive(&h, &data, &noise, cfg);
                    let decided = frozen.demodulate(&y, &h_pilot, cfg)?;
                    let s = ser(&data, &decided)?;
                    out.push(base.record("atom_pilot".into(), t, nmse_ratio(&h, &h_pilot).ok(), Some(s), 0, &clock));
                }
                if wants(EstimatorKind::PilotLowerBound) {
                    let clock = Clock::start(spec.timing);
                    let pilot = pilot_block(cfg, spec.pilot_beams, &mut chan_rng)?;
                    let y_p = observe(&h, &pilot.x, &pilot.w, sigma, &mut rng)?;
                    let link = Link::from_estimate(&h_lb, cfg)?;
                    match cg_pilot(&MeasurementBlock { y: y_p, x: pilot.x, w: pilot.w }, &params, &mut rng) {
                        Ok(sol) => {
                            h_lb = as_channel(&sol.channel(), cfg);
                            let y = link.receive(&h, &data, &noise, cfg);
                            let s = ser(&data, &link.demodulate(&y, &h_lb, cfg)?)?;
                            out.push(base.record(
                                "pilot_lower_bound".into(),
                                t,
                                nmse_ratio(&h, &h_lb).ok(),
                                Some(s),
                                sol.iterations(),
                                &clock,
                            ));
                        }
                        Err(_) => out.push(base.record("pilot_lower_bound".into(), t, None, None, 0, &clock)),
                    }
                }
            }
        }
        Ok(out)
    })
}

/// `count` unit-power paths whose smallest pairwise separation is exactly `delta`.
///
/// Paths come in two rows: within a row the departure directions differ by
/// `delta` and the arrival directions by at most `delta`; across rows the
/// arrival directions differ by at least `delta`.
pub fn paths_with_separation<R: Rng + ?Sized>(count: usize, delta: f64, rng: &mut R) -> Result<PathSet> {
    if !(0.0..=0.5).contains(&delta) {
        return Err(domain(format!("separation {delta} must lie in [0, 0.5]")));
    }
    if count > 4 && delta > 0.0 {
        return Err(domain("exact separations are constructed for at most four paths"));
    }
    let v = rng.random::<f64>();
    let row_start = [rng.random::<f64>(), rng.random::<f64>()];
    let jitter = delta.min((1.0 - 2.0 * delta) / 2.0);
    let paths = (0..count)
        .map(|l| {
            let (col, row) = (l % 2, (l / 2) % 2);
            let z = jitter * rng.random::<f64>();
            let aoa = if row == 0 { v - z } else { v + delta + z };
            Path {
                gain: complex_gaussian(rng, 1.0),
                aod: wrap_direction(row_start[row] + col as f64 * delta),
                aoa: wrap_direction(aoa),
                power: 1.0,
            }
        })
        .collect();
    PathSet::new(paths)
}

/// Empirical probability that the recovered Gram factor has rank `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPoint {
    /// `(N - 1) * delta` with `N = min(Nt, Nr)`.
    pub scaled_separation: f64,
    pub trials: usize,
    pub hits: usize,
}

impl RankPoint {
    pub fn probability(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }
}

/// Numerical rank of `Gamma Gamma^H`: eigenvalues above `1e-3` of the largest.
fn gram_rank(gamma: &CMat) -> usize {
    let sv = crate::linalg::singular_values(gamma);
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s * s > 1e-3 * top * top).count()
}

/// For each target separation, solves the pilot problem at the first SNR of
/// the grid and counts how often `rank(Psi) = L`.
pub fn run_rank_experiment(spec: &ExperimentSpec) -> Result<Vec<RankPoint>> {
    spec.validate()?;
    let cfg = &spec.system;
    if spec.solver.rank <= spec.paths {
        return Err(domain("the rank bound must exceed the number of paths"));
    }
    let n_bar = cfg.tx_antennas.min(cfg.rx_antennas);
    if n_bar < 2 {
        return Err(domain("separations need at least two antennas per side"));
    }
    let sigma = cfg.noise_std(spec.snr_db[0]);
    let params = spec.solver.params(sigma, cfg.channel_len());
    spec.separations
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let delta = s / (n_bar - 1) as f64;
            let hits: Vec<bool> = (0..spec.trials)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = trial_rng(spec.seed, trial, LANE_SNR + j as u64);
                    let paths = paths_with_separation(spec.paths, delta, &mut rng)?;
                    let h = channel(&paths, cfg)?;
                    let pilot = pilot_block(cfg, spec.pilot_beams, &mut rng)?;
                    let y = observe(&h, &pilot.x, &pilot.w, sigma, &mut rng)?;
                    let sol = cg_pilot(&MeasurementBlock { y, x: pilot.x, w: pilot.w }, &params, &mut rng)?;
                    Ok(gram_rank(&sol.factors.stacked()) == spec.paths)
                })
                .collect::<Result<_>>()?;
            Ok(RankPoint { scaled_separation: s, trials: spec.trials, hits: hits.iter().filter(|&&b| b).count() })
        })
        .collect()
}

pub fn write_rank_csv<W: Write>(mut out: W, points: &[RankPoint]) -> io::Result<()> {
    writeln!(out, "scaled_separation,trials,hits,probability")?;
    for p in points {
        writeln!(out, "{},{},{},{}", p.scaled_separation, p.trials, p.hits, p.probability())?;
    }
    Ok(())
}

/// One accepted solver iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub nmse_db: f64,
}

/// Objective and NMSE after every accepted iterate of one pilot solve
/// (trial 0, first SNR of the grid).
pub fn run_convergence_trace(spec: &ExperimentSpec) -> Result<Vec<ConvergenceRow>> {
    spec.validate()?;
    let cfg = &spec.system;
    let mut rng = trial_rng(spec.seed, 0, LANE_CHANNEL);
    let paths = PathSet::random(spec.paths, &mut rng)?;
    let h = channel(&paths, cfg)?;
    let pilot = pilot_block(cfg, spec.pilot_beams, &mut rng)?;
    let mut rng = trial_rng(spec.seed, 0, LANE_SNR);
    let sigma = cfg.noise_std(spec.snr_db[0]);
    let y = observe(&h, &pilot.x, &pilot.w, sigma, &mut rng)?;
    let params = spec.solver.params(sigma, cfg.channel_len());
    let ctx = ObjectiveContext::new(CVec::from_column_slice(y.as_slice()), pilot.w, Sensing::Pilot { x: pilot.x })?;
    let init = init_factors(ctx.channel_len(), params.rank, &mut rng);
    let mut rows = Vec::new();
    let mut failure = None;
    cgd_solve_observed(init, CVec::zeros(0), &ctx, &params, &mut |rec, f, _| {
        if rec.iteration == 0 {
            return;
        }
        match nmse_ratio(&h, &as_channel(&f.channel(), cfg)) {
            Ok(r) => rows.push(ConvergenceRow {
                iteration: rec.iteration,
                objective: rec.objective,
                grad_norm: rec.grad_norm,
                nmse_db: super::metrics::ratio_to_db(r),
            }),
            Err(e) => failure = Some(e),
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

pub fn write_convergence_csv<W: Write>(mut out: W, rows: &[ConvergenceRow]) -> io::Result<()> {
    writeln!(out, "iteration,objective,grad_norm,nmse_db")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.iteration, r.objective, r.grad_norm, r.nmse_db)?;
    }
    Ok(())
}
