use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimator::SolverParams;
use crate::signal::{Constellation, Mode, PilotBeams, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    AtomPilot,
    AtomDa,
    Omp,
    CsL1,
    PilotLowerBound,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::AtomPilot,
        EstimatorKind::AtomDa,
        EstimatorKind::Omp,
        EstimatorKind::CsL1,
        EstimatorKind::PilotLowerBound,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::AtomPilot => "atom_pilot",
            EstimatorKind::AtomDa => "atom_da",
            EstimatorKind::Omp => "omp",
            EstimatorKind::CsL1 => "cs_l1",
            EstimatorKind::PilotLowerBound => "pilot_lower_bound",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

/// Solver settings layered over the noise-derived defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Multiplies the default `mu = sigma sqrt(N ln N)`.
    pub mu_scale: f64,
    pub tau: f64,
    pub rho: f64,
    pub eps_stop: f64,
    pub max_iters: usize,
    pub rank: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverParams::for_noise(1.0, 4);
        Self { mu_scale: 1.0, tau: d.tau, rho: d.rho, eps_stop: d.eps_stop, max_iters: d.max_iters, rank: d.rank }
    }
}

impl SolverSettings {
    /// Parameters for noise level `sigma` on a channel of length `n`;
    /// `lambda = mu / sqrt(n)` follows the scaled `mu`.
    pub fn params(&self, sigma: f64, n: usize) -> SolverParams {
        let mut p = SolverParams::for_noise(sigma, n);
        p.mu *= self.mu_scale;
        p.lambda = p.mu / (n as f64).sqrt();
        p.tau = self.tau;
        p.rho = self.rho;
        p.eps_stop = self.eps_stop;
        p.max_iters = self.max_iters;
        p.rank = self.rank;
        p
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    pub estimators: Vec<EstimatorKind>,
    pub snr_db: Vec<f64>,
    /// Number of propagation paths `L`.
    pub paths: usize,
    /// Data blocks `T` after the pilot block.
    pub blocks: usize,
    /// Grid sizes for the on-grid baselines.
    pub grids: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub pilot_beams: PilotBeams,
    /// Scale of the per-block path drift; 0 freezes the channel.
    pub step_scale: f64,
    /// Target separations `(N - 1) * delta` for the rank experiment.
    pub separations: Vec<f64>,
    pub solver: SolverSettings,
    /// Record wall-clock seconds (makes output run-dependent).
    pub timing: bool,
}

impl ExperimentSpec {
    fn base(mode: Mode) -> Self {
        Self {
            system: SystemConfig::standard(mode),
            estimators: vec![EstimatorKind::AtomPilot],
            snr_db: vec![20.0],
            paths: 3,
            blocks: 20,
            grids: vec![12, 16, 24],
            trials: 50,
            seed: 1,
            pilot_beams: PilotBeams::Random,
            step_scale: 1.0,
            separations: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            solver: SolverSettings::default(),
            timing: false,
        }
    }

    /// Pilot NMSE against SNR for the gridless and on-grid estimators.
    pub fn pilot_sweep(mode: Mode) -> Self {
        Self {
            estimators: vec![EstimatorKind::AtomPilot, EstimatorKind::Omp, EstimatorKind::CsL1],
            snr_db: vec![0.0, 10.0, 20.0, 30.0],
            ..Self::base(mode)
        }
    }

    /// Channel tracking over a slowly varying channel.
    pub fn data_aided(mode: Mode) -> Self {
        Self {
            estimators: vec![EstimatorKind::AtomPilot, EstimatorKind::AtomDa, EstimatorKind::PilotLowerBound],
            snr_db: vec![10.0],
            paths: 8,
            trials: 30,
            ..Self::base(mode)
        }
    }

    /// Probability that the recovered Gram factor has rank `L`, with 64 pilot
    /// slots at 40 dB so that the estimate is accurate enough to expose it.
    pub fn rank_probability(mode: Mode) -> Self {
        let mut spec = Self { snr_db: vec![40.0], paths: 4, ..Self::base(mode) };
        spec.system.slots = 64;
        spec
    }

    /// Single-instance objective and NMSE trace over the full iteration budget.
    pub fn convergence(mode: Mode) -> Self {
        let mut spec = Self { snr_db: vec![10.0], paths: 5, trials: 1, ..Self::base(mode) };
        spec.solver.max_iters = 1000;
        spec.solver.eps_stop = 1e-9;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR grid must be a nonempty list of finite values".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        let on_grid = self.estimators.iter().any(|e| matches!(e, EstimatorKind::Omp | EstimatorKind::CsL1));
        if on_grid && (self.grids.is_empty() || self.grids.contains(&0)) {
            return Err(Error::Config("on-grid estimators need positive grid sizes".into()));
        }
        if !(self.step_scale >= 0.0 && self.step_scale.is_finite()) {
            return Err(Error::Config("step_scale must be non-negative".into()));
        }
        let s = &self.solver;
        if !(s.mu_scale > 0.0 && s.tau > 0.0 && s.rho > 0.0 && s.eps_stop > 0.0) || s.rank == 0 {
            return Err(Error::Config("solver settings must be positive".into()));
        }
        Ok(())
    }

    /// Applies a flat `key = value` configuration; `#` starts a comment and
    /// lists are comma separated.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Sets one field by its configuration key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let sys = &mut self.system;
        match key {
            "mode" => sys.mode = value.parse()?,
            "estimators" => self.estimators = parse_list(key, value)?,
            "snr_db" => self.snr_db = parse_list(key, value)?,
            "paths" => self.paths = parse(key, value)?,
            "slots" => sys.slots = parse(key, value)?,
            "blocks" => self.blocks = parse(key, value)?,
            "grids" => self.grids = parse_list(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "tx_antennas" => sys.tx_antennas = parse(key, value)?,
            "rx_antennas" => sys.rx_antennas = parse(key, value)?,
            "tx_rf" => sys.tx_rf = parse(key, value)?,
            "rx_rf" => sys.rx_rf = parse(key, value)?,
            "streams" => sys.streams = parse(key, value)?,
            "modulation" => sys.constellation = Constellation::new(parse(key, value)?)?,
            "spacing" => sys.spacing = parse(key, value)?,
            "pilot_beams" => self.pilot_beams = value.parse()?,
            "step_scale" => self.step_scale = parse(key, value)?,
            "separations" => self.separations = parse_list(key, value)?,
            "mu_scale" => self.solver.mu_scale = parse(key, value)?,
            "tau" => self.solver.tau = parse(key, value)?,
            "rho" => self.solver.rho = parse(key, value)?,
            "eps_stop" => self.solver.eps_stop = parse(key, value)?,
            "max_iters" => self.solver.max_iters = parse(key, value)?,
            "rank" => self.solver.rank = parse(key, value)?,
            "timing" => self.timing = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}
