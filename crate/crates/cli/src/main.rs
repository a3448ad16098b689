use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mmwave_anm::harness::{
    run_convergence_trace, run_data_aided_experiment, run_pilot_experiment, run_rank_experiment, summarize,
    write_convergence_csv, write_csv, write_rank_csv, ExperimentSpec, MetricRecord,
};
use mmwave_anm::signal::Mode;

/// Monte-Carlo experiments for gridless mmWave MIMO channel estimation.
#[derive(Parser)]
#[command(name = "mmwave-anm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pilot-block NMSE against SNR for the gridless and on-grid estimators.
    PilotSweep(Common),
    /// Channel tracking over time-varying blocks (data-aided vs frozen pilot vs per-block pilot).
    DataAided(Common),
    /// Probability that the recovered Gram factor has rank L against path separation.
    RankProb(Common),
    /// Objective and NMSE per solver iteration for one instance.
    Convergence(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated SNR grid in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// hb or gsm.
    #[arg(long)]
    mode: Option<Mode>,
    /// Comma-separated grid sizes for the on-grid baselines.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Pilot beam design: fixed, sweep or random.
    #[arg(long)]
    pilot_beams: Option<String>,
    /// Any configuration key, e.g. --set blocks=100 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Record wall-clock seconds per estimate; output is then not reproducible.
    #[arg(long)]
    timing: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn spec(&self, preset: fn(Mode) -> ExperimentSpec) -> Result<ExperimentSpec> {
        let mut spec = preset(Mode::Hb);
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            spec.apply_config(&text).with_context(|| format!("in {}", path.display()))?;
        }
        if let Some(snr) = &self.snr {
            spec.snr_db = snr.clone();
        }
        if let Some(t) = self.trials {
            spec.trials = t;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(m) = self.mode {
            spec.system.mode = m;
        }
        if let Some(g) = &self.grid {
            spec.grids = g.clone();
        }
        if let Some(p) = &self.pilot_beams {
            spec.set("pilot_beams", p)?;
        }
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got '{kv}'");
            };
            spec.set(k.trim(), v.trim())?;
        }
        spec.timing |= self.timing;
        spec.validate()?;
        Ok(spec)
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => {
                let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                Box::new(BufWriter::new(file))
            }
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

fn report(records: &[MetricRecord], by_block: bool) {
    let rows = if by_block { summarize(records, None) } else { summarize(records, Some(0)) };
    for s in rows {
        let ser = s.ser.map(|v| format!(" ser {v:.4}")).unwrap_or_default();
        eprintln!(
            "{:<20} snr {:>6} dB  nmse {:>8.2} dB{ser}  (n={}, failed={})",
            s.estimator, s.snr_db, s.nmse_db, s.count, s.failures
        );
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::PilotSweep(c) | Command::DataAided(c) | Command::RankProb(c) | Command::Convergence(c) => c,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    match &cli.command {
        Command::PilotSweep(c) => {
            let records = run_pilot_experiment(&c.spec(ExperimentSpec::pilot_sweep)?)?;
            let mut out = c.output()?;
            write_csv(&mut out, &records)?;
            out.flush()?;
            report(&records, false);
        }
        Command::DataAided(c) => {
            let records = run_data_aided_experiment(&c.spec(ExperimentSpec::data_aided)?)?;
            let data: Vec<MetricRecord> = records.iter().filter(|r| r.block > 0).cloned().collect();
            let mut out = c.output()?;
            write_csv(&mut out, &records)?;
            out.flush()?;
            report(&data, true);
        }
        Command::RankProb(c) => {
            let points = run_rank_experiment(&c.spec(ExperimentSpec::rank_probability)?)?;
            let mut out = c.output()?;
            write_rank_csv(&mut out, &points)?;
            out.flush()?;
            for p in &points {
                eprintln!("(N-1)*delta {:>5}  P[rank = L] {:.3}", p.scaled_separation, p.probability());
            }
        }
        Command::Convergence(c) => {
            let rows = run_convergence_trace(&c.spec(ExperimentSpec::convergence)?)?;
            let mut out = c.output()?;
            write_convergence_csv(&mut out, &rows)?;
            out.flush()?;
            if let Some(last) = rows.last() {
                eprintln!("{} iterations, final objective {}, nmse {:.2} dB", last.iteration, last.objective, last.nmse_db);
            }
        }
    }
    Ok(())
}
