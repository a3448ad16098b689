use std::io::{self, Write};

use crate::error::{domain, Result};
use crate::linalg::CMat;
use crate::signal::Mode;

/// Reported NMSE for (numerically) exact recovery.
pub const NMSE_FLOOR_DB: f64 = -120.0;

pub fn nmse_ratio(h: &CMat, estimate: &CMat) -> Result<f64> {
    if h.shape() != estimate.shape() {
        return Err(domain("channel and estimate differ in shape"));
    }
    let power = h.norm_squared();
    if power == 0.0 {
        return Err(domain("NMSE of a zero channel is undefined"));
    }
    Ok((h - estimate).norm_squared() / power)
}

/// `10 log10(ratio)`, floored at [`NMSE_FLOOR_DB`].
pub fn ratio_to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
}

pub fn nmse_db(h: &CMat, estimate: &CMat) -> Result<f64> {
    nmse_ratio(h, estimate).map(ratio_to_db)
}

/// Fraction of slots (columns) whose decided vector differs anywhere from the sent one.
pub fn ser(sent: &CMat, decided: &CMat) -> Result<f64> {
    if sent.shape() != decided.shape() {
        return Err(domain("sent and decided blocks differ in shape"));
    }
    if sent.ncols() == 0 {
        return Ok(0.0);
    }
    let wrong = sent.column_iter().zip(decided.column_iter()).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / sent.ncols() as f64)
}

/// One estimator outcome for one trial, SNR and block.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub estimator: String,
    pub mode: Mode,
    pub snr_db: f64,
    pub block: usize,
    pub trial: usize,
    /// Linear NMSE ratio; `None` when the estimator failed.
    pub nmse: Option<f64>,
    pub ser: Option<f64>,
    pub iters: usize,
    pub seconds: f64,
    pub seed: u64,
}

impl MetricRecord {
    pub fn nmse_db(&self) -> Option<f64> {
        self.nmse.map(ratio_to_db)
    }
}

pub const CSV_HEADER: &str = "estimator,mode,snr_db,block,trial,nmse_db,ser,iters,seconds,seed";

/// Orders records by estimator, SNR, trial and block.
pub fn sort_records(records: &mut [MetricRecord]) {
    records.sort_by(|a, b| {
        a.estimator
            .cmp(&b.estimator)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.trial.cmp(&b.trial))
            .then(a.block.cmp(&b.block))
    });
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in the given order; missing values are empty fields.
pub fn write_csv<W: Write>(mut out: W, records: &[MetricRecord]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.estimator,
            r.mode.as_str(),
            r.snr_db,
            r.block,
            r.trial,
            opt(r.nmse_db()),
            opt(r.ser),
            r.iters,
            r.seconds,
            r.seed
        )?;
    }
    Ok(())
}

/// Trial averages for one estimator at one SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub estimator: String,
    pub snr_db: f64,
    /// `10 log10` of the mean NMSE ratio.
    pub nmse_db: f64,
    pub ser: Option<f64>,
    pub count: usize,
    pub failures: usize,
}

/// Averages records over trials, and over blocks when `block` is `None`;
/// otherwise only records of that block are used.
pub fn summarize(records: &[MetricRecord], block: Option<usize>) -> Vec<Summary> {
    #[derive(Default)]
    struct Acc {
        nmse: f64,
        ser: f64,
        n: usize,
        n_ser: usize,
        failed: usize,
    }
    let mut groups: Vec<(String, f64, Acc)> = Vec::new();
    for r in records.iter().filter(|r| block.is_none_or(|b| r.block == b)) {
        let i = match groups.iter().position(|g| g.0 == r.estimator && g.1 == r.snr_db) {
            Some(i) => i,
            None => {
                groups.push((r.estimator.clone(), r.snr_db, Acc::default()));
                groups.len() - 1
            }
        };
        let acc = &mut groups[i].2;
        match r.nmse {
            Some(v) => {
                acc.nmse += v;
                acc.n += 1;
            }
            None => acc.failed += 1,
        }
        if let Some(s) = r.ser {
            acc.ser += s;
            acc.n_ser += 1;
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    groups
        .into_iter()
        .map(|(estimator, snr_db, a)| Summary {
            estimator,
            snr_db,
            nmse_db: if a.n == 0 { f64::NAN } else { ratio_to_db(a.nmse / a.n as f64) },
            ser: (a.n_ser > 0).then(|| a.ser / a.n_ser as f64),
            count: a.n,
            failures: a.failed,
        })
        .collect()
}
