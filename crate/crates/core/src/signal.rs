//! Transmit-signal construction for the hybrid-beamforming (HB) and generalized
//! spatial modulation (GSM) systems, the AWGN observation model, and the
//! matrix-free measurement operator `h -> vec(W^H unvec(h) X)`.

use rand::Rng;

use crate::array::{wrap_direction, ArrayGeometry};
use crate::error::{domain, Error, Result};
use crate::linalg::{complex_gaussian, CMat, CVec, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Hb,
    Gsm,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Hb => "hb",
            Mode::Gsm => "gsm",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hb" => Ok(Mode::Hb),
            "gsm" => Ok(Mode::Gsm),
            other => Err(Error::Config(format!("unknown mode '{other}' (expected hb or gsm)"))),
        }
    }
}

/// Gray-mapped unit-energy QPSK or 16-QAM.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<C64>,
    bits: usize,
}

impl Constellation {
    pub fn new(order: usize) -> Result<Self> {
        // per-axis Gray code for two bits: 00 -> -3, 01 -> -1, 11 -> 1, 10 -> 3
        let pam4 = |b: usize| match b {
            0b00 => -3.0,
            0b01 => -1.0,
            0b11 => 1.0,
            _ => 3.0,
        };
        let points = match order {
            4 => {
                let s = 1.0 / 2f64.sqrt();
                (0..4)
                    .map(|i| {
                        let re = if i & 0b10 == 0 { s } else { -s };
                        let im = if i & 0b01 == 0 { s } else { -s };
                        C64::new(re, im)
                    })
                    .collect()
            }
            16 => {
                let s = 1.0 / 10f64.sqrt();
                (0..16).map(|i| C64::new(s * pam4(i >> 2), s * pam4(i & 0b11))).collect()
            }
            other => return Err(Error::Config(format!("unsupported constellation size {other}"))),
        };
        Ok(Self { points, bits: order.trailing_zeros() as usize })
    }

    pub fn qpsk() -> Self {
        Self::new(4).expect("QPSK is supported")
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> C64 {
        self.points[index]
    }

    /// Index of the closest point (ties resolved towards the lower index).
    pub fn nearest_index(&self, z: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn nearest(&self, z: C64) -> C64 {
        self.points[self.nearest_index(z)]
    }

    pub fn random_symbols<R: Rng + ?Sized>(&self, rows: usize, cols: usize, rng: &mut R) -> CMat {
        let data: Vec<C64> = (0..rows * cols)
            .map(|_| self.points[rng.random_range(0..self.order())])
            .collect();
        CMat::from_column_slice(rows, cols, &data)
    }
}

/// Dimensions of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Transmit antennas `Nt`.
    pub tx_antennas: usize,
    /// Receive antennas `Nr`.
    pub rx_antennas: usize,
    /// Transmit RF chains `nt` (active antennas for GSM).
    pub tx_rf: usize,
    /// Receive RF chains `nr`.
    pub rx_rf: usize,
    /// Slots per block `K`.
    pub slots: usize,
    /// Data streams `Ms` (HB only).
    pub streams: usize,
    pub constellation: Constellation,
    pub mode: Mode,
    /// Element spacing over wavelength, shared by both arrays.
    pub spacing: f64,
}

impl SystemConfig {
    /// The evaluation setting: 16x16 arrays, two RF chains, QPSK, eight slots.
    pub fn standard(mode: Mode) -> Self {
        Self {
            tx_antennas: 16,
            rx_antennas: 16,
            tx_rf: 2,
            rx_rf: 2,
            slots: 8,
            streams: 2,
            constellation: Constellation::qpsk(),
            mode,
            spacing: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.tx_antennas == 0 || self.rx_antennas == 0 || self.slots == 0 {
            return cfg_err("antenna and slot counts must be positive".into());
        }
        if self.tx_rf == 0 || self.rx_rf == 0 {
            return cfg_err("RF chain counts must be positive".into());
        }
        if self.tx_rf.max(self.rx_rf) > self.tx_antennas.min(self.rx_antennas) {
            return cfg_err("max(nt, nr) must not exceed min(Nt, Nr)".into());
        }
        match self.mode {
            Mode::Hb => {
                if self.streams == 0 || self.streams > self.tx_rf {
                    return cfg_err(format!("HB needs 1 <= Ms <= nt (Ms = {})", self.streams));
                }
            }
            Mode::Gsm => {
                if self.tx_rf >= self.tx_antennas {
                    return cfg_err("GSM needs nt < Nt".into());
                }
            }
        }
        ArrayGeometry::new(self.tx_antennas, self.spacing)?;
        Ok(())
    }

    pub fn tx_geometry(&self) -> ArrayGeometry {
        ArrayGeometry::new(self.tx_antennas, self.spacing).expect("validated spacing")
    }

    pub fn rx_geometry(&self) -> ArrayGeometry {
        ArrayGeometry::new(self.rx_antennas, self.spacing).expect("validated spacing")
    }

    /// Length `Nt * Nr` of the channel vector.
    pub fn channel_len(&self) -> usize {
        self.tx_antennas * self.rx_antennas
    }

    /// Average transmit power per slot with unit-energy symbols.
    pub fn transmit_power(&self) -> f64 {
        match self.mode {
            Mode::Hb => self.streams as f64,
            Mode::Gsm => self.tx_rf as f64,
        }
    }

    /// Per-antenna noise standard deviation for `SNR = P / (Nt sigma^2)`.
    pub fn noise_std(&self, snr_db: f64) -> f64 {
        let snr = 10f64.powf(snr_db / 10.0);
        (self.transmit_power() / (self.tx_antennas as f64 * snr)).sqrt()
    }

    /// Index bits `p1 = floor(log2 C(Nt, nt))`.
    pub fn gsm_index_bits(&self) -> usize {
        let c = binomial(self.tx_antennas, self.tx_rf);
        (127 - c.leading_zeros()) as usize
    }

    /// Total GSM bits per slot `p1 + nt log2 M`.
    pub fn gsm_bits(&self) -> usize {
        self.gsm_index_bits() + self.tx_rf * self.constellation.bits_per_symbol()
    }
}

/// Analog and digital precoders and combiners.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformers {
    pub fa: CMat,
    pub fd: CMat,
    pub wa: CMat,
    pub wd: CMat,
}

impl Beamformers {
    /// `F = F_A F_D`.
    pub fn precoder(&self) -> CMat {
        &self.fa * &self.fd
    }

    /// `W = W_A W_D`.
    pub fn combiner(&self) -> CMat {
        &self.wa * &self.wd
    }
}

/// Receive combiner, either fixed over a block or chosen per slot.
#[derive(Debug, Clone, PartialEq)]
pub enum Combiner {
    Fixed(CMat),
    PerSlot(Vec<CMat>),
}

impl Combiner {
    pub fn slot(&self, k: usize) -> &CMat {
        match self {
            Combiner::Fixed(w) => w,
            Combiner::PerSlot(ws) => &ws[k],
        }
    }

    pub fn antennas(&self) -> usize {
        self.slot(0).nrows()
    }

    pub fn outputs(&self) -> usize {
        self.slot(0).ncols()
    }

    fn check(&self, slots: usize) -> Result<()> {
        if let Combiner::PerSlot(ws) = self {
            if ws.len() != slots {
                return Err(domain(format!("{} per-slot combiners for {slots} slots", ws.len())));
            }
            let (r, c) = ws[0].shape();
            if ws.iter().any(|w| w.shape() != (r, c)) {
                return Err(domain("per-slot combiners differ in shape"));
            }
        }
        Ok(())
    }
}

/// One block of received data with the transmit matrix and combiner that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBlock {
    /// Received `nr x K` matrix.
    pub y: CMat,
    /// Known or demodulated `Nt x K` transmit matrix.
    pub x: CMat,
    pub w: Combiner,
}

/// `n` DFT beams: column `i` steers to `start + (2/N) i`, wrapped onto `[0, 1)`.
pub fn dft_beamformers(geom: &ArrayGeometry, n: usize, start_direction: f64) -> Result<CMat> {
    let big_n = geom.n_elements();
    if n == 0 || n > big_n {
        return Err(domain(format!("{n} beams requested from {big_n} antennas")));
    }
    if !(0.0..1.0).contains(&start_direction) {
        return Err(domain(format!("start direction {start_direction} outside [0, 1)")));
    }
    let mut f = CMat::zeros(big_n, n);
    for i in 0..n {
        let dir = wrap_direction(start_direction + 2.0 * i as f64 / big_n as f64);
        f.set_column(i, &geom.response(dir));
    }
    Ok(f)
}

/// `X = F_A F_D S`.
pub fn hb_transmit(fa: &CMat, fd: &CMat, s: &CMat) -> Result<CMat> {
    if fa.ncols() != fd.nrows() || fd.ncols() != s.nrows() {
        return Err(domain(format!(
            "cannot multiply {:?} x {:?} x {:?}",
            fa.shape(),
            fd.shape(),
            s.shape()
        )));
    }
    Ok(fa * (fd * s))
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// The `rank`-th `k`-subset of `{0, .., n-1}` in lexicographic order.
pub fn unrank_combination(mut rank: u128, n: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut next = 0;
    for slot in 0..k {
        let remaining = k - slot - 1;
        loop {
            let count = binomial(n - next - 1, remaining);
            if rank < count {
                out.push(next);
                next += 1;
                break;
            }
            rank -= count;
            next += 1;
        }
    }
    out
}

/// Lexicographic rank of a strictly increasing `k`-subset of `{0, .., n-1}`.
pub fn rank_combination(subset: &[usize], n: usize) -> u128 {
    let k = subset.len();
    let mut rank = 0;
    let mut prev = 0;
    for (slot, &c) in subset.iter().enumerate() {
        for skipped in prev..c {
            rank += binomial(n - skipped - 1, k - slot - 1);
        }
        prev = c + 1;
    }
    rank
}

/// The `2^p1` antenna sets a GSM transmitter may activate.
pub fn legal_supports(cfg: &SystemConfig) -> Vec<Vec<usize>> {
    let count = 1u128 << cfg.gsm_index_bits();
    (0..count)
        .map(|r| unrank_combination(r, cfg.tx_antennas, cfg.tx_rf))
        .collect()
}

fn bits_to_index(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// Maps `p1 + nt log2 M` bits to a GSM codeword with exactly `nt` nonzeros.
pub fn gsm_encode(bits: &[bool], cfg: &SystemConfig) -> Result<CVec> {
    let p1 = cfg.gsm_index_bits();
    if bits.len() != cfg.gsm_bits() {
        return Err(domain(format!("GSM block needs {} bits, got {}", cfg.gsm_bits(), bits.len())));
    }
    let rank = bits_to_index(&bits[..p1]) as u128;
    let support = unrank_combination(rank, cfg.tx_antennas, cfg.tx_rf);
    let b = cfg.constellation.bits_per_symbol();
    let mut x = CVec::zeros(cfg.tx_antennas);
    for (m, &ant) in support.iter().enumerate() {
        let chunk = &bits[p1 + m * b..p1 + (m + 1) * b];
        x[ant] = cfg.constellation.point(bits_to_index(chunk));
    }
    Ok(x)
}

/// Inverse of [`gsm_encode`] for legal codewords.
pub fn gsm_decode(x: &CVec, cfg: &SystemConfig) -> Option<Vec<bool>> {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] != ZERO).collect();
    if support.len() != cfg.tx_rf {
        return None;
    }
    let p1 = cfg.gsm_index_bits();
    let rank = rank_combination(&support, cfg.tx_antennas);
    if rank >= 1u128 << p1 {
        return None;
    }
    let b = cfg.constellation.bits_per_symbol();
    let mut bits: Vec<bool> = (0..p1).rev().map(|i| (rank >> i) & 1 == 1).collect();
    for &ant in &support {
        let idx = cfg.constellation.nearest_index(x[ant]);
        bits.extend((0..b).rev().map(|i| (idx >> i) & 1 == 1));
    }
    Some(bits)
}

/// `K` GSM codewords from uniformly random bits.
pub fn random_gsm_block<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> CMat {
    let mut x = CMat::zeros(cfg.tx_antennas, cfg.slots);
    for k in 0..cfg.slots {
        let bits: Vec<bool> = (0..cfg.gsm_bits()).map(|_| rng.random::<bool>()).collect();
        let col = gsm_encode(&bits, cfg).expect("bit count matches the configuration");
        x.set_column(k, &col);
    }
    x
}

/// `Y = W^H (H X + N)` with `N` i.i.d. `CN(0, noise_std^2)` per antenna and slot.
pub fn observe<R: Rng + ?Sized>(h: &CMat, x: &CMat, w: &Combiner, noise_std: f64, rng: &mut R) -> Result<CMat> {
    if !(noise_std >= 0.0) {
        return Err(domain("noise standard deviation must be non-negative"));
    }
    if h.ncols() != x.nrows() || h.nrows() != w.antennas() {
        return Err(domain("channel, transmit matrix and combiner disagree in size"));
    }
    w.check(x.ncols())?;
    let mut hx = h * x;
    if noise_std > 0.0 {
        let var = noise_std * noise_std;
        for v in hx.iter_mut() {
            *v += complex_gaussian(rng, var);
        }
    }
    Ok(combine(w, &hx))
}

/// Column `k` of the result is `W_k^H z_k`.
fn combine(w: &Combiner, z: &CMat) -> CMat {
    match w {
        Combiner::Fixed(w) => w.adjoint() * z,
        Combiner::PerSlot(ws) => {
            let mut out = CMat::zeros(ws[0].ncols(), z.ncols());
            for (k, wk) in ws.iter().enumerate() {
                out.set_column(k, &(wk.adjoint() * z.column(k)));
            }
            out
        }
    }
}

/// Column `k` of the result is `W_k r_k`.
pub(crate) fn spread(w: &Combiner, r: &CMat) -> CMat {
    match w {
        Combiner::Fixed(w) => w * r,
        Combiner::PerSlot(ws) => {
            let mut out = CMat::zeros(ws[0].nrows(), r.ncols());
            for (k, wk) in ws.iter().enumerate() {
                out.set_column(k, &(wk * r.column(k)));
            }
            out
        }
    }
}

fn check_operator(x: &CMat, w: &Combiner) -> Result<()> {
    w.check(x.ncols())
}

/// `(X^T ⊗ W^H) h`, evaluated as `vec(W^H unvec(h) X)`.
pub fn measurement_apply(x: &CMat, w: &Combiner, h: &[C64]) -> Result<CVec> {
    check_operator(x, w)?;
    let (nt, nr) = (x.nrows(), w.antennas());
    if h.len() != nt * nr {
        return Err(domain(format!("channel vector length {} != {nt} * {nr}", h.len())));
    }
    let hm = CMat::from_column_slice(nr, nt, h);
    Ok(CVec::from_column_slice(combine(w, &(hm * x)).as_slice()))
}

/// `(X^T ⊗ W^H)^H r = vec(W unvec(r) X^H)`.
pub fn measurement_adjoint(x: &CMat, w: &Combiner, r: &[C64]) -> Result<CVec> {
    check_operator(x, w)?;
    let (k, nr_out) = (x.ncols(), w.outputs());
    if r.len() != nr_out * k {
        return Err(domain(format!("residual length {} != {nr_out} * {k}", r.len())));
    }
    let rm = CMat::from_column_slice(nr_out, k, r);
    let g = spread(w, &rm) * x.adjoint();
    Ok(CVec::from_column_slice(g.as_slice()))
}

/// How the analog beams of a pilot block are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotBeams {
    /// One set of DFT beams starting at direction 0 for the whole block.
    Fixed,
    /// DFT beam groups stepped across slots so the block covers `[0, 1)`.
    Sweep,
    /// Independent random-phase beams per slot.
    Random,
}

impl std::str::FromStr for PilotBeams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" | "dft" => Ok(PilotBeams::Fixed),
            "sweep" => Ok(PilotBeams::Sweep),
            "random" => Ok(PilotBeams::Random),
            other => Err(Error::Config(format!("unknown pilot beam design '{other}'"))),
        }
    }
}

impl PilotBeams {
    pub fn as_str(&self) -> &'static str {
        match self {
            PilotBeams::Fixed => "fixed",
            PilotBeams::Sweep => "sweep",
            PilotBeams::Random => "random",
        }
    }
}

fn random_phase_beams<R: Rng + ?Sized>(n_ant: usize, n_beams: usize, rng: &mut R) -> CMat {
    let s = 1.0 / (n_ant as f64).sqrt();
    let data: Vec<C64> = (0..n_ant * n_beams)
        .map(|_| C64::from_polar(s, 2.0 * std::f64::consts::PI * rng.random::<f64>()))
        .collect();
    CMat::from_column_slice(n_ant, n_beams, &data)
}

/// Start direction of DFT beam group `group` when groups of `n` beams tile `[0, 1)`.
fn group_start(geom: &ArrayGeometry, n: usize, group: usize) -> f64 {
    wrap_direction(group as f64 * n as f64 * 2.0 / geom.n_elements() as f64)
}

fn group_count(geom: &ArrayGeometry, n: usize) -> usize {
    let beams_in_range = geom.n_elements().div_ceil(2);
    beams_in_range.div_ceil(n).max(1)
}

/// Per-slot analog beams `(F_k, W_k)` of a pilot block.
pub fn pilot_beams<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    design: PilotBeams,
    rng: &mut R,
) -> Result<(Vec<CMat>, Vec<CMat>)> {
    let (tx, rx) = (cfg.tx_geometry(), cfg.rx_geometry());
    let (nt, nr) = (cfg.tx_rf, cfg.rx_rf);
    let mut fs = Vec::with_capacity(cfg.slots);
    let mut ws = Vec::with_capacity(cfg.slots);
    match design {
        PilotBeams::Fixed => {
            let f = dft_beamformers(&tx, nt, 0.0)?;
            let w = dft_beamformers(&rx, nr, 0.0)?;
            fs.resize(cfg.slots, f);
            ws.resize(cfg.slots, w);
        }
        PilotBeams::Sweep => {
            let (gt, gr) = (group_count(&tx, nt), group_count(&rx, nr));
            for k in 0..cfg.slots {
                // the receive group advances once more per full transmit cycle,
                // so successive cycles pair different beam groups
                let (it, ir) = (k % gt, (k + k / gt) % gr);
                fs.push(dft_beamformers(&tx, nt, group_start(&tx, nt, it))?);
                ws.push(dft_beamformers(&rx, nr, group_start(&rx, nr, ir))?);
            }
        }
        PilotBeams::Random => {
            for _ in 0..cfg.slots {
                fs.push(random_phase_beams(cfg.tx_antennas, nt, rng));
                ws.push(random_phase_beams(cfg.rx_antennas, nr, rng));
            }
        }
    }
    Ok((fs, ws))
}

/// Known transmit matrix and combiner of a pilot block.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBlock {
    pub x: CMat,
    pub w: Combiner,
}

/// Builds the pilot block: HB sends `F_k s_k` with `F_D = W_D = I` and
/// `Ms = nt = nr`; GSM sends random legal codewords.
pub fn pilot_block<R: Rng + ?Sized>(cfg: &SystemConfig, design: PilotBeams, rng: &mut R) -> Result<PilotBlock> {
    cfg.validate()?;
    let (fs, ws) = pilot_beams(cfg, design, rng)?;
    let x = match cfg.mode {
        Mode::Hb => {
            let s = cfg.constellation.random_symbols(cfg.tx_rf, cfg.slots, rng);
            let mut x = CMat::zeros(cfg.tx_antennas, cfg.slots);
            for (k, f) in fs.iter().enumerate() {
                x.set_column(k, &(f * s.column(k)));
            }
            x
        }
        Mode::Gsm => random_gsm_block(cfg, rng),
    };
    let w = match design {
        PilotBeams::Fixed => Combiner::Fixed(ws[0].clone()),
        _ => Combiner::PerSlot(ws),
    };
    Ok(PilotBlock { x, w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, re_inner};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom(n: usize) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(n).unwrap()
    }

    fn kron(a: &CMat, b: &CMat) -> CMat {
        let (ar, ac) = a.shape();
        let (br, bc) = b.shape();
        CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
    }

    #[test]
    fn dft_examples() {
        let f = dft_beamformers(&geom(4), 2, 0.0).unwrap();
        let a0 = geom(4).response(0.0);
        let a1 = geom(4).response(0.5);
        assert!((f.column(0) - a0).norm() < 1e-15);
        assert!((f.column(1) - a1).norm() < 1e-15);
        let one = dft_beamformers(&geom(8), 1, 0.3).unwrap();
        assert!((one.column(0) - geom(8).response(0.3)).norm() < 1e-15);
        assert!(dft_beamformers(&geom(4), 5, 0.0).is_err());
    }

    #[test]
    fn dft_columns_orthonormal() {
        for (n, k) in [(16, 8), (8, 4), (16, 2), (5, 2)] {
            let f = dft_beamformers(&geom(n), k, 0.0).unwrap();
            let gram = f.adjoint() * &f;
            assert!((gram - CMat::identity(k, k)).norm() < 1e-10, "N={n}");
        }
    }

    #[test]
    fn hb_transmit_examples() {
        let s2 = 1.0 / 2f64.sqrt();
        let fa = CMat::from_element(2, 1, C64::new(s2, 0.0));
        let fd = CMat::identity(1, 1);
        let s = CMat::from_row_slice(1, 2, &[C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]);
        let x = hb_transmit(&fa, &fd, &s).unwrap();
        let want = CMat::from_row_slice(2, 2, &[s2, -s2, s2, -s2].map(|v| C64::new(v, 0.0)));
        assert!((x - want).norm() < 1e-15);
        assert!(hb_transmit(&fa, &fd, &CMat::zeros(2, 2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fa = gaussian_matrix(&mut rng, 6, 3, 1.0);
        let fd = gaussian_matrix(&mut rng, 3, 2, 1.0);
        let s = gaussian_matrix(&mut rng, 2, 4, 1.0);
        let x = hb_transmit(&fa, &fd, &s).unwrap();
        for i in 0..6 {
            for k in 0..4 {
                let mut acc = ZERO;
                for a in 0..3 {
                    for b in 0..2 {
                        acc += fa[(i, a)] * fd[(a, b)] * s[(b, k)];
                    }
                }
                assert!((acc - x[(i, k)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gsm_index_bits_and_first_codeword() {
        let mut cfg = SystemConfig::standard(Mode::Gsm);
        cfg.tx_antennas = 4;
        assert_eq!(cfg.gsm_index_bits(), 2);
        assert_eq!(cfg.gsm_bits(), 6);
        let x = gsm_encode(&[false; 6], &cfg).unwrap();
        let p = cfg.constellation.point(0);
        assert_eq!(x[0], p);
        assert_eq!(x[1], p);
        assert_eq!(x[2], ZERO);
        assert_eq!(x[3], ZERO);
        assert!(gsm_encode(&[false; 5], &cfg).is_err());
    }

    #[test]
    fn lexicographic_subsets_of_four() {
        let want = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
        for (r, w) in want.iter().enumerate() {
            assert_eq!(unrank_combination(r as u128, 4, 2), w.to_vec());
            assert_eq!(rank_combination(w, 4), r as u128);
        }
    }

    #[test]
    fn gsm_encode_is_injective_and_invertible() {
        let mut cfg = SystemConfig::standard(Mode::Gsm);
        cfg.tx_antennas = 4;
        let p = cfg.gsm_bits();
        let mut seen = std::collections::HashSet::new();
        for word in 0..(1usize << p) {
            let bits: Vec<bool> = (0..p).rev().map(|i| (word >> i) & 1 == 1).collect();
            let x = gsm_encode(&bits, &cfg).unwrap();
            assert_eq!(gsm_decode(&x, &cfg).unwrap(), bits);
            let key: Vec<(i64, i64)> = x.iter().map(|z| ((z.re * 1e6) as i64, (z.im * 1e6) as i64)).collect();
            assert!(seen.insert(key));
        }
    }

    #[test]
    fn gsm_support_size() {
        let cfg = SystemConfig::standard(Mode::Gsm);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let bits: Vec<bool> = (0..cfg.gsm_bits()).map(|_| rng.random()).collect();
            let x = gsm_encode(&bits, &cfg).unwrap();
            assert_eq!(x.iter().filter(|z| **z != ZERO).count(), cfg.tx_rf);
        }
        assert_eq!(legal_supports(&cfg).len(), 64);
    }

    #[test]
    fn constellation_gray_and_energy() {
        for m in [4, 16] {
            let c = Constellation::new(m).unwrap();
            let e: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / m as f64;
            assert!((e - 1.0).abs() < 1e-12);
            // nearest neighbours differ in exactly one bit
            let dmin = (1..m).map(|i| (c.point(i) - c.point(0)).norm()).fold(f64::MAX, f64::min);
            for i in 0..m {
                for j in 0..m {
                    if i != j && ((c.point(i) - c.point(j)).norm() - dmin).abs() < 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1);
                    }
                }
            }
        }
        assert!(Constellation::new(8).is_err());
    }

    #[test]
    fn observe_noiseless_and_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = gaussian_matrix(&mut rng, 4, 3, 1.0);
        let x = gaussian_matrix(&mut rng, 3, 5, 1.0);
        let w = gaussian_matrix(&mut rng, 4, 2, 1.0);
        let y = observe(&h, &x, &Combiner::Fixed(w.clone()), 0.0, &mut rng).unwrap();
        assert!((y - w.adjoint() * &h * &x).norm() < 1e-12);

        let sel = CMat::identity(4, 4).columns(0, 2).into_owned();
        let y = observe(&h, &x, &Combiner::Fixed(sel), 0.0, &mut rng).unwrap();
        assert!((y - (&h * &x).rows(0, 2)).norm() < 1e-12);
    }

    #[test]
    fn observe_noise_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = CMat::zeros(4, 2);
        let x = CMat::zeros(2, 1);
        let w = gaussian_matrix(&mut rng, 4, 2, 1.0);
        let comb = Combiner::Fixed(w.clone());
        let sigma = 0.7;
        let n = 10_000;
        let mut cov = CMat::zeros(2, 2);
        for _ in 0..n {
            let y = observe(&h, &x, &comb, sigma, &mut rng).unwrap();
            cov += &y * y.adjoint();
        }
        cov /= C64::new(n as f64, 0.0);
        let want = w.adjoint() * &w * C64::new(sigma * sigma, 0.0);
        assert!((cov - &want).norm() < 0.05 * want.norm(), "covariance off");
    }

    #[test]
    fn apply_matches_dense_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian_matrix(&mut rng, 4, 3, 1.0);
        let w = gaussian_matrix(&mut rng, 4, 2, 1.0);
        let h = gaussian_matrix(&mut rng, 16, 1, 1.0);
        let theta = kron(&x.transpose(), &w.adjoint());
        let comb = Combiner::Fixed(w.clone());
        let fast = measurement_apply(&x, &comb, h.as_slice()).unwrap();
        assert!((&theta * &h - CMat::from_column_slice(6, 1, fast.as_slice())).norm() < 1e-12);

        let hm = unvec_h(&h, 4, 4);
        let direct = w.adjoint() * &hm * &x;
        assert!((fast.clone() - CVec::from_column_slice(direct.as_slice())).norm() < 1e-12);

        let zero = measurement_apply(&CMat::zeros(4, 3), &comb, h.as_slice()).unwrap();
        assert_eq!(zero.norm(), 0.0);

        let r = gaussian_matrix(&mut rng, 6, 1, 1.0);
        let adj = measurement_adjoint(&x, &comb, r.as_slice()).unwrap();
        assert!((theta.adjoint() * &r - CMat::from_column_slice(16, 1, adj.as_slice())).norm() < 1e-12);
        let adj0 = measurement_adjoint(&x, &comb, &[ZERO; 6]).unwrap();
        assert_eq!(adj0.norm(), 0.0);
        assert!(measurement_apply(&x, &comb, &[ZERO; 15]).is_err());
        assert!(measurement_adjoint(&x, &comb, &[ZERO; 5]).is_err());
    }

    fn unvec_h(h: &CMat, rows: usize, cols: usize) -> CMat {
        CMat::from_column_slice(rows, cols, h.as_slice())
    }

    #[test]
    fn adjoint_identity_fixed_and_per_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for per_slot in [false, true] {
            let x = gaussian_matrix(&mut rng, 5, 4, 1.0);
            let comb = if per_slot {
                Combiner::PerSlot((0..4).map(|_| gaussian_matrix(&mut rng, 3, 2, 1.0)).collect())
            } else {
                Combiner::Fixed(gaussian_matrix(&mut rng, 3, 2, 1.0))
            };
            let h = gaussian_matrix(&mut rng, 15, 1, 1.0);
            let r = gaussian_matrix(&mut rng, 8, 1, 1.0);
            let th = measurement_apply(&x, &comb, h.as_slice()).unwrap();
            let ta = measurement_adjoint(&x, &comb, r.as_slice()).unwrap();
            let lhs: C64 = th.iter().zip(r.iter()).map(|(a, b)| a.conj() * b).sum();
            let rhs: C64 = h.iter().zip(ta.iter()).map(|(a, b)| a.conj() * b).sum();
            assert!((lhs - rhs).norm() < 1e-10);
            assert!((re_inner(th.as_slice(), r.as_slice()) - lhs.re).abs() < 1e-10);
        }
    }

    #[test]
    fn pilot_designs_have_constant_modulus_beams() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for mode in [Mode::Hb, Mode::Gsm] {
            let cfg = SystemConfig::standard(mode);
            for design in [PilotBeams::Fixed, PilotBeams::Sweep, PilotBeams::Random] {
                let (fs, ws) = pilot_beams(&cfg, design, &mut rng).unwrap();
                for m in fs.iter().chain(&ws) {
                    assert!(m.iter().all(|z| (z.norm() - 0.25).abs() < 1e-12));
                }
                let p = pilot_block(&cfg, design, &mut rng).unwrap();
                assert_eq!(p.x.shape(), (16, 8));
                assert_eq!(p.w.outputs(), 2);
            }
        }
    }

    #[test]
    fn sweep_covers_all_transmit_groups() {
        let cfg = SystemConfig::standard(Mode::Hb);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (fs, ws) = pilot_beams(&cfg, PilotBeams::Sweep, &mut rng).unwrap();
        let tx = cfg.tx_geometry();
        // every DFT direction in [0, 1) is hit by some slot
        for b in 0..8 {
            let a = tx.response(b as f64 * 0.125);
            assert!(fs.iter().any(|f| (f.adjoint() * &a).norm() > 0.99));
            assert!(ws.iter().any(|w| (w.adjoint() * &a).norm() > 0.99));
        }
    }

    #[test]
    fn noise_std_follows_snr_definition() {
        let cfg = SystemConfig::standard(Mode::Hb);
        let s = cfg.noise_std(10.0);
        assert!((cfg.transmit_power() / (16.0 * s * s) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SystemConfig::standard(Mode::Hb);
        assert!(cfg.validate().is_ok());
        cfg.streams = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::standard(Mode::Gsm);
        cfg.tx_rf = 16;
        assert!(cfg.validate().is_err());
    }
}
