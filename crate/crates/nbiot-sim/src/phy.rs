//! Link-to-system abstraction: per-subcarrier SINR, EESM compression,
//! BLER/CQI/TBS table lookups and coin-toss decoding.
//!
//! The numeric tables ship as CSV assets bundled into the binary; the
//! format is normative, the curve values are interchangeable with any
//! set satisfying the same invariants.

use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const NUM_MCS: usize = 14;
pub const MAX_NSF: usize = 10;
pub const NUM_CQI: usize = 13;

#[derive(Debug, Error)]
pub enum PhyError {
    #[error("{file}: expected header '{expected}'")]
    BadHeader { file: &'static str, expected: &'static str },
    #[error("{file} line {line}: {msg}")]
    BadRow {
        file: &'static str,
        line: usize,
        msg: String,
    },
    #[error("{file}: {msg}")]
    BadTable { file: &'static str, msg: String },
    #[error("mcs {0} out of range 0..{}", NUM_MCS - 1)]
    McsOutOfRange(usize),
    #[error("n_sf {0} out of range 1..{MAX_NSF}")]
    NsfOutOfRange(usize),
}

/// Per-subcarrier linear SINR vector for one allocation.
#[derive(Debug, Clone)]
pub struct SinrVector {
    pub values: Vec<f64>,
}

impl SinrVector {
    pub fn new(values: Vec<f64>) -> SinrVector {
        assert!(!values.is_empty());
        debug_assert!(values.iter().all(|&g| g > 0.0));
        SinrVector { values }
    }
}

/// Eq.-of-motion for one subcarrier: desired power over interference
/// plus noise, everything linear.
pub fn sinr_per_subcarrier(
    signal_gain: f64,
    signal_power: f64,
    interferers: &[(f64, f64)],
    noise_power: f64,
) -> f64 {
    assert!(noise_power > 0.0, "noise power must be positive");
    let interference: f64 = interferers.iter().map(|&(g, p)| g * p).sum();
    signal_gain * signal_power / (interference + noise_power)
}

/// Exponential effective SINR mapping over linear-scale inputs.
pub fn eesm(gammas: &[f64], eta: f64) -> f64 {
    assert!(!gammas.is_empty() && eta > 0.0);
    let p = gammas.len() as f64;
    let s: f64 = gammas.iter().map(|&g| (-g / eta).exp()).sum();
    -eta * (s / p).ln()
}

impl SinrVector {
    pub fn effective(&self, eta: f64) -> f64 {
        eesm(&self.values, eta)
    }
}

/// EESM factor for QPSK, the only NB-IoT downlink modulation modelled.
pub const ETA_QPSK: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct BlerCurve {
    /// (snr_db, bler), strictly increasing in SNR, non-increasing in BLER.
    pub points: Vec<(f64, f64)>,
}

/// Immutable link-performance tables.
#[derive(Debug, Clone)]
pub struct PhyAssets {
    pub bler: Vec<BlerCurve>,
    /// Index k-1 holds the SNR threshold of CQI k (k = 1..=13).
    pub cqi_thresholds: Vec<f64>,
    /// Row-major [mcs][n_sf - 1] transport block sizes in bits.
    pub tbs: Vec<u32>,
}

const BLER_CSV: &str = include_str!("../assets/bler_curves.csv");
const CQI_CSV: &str = include_str!("../assets/cqi_thresholds.csv");
const TBS_CSV: &str = include_str!("../assets/tbs_table.csv");

impl PhyAssets {
    /// The bundled tables, parsed once per process.
    pub fn builtin() -> &'static PhyAssets {
        static ASSETS: OnceLock<PhyAssets> = OnceLock::new();
        ASSETS.get_or_init(|| {
            PhyAssets::from_strs(BLER_CSV, CQI_CSV, TBS_CSV)
                .expect("bundled assets must parse")
        })
    }

    pub fn from_strs(bler: &str, cqi: &str, tbs: &str) -> Result<PhyAssets, PhyError> {
        Ok(PhyAssets {
            bler: parse_bler_curves(bler)?,
            cqi_thresholds: parse_cqi_thresholds(cqi)?,
            tbs: parse_tbs_table(tbs)?,
        })
    }
}

fn rows<'a>(
    text: &'a str,
    file: &'static str,
    header: &'static str,
) -> Result<impl Iterator<Item = (usize, &'a str)>, PhyError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(PhyError::BadHeader { file, expected: header }),
    }
    Ok(lines
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty()))
}

fn field<T: std::str::FromStr>(
    s: Option<&str>,
    file: &'static str,
    line: usize,
) -> Result<T, PhyError> {
    s.map(str::trim)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| PhyError::BadRow {
            file,
            line,
            msg: "bad or missing field".into(),
        })
}

/// Parse `mcs,snr_db,bler` rows into 14 validated curves.
pub fn parse_bler_curves(text: &str) -> Result<Vec<BlerCurve>, PhyError> {
    const FILE: &str = "bler_curves.csv";
    let mut curves: Vec<BlerCurve> = (0..NUM_MCS).map(|_| BlerCurve { points: vec![] }).collect();
    for (line, row) in rows(text, FILE, "mcs,snr_db,bler")? {
        let mut it = row.split(',');
        let mcs: usize = field(it.next(), FILE, line)?;
        let snr: f64 = field(it.next(), FILE, line)?;
        let bler: f64 = field(it.next(), FILE, line)?;
        let err = |msg: &str| PhyError::BadRow { file: FILE, line, msg: msg.into() };
        if it.next().is_some() {
            return Err(err("too many fields"));
        }
        if mcs >= NUM_MCS {
            return Err(err("mcs out of range"));
        }
        if !snr.is_finite() || !(0.0..=1.0).contains(&bler) {
            return Err(err("snr must be finite, bler in [0,1]"));
        }
        if let Some(&(ps, pb)) = curves[mcs].points.last() {
            if snr <= ps {
                return Err(err("snr not strictly increasing within curve"));
            }
            if bler > pb {
                return Err(err("bler not non-increasing within curve"));
            }
        }
        curves[mcs].points.push((snr, bler));
    }
    for (m, c) in curves.iter().enumerate() {
        if c.points.len() < 2 {
            return Err(PhyError::BadTable {
                file: FILE,
                msg: format!("mcs {m} needs at least 2 points"),
            });
        }
    }
    Ok(curves)
}

/// Parse `cqi,snr_db` rows; CQI 1..=13 each exactly once, ascending.
pub fn parse_cqi_thresholds(text: &str) -> Result<Vec<f64>, PhyError> {
    const FILE: &str = "cqi_thresholds.csv";
    let mut out = Vec::with_capacity(NUM_CQI);
    for (line, row) in rows(text, FILE, "cqi,snr_db")? {
        let mut it = row.split(',');
        let cqi: usize = field(it.next(), FILE, line)?;
        let snr: f64 = field(it.next(), FILE, line)?;
        let err = |msg: &str| PhyError::BadRow { file: FILE, line, msg: msg.into() };
        if it.next().is_some() {
            return Err(err("too many fields"));
        }
        if cqi != out.len() + 1 || cqi > NUM_CQI {
            return Err(err("cqi rows must be 1..=13 in order"));
        }
        if !snr.is_finite() {
            return Err(err("snr must be finite"));
        }
        if let Some(&prev) = out.last() {
            if snr <= prev {
                return Err(err("thresholds must be strictly increasing"));
            }
        }
        out.push(snr);
    }
    if out.len() != NUM_CQI {
        return Err(PhyError::BadTable {
            file: FILE,
            msg: format!("expected {NUM_CQI} rows, got {}", out.len()),
        });
    }
    Ok(out)
}

/// Parse `mcs,n_sf,bits`; the full 14 x 10 grid must be present, in
/// row-major order, non-decreasing along both axes.
pub fn parse_tbs_table(text: &str) -> Result<Vec<u32>, PhyError> {
    const FILE: &str = "tbs_table.csv";
    let mut out: Vec<u32> = Vec::with_capacity(NUM_MCS * MAX_NSF);
    for (line, row) in rows(text, FILE, "mcs,n_sf,bits")? {
        let mut it = row.split(',');
        let mcs: usize = field(it.next(), FILE, line)?;
        let nsf: usize = field(it.next(), FILE, line)?;
        let bits: u32 = field(it.next(), FILE, line)?;
        let err = |msg: &str| PhyError::BadRow { file: FILE, line, msg: msg.into() };
        if it.next().is_some() {
            return Err(err("too many fields"));
        }
        let k = out.len();
        if mcs != k / MAX_NSF || nsf != k % MAX_NSF + 1 {
            return Err(err("rows must cover mcs 0..13 x n_sf 1..10 in order"));
        }
        if nsf > 1 && bits < out[k - 1] {
            return Err(err("bits must be non-decreasing in n_sf"));
        }
        if mcs > 0 && bits < out[k - MAX_NSF] {
            return Err(err("bits must be non-decreasing in mcs"));
        }
        out.push(bits);
    }
    if out.len() != NUM_MCS * MAX_NSF {
        return Err(PhyError::BadTable {
            file: FILE,
            msg: format!("expected {} rows, got {}", NUM_MCS * MAX_NSF, out.len()),
        });
    }
    Ok(out)
}

/// BLER at `gamma_eff_db` for a given MCS and repetition count.
/// Repetitions enter as a +10·log10(n_rep) dB combining gain; the curve
/// is interpolated in (dB, ln BLER) space and clamped at its endpoints.
pub fn bler_lookup(
    assets: &PhyAssets,
    mcs: usize,
    n_rep: u32,
    gamma_eff_db: f64,
) -> Result<f64, PhyError> {
    let curve = assets.bler.get(mcs).ok_or(PhyError::McsOutOfRange(mcs))?;
    let snr = gamma_eff_db + 10.0 * f64::from(n_rep.max(1)).log10();
    let pts = &curve.points;
    if snr <= pts[0].0 {
        return Ok(pts[0].1);
    }
    if snr >= pts[pts.len() - 1].0 {
        return Ok(pts[pts.len() - 1].1);
    }
    let i = pts.partition_point(|&(s, _)| s <= snr);
    let (s0, b0) = pts[i - 1];
    let (s1, b1) = pts[i];
    let t = (snr - s0) / (s1 - s0);
    let ln0 = b0.max(1e-300).ln();
    let ln1 = b1.max(1e-300).ln();
    Ok((ln0 + t * (ln1 - ln0)).exp())
}

/// Bernoulli decode: draw u ~ U(0,1], success iff u exceeds the BLER.
pub fn decode_coin_toss(bler: f64, rng: &mut ChaCha8Rng) -> bool {
    debug_assert!((0.0..=1.0).contains(&bler));
    let u = 1.0 - rng.gen::<f64>();
    u > bler
}

/// Largest CQI whose threshold is ≤ the effective SINR; 0 below all.
pub fn sinr_to_cqi(assets: &PhyAssets, gamma_eff_db: f64) -> usize {
    assets
        .cqi_thresholds
        .partition_point(|&t| t <= gamma_eff_db)
}

/// Transport block size in bits for an (MCS, subframe count) pair.
pub fn tbs_lookup(assets: &PhyAssets, mcs: usize, n_sf: usize) -> Result<u32, PhyError> {
    if mcs >= NUM_MCS {
        return Err(PhyError::McsOutOfRange(mcs));
    }
    if n_sf == 0 || n_sf > MAX_NSF {
        return Err(PhyError::NsfOutOfRange(n_sf));
    }
    Ok(assets.tbs[mcs * MAX_NSF + n_sf - 1])
}

/// Inverse-interpolate each curve at the target BLER (used to check the
/// bundled threshold table stays consistent with the curve set).
pub fn derive_cqi_thresholds(curves: &[BlerCurve], target: f64) -> Vec<f64> {
    curves
        .iter()
        .skip(1) // CQI k maps to MCS k; CQI 0 has no threshold
        .map(|c| {
            let pts = &c.points;
            for w in pts.windows(2) {
                let ((s0, b0), (s1, b1)) = (w[0], w[1]);
                if b0 >= target && target >= b1 && b0 > b1 {
                    let t = (b0.ln() - target.ln()) / (b0.ln() - b1.ln());
                    return s0 + t * (s1 - s0);
                }
            }
            f64::NAN
        })
        .collect()
}
