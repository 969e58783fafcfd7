//! Post-processing: empirical CDFs, normalized user throughput, the
//! link-budget calculator and the result CSV writers.

use std::fmt::Write as _;

use thiserror::Error;

use crate::config::SimConfig;
use crate::engine::{DirTotals, SimResult};
use crate::mac::Direction;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot build a CDF from zero samples")]
    EmptySamples,
}

/// Empirical CDF with ties collapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSeries {
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
}

pub fn build_cdf(samples: &[f64]) -> Result<CdfSeries, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut values = Vec::new();
    let mut fractions = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if i + 1 < sorted.len() && sorted[i + 1] == v {
            continue; // collapse ties onto the last occurrence
        }
        values.push(v);
        fractions.push((i + 1) as f64 / n);
    }
    Ok(CdfSeries { values, fractions })
}

impl CdfSeries {
    /// Fraction of samples ≤ x.
    pub fn fraction_at(&self, x: f64) -> f64 {
        match self.values.partition_point(|&v| v <= x) {
            0 => 0.0,
            i => self.fractions[i - 1],
        }
    }

    pub fn max_value(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Normalized user throughput per terminal and direction: delivered
/// bits over own transmission time and carrier bandwidth, divided by the
/// average number of simultaneously eligible terminals in the serving
/// sector (never less than one).
#[derive(Debug, Clone)]
pub struct ThroughputStats {
    pub dl_bps_per_hz: Vec<f64>,
    pub ul_bps_per_hz: Vec<f64>,
    pub median_dl: f64,
    pub median_ul: f64,
    pub mean_dl: f64,
    pub mean_ul: f64,
}

fn per_terminal(result: &SimResult, totals: &DirTotals, bandwidth_hz: f64) -> Vec<f64> {
    (0..result.num_terminals)
        .map(|i| {
            let tx_s = totals.tx_ttis[i] as f64 / 1000.0;
            if tx_s == 0.0 {
                return 0.0;
            }
            let share = result.avg_eligible_per_sector[result.serving_sector[i]].max(1.0);
            totals.delivered_bits[i] / (tx_s * bandwidth_hz) / share
        })
        .collect()
}

pub fn normalized_user_throughput(result: &SimResult, bandwidth_hz: f64) -> ThroughputStats {
    let dl = per_terminal(result, &result.dl, bandwidth_hz);
    let ul = per_terminal(result, &result.ul, bandwidth_hz);
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    ThroughputStats {
        median_dl: median(&dl),
        median_ul: median(&ul),
        mean_dl: mean(&dl),
        mean_ul: mean(&ul),
        dl_bps_per_hz: dl,
        ul_bps_per_hz: ul,
    }
}

/// The ten link-budget rows for one direction.
#[derive(Debug, Clone, Copy)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub thermal_noise_density_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub interference_margin_db: f64,
    pub occupied_bandwidth_hz: f64,
    pub effective_noise_dbm: f64,
    pub target_snr_db: f64,
    pub sensitivity_dbm: f64,
    pub process_gain_db: f64,
    pub mcl_db: f64,
}

pub fn link_budget(direction: Direction, cfg: &SimConfig) -> LinkBudget {
    let (tx, bw, nf, target) = match direction {
        Direction::Dl => (
            cfg.enb_tx_power,
            cfg.bandwidth_dl,
            cfg.enb_noise_figure,
            cfg.target_snr_dl,
        ),
        Direction::Ul => (
            cfg.terminal_tx_power,
            cfg.subcarrier_ul,
            cfg.terminal_noise_figure,
            cfg.target_snr_ul,
        ),
    };
    let effective_noise =
        cfg.thermal_noise_density + nf + cfg.interference_margin + 10.0 * bw.log10();
    let sensitivity = effective_noise + target;
    LinkBudget {
        tx_power_dbm: tx,
        thermal_noise_density_dbm_hz: cfg.thermal_noise_density,
        noise_figure_db: nf,
        interference_margin_db: cfg.interference_margin,
        occupied_bandwidth_hz: bw,
        effective_noise_dbm: effective_noise,
        target_snr_db: target,
        sensitivity_dbm: sensitivity,
        process_gain_db: cfg.process_gain,
        mcl_db: tx - sensitivity + cfg.process_gain,
    }
}

// --- CSV writers (UTF-8, LF, fixed precision for determinism) ---

pub fn coupling_cdf_csv(cdf: &CdfSeries) -> String {
    let mut out = String::from("value_db,fraction\n");
    for (v, f) in cdf.values.iter().zip(&cdf.fractions) {
        let _ = writeln!(out, "{v:.6},{f:.6}");
    }
    out
}

pub fn throughput_csv(stats: &ThroughputStats) -> String {
    let mut out = String::from("terminal_id,direction,bps_per_hz\n");
    for (i, v) in stats.dl_bps_per_hz.iter().enumerate() {
        let _ = writeln!(out, "{i},dl,{v:.9}");
    }
    for (i, v) in stats.ul_bps_per_hz.iter().enumerate() {
        let _ = writeln!(out, "{i},ul,{v:.9}");
    }
    out
}

pub fn summary_csv(result: &SimResult, stats: &ThroughputStats) -> String {
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    let mut out = String::from("metric,value\n");
    let rows: [(&str, f64); 14] = [
        ("num_terminals", result.num_terminals as f64),
        ("num_ttis", result.num_ttis as f64),
        ("total_grants", result.total_grants as f64),
        ("avg_active_terminals", result.avg_active_terminals),
        ("median_dl_bps_per_hz", stats.median_dl),
        ("median_ul_bps_per_hz", stats.median_ul),
        ("mean_dl_bps_per_hz", stats.mean_dl),
        ("mean_ul_bps_per_hz", stats.mean_ul),
        ("delivered_bits_dl", sum(&result.dl.delivered_bits)),
        ("delivered_bits_ul", sum(&result.ul.delivered_bits)),
        ("dropped_bits_dl", sum(&result.dl.dropped_bits)),
        ("dropped_bits_ul", sum(&result.ul.dropped_bits)),
        ("offered_bits_dl", sum(&result.dl.offered_bits)),
        ("offered_bits_ul", sum(&result.ul.offered_bits)),
    ];
    for (name, value) in rows {
        let _ = writeln!(out, "{name},{value:.6}");
    }
    out
}

pub fn link_budget_csv(dl: &LinkBudget, ul: &LinkBudget) -> String {
    let mut out = String::from("row,quantity,downlink,uplink\n");
    let rows: [(&str, f64, f64); 10] = [
        ("tx_power_dbm", dl.tx_power_dbm, ul.tx_power_dbm),
        (
            "thermal_noise_density_dbm_hz",
            dl.thermal_noise_density_dbm_hz,
            ul.thermal_noise_density_dbm_hz,
        ),
        ("noise_figure_db", dl.noise_figure_db, ul.noise_figure_db),
        (
            "interference_margin_db",
            dl.interference_margin_db,
            ul.interference_margin_db,
        ),
        (
            "occupied_bandwidth_hz",
            dl.occupied_bandwidth_hz,
            ul.occupied_bandwidth_hz,
        ),
        (
            "effective_noise_dbm",
            dl.effective_noise_dbm,
            ul.effective_noise_dbm,
        ),
        ("target_snr_db", dl.target_snr_db, ul.target_snr_db),
        ("sensitivity_dbm", dl.sensitivity_dbm, ul.sensitivity_dbm),
        ("process_gain_db", dl.process_gain_db, ul.process_gain_db),
        ("mcl_db", dl.mcl_db, ul.mcl_db),
    ];
    for (i, (name, d, u)) in rows.into_iter().enumerate() {
        let _ = writeln!(out, "{},{name},{d:.3},{u:.3}", i + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_singleton_and_ties() {
        let c = build_cdf(&[5.0]).unwrap();
        assert_eq!(c.values, vec![5.0]);
        assert_eq!(c.fractions, vec![1.0]);
        let c = build_cdf(&[2.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(c.values, vec![1.0, 2.0, 4.0]);
        assert_eq!(c.fractions, vec![0.25, 0.75, 1.0]);
        assert_eq!(c.fraction_at(0.5), 0.0);
        assert_eq!(c.fraction_at(2.0), 0.75);
        assert_eq!(c.fraction_at(100.0), 1.0);
        assert_eq!(c.max_value(), 4.0);
    }

    #[test]
    fn cdf_empty_is_an_error() {
        assert!(build_cdf(&[]).is_err());
    }

    #[test]
    fn cdf_of_standard_normal_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v = vec![0.0f64; 10_000];
        crate::channel::fill_standard_normal(&mut rng, &mut v);
        let c = build_cdf(&v).unwrap();
        assert!((c.fraction_at(0.0) - 0.5).abs() < 0.02);
        // monotone, ends at exactly 1.0
        assert!(c.fractions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*c.fractions.last().unwrap(), 1.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    #[test]
    fn link_budget_reference_values() {
        let cfg = SimConfig::default();
        let dl = link_budget(Direction::Dl, &cfg);
        let ul = link_budget(Direction::Ul, &cfg);
        assert!((dl.effective_noise_dbm - (-116.4)).abs() < 0.05);
        assert!((dl.sensitivity_dbm - (-121.0)).abs() < 0.05);
        assert!((dl.mcl_db - 164.0).abs() < 0.05);
        assert!((ul.effective_noise_dbm - (-129.2)).abs() < 0.05);
        assert!((ul.sensitivity_dbm - (-141.0)).abs() < 0.05);
        assert!((ul.mcl_db - 164.0).abs() < 0.05);
    }

    #[test]
    fn link_budget_row_identities() {
        let cfg = SimConfig {
            interference_margin: 2.0,
            process_gain: 10.0,
            ..SimConfig::default()
        };
        for dir in [Direction::Dl, Direction::Ul] {
            let b = link_budget(dir, &cfg);
            let noise = b.thermal_noise_density_dbm_hz
                + b.noise_figure_db
                + b.interference_margin_db
                + 10.0 * b.occupied_bandwidth_hz.log10();
            assert!((b.effective_noise_dbm - noise).abs() < 1e-9);
            assert!((b.sensitivity_dbm - (b.effective_noise_dbm + b.target_snr_db)).abs() < 1e-9);
            assert!(
                (b.mcl_db - (b.tx_power_dbm - b.sensitivity_dbm + b.process_gain_db)).abs() < 1e-9
            );
        }
    }

    #[test]
    fn process_gain_shifts_mcl() {
        let mut cfg = SimConfig::default();
        let base = link_budget(Direction::Dl, &cfg).mcl_db;
        cfg.process_gain = 10.0;
        assert!((link_budget(Direction::Dl, &cfg).mcl_db - base - 10.0).abs() < 1e-12);
    }

    fn fake_result(delivered: f64, tx_ttis: u64, eligible: f64) -> SimResult {
        let dl = DirTotals {
            delivered_bits: vec![delivered],
            dropped_bits: vec![0.0],
            offered_bits: vec![delivered],
            in_flight_bits: vec![0.0],
            tx_ttis: vec![tx_ttis],
        };
        let ul = DirTotals {
            delivered_bits: vec![0.0],
            dropped_bits: vec![0.0],
            offered_bits: vec![0.0],
            in_flight_bits: vec![0.0],
            tx_ttis: vec![0],
        };
        SimResult {
            num_ttis: 1000,
            num_terminals: 1,
            num_sectors: 1,
            serving_sector: vec![0],
            coupling_to_site0_db: vec![120.0],
            coupling_serving_db: vec![120.0],
            dl,
            ul,
            avg_eligible_per_sector: vec![eligible],
            avg_active_terminals: eligible,
            total_grants: tx_ttis,
        }
    }

    #[test]
    fn throughput_example_single_terminal() {
        // 680 bits over one second of transmission on 180 kHz.
        let r = fake_result(680.0, 1000, 1.0);
        let s = normalized_user_throughput(&r, 180_000.0);
        assert!((s.dl_bps_per_hz[0] - 680.0 / 180_000.0).abs() < 1e-12);
        assert!((s.median_dl - 0.003778).abs() < 1e-5);
        assert_eq!(s.median_ul, 0.0, "no uplink deliveries, no error");
    }

    #[test]
    fn throughput_shared_sector_divides_by_eligible_count() {
        let r = fake_result(680.0, 1000, 4.0);
        let s = normalized_user_throughput(&r, 180_000.0);
        assert!((s.dl_bps_per_hz[0] - 680.0 / 180_000.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn csv_formats() {
        let cdf = build_cdf(&[1.0, 2.0]).unwrap();
        let text = coupling_cdf_csv(&cdf);
        assert_eq!(text, "value_db,fraction\n1.000000,0.500000\n2.000000,1.000000\n");
        let cfg = SimConfig::default();
        let lb = link_budget_csv(&link_budget(Direction::Dl, &cfg), &link_budget(Direction::Ul, &cfg));
        assert!(lb.starts_with("row,quantity,downlink,uplink\n"));
        assert_eq!(lb.lines().count(), 11);
        assert!(lb.contains("10,mcl_db,164.047,164.039"));
        let r = fake_result(680.0, 1000, 1.0);
        let s = normalized_user_throughput(&r, 180_000.0);
        assert!(summary_csv(&r, &s).contains("median_dl_bps_per_hz,0.003778"));
        assert!(throughput_csv(&s).contains("0,dl,0.003777778"));
    }

    #[test]
    fn csv_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<f64> = (0..500).map(|_| rng.gen::<f64>() * 40.0 + 120.0).collect();
        let a = coupling_cdf_csv(&build_cdf(&samples).unwrap());
        let b = coupling_cdf_csv(&build_cdf(&samples).unwrap());
        assert_eq!(a, b);
        assert!(!a.contains('\r'));
    }
}
