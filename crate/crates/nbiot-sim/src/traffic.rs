//! Mobile-autonomous-reporting traffic (periodic reports, truncated
//! Pareto payloads) and the eDRX sleep / paging-window / connected state
//! machine.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// TTIs per second (1 ms TTI).
pub const TTIS_PER_S: u64 = 1000;
/// One superframe: 1024 frames of 10 subframes = 10.24 s.
pub const SUPERFRAME_TTIS: u64 = 10_240;

/// Report-period classes: (period seconds, population share).
pub const MAR_CLASSES: [(u64, f64); 4] =
    [(86_400, 0.40), (7_200, 0.40), (3_600, 0.15), (1_800, 0.05)];

/// Nominal mean report payload of the standard MAR model, used by the
/// closed-form load figures.
pub const MAR_NOMINAL_MEAN_BYTES: f64 = 32.0;

/// Population-average packet rate in packets/s/terminal.
pub fn population_packet_rate() -> f64 {
    MAR_CLASSES.iter().map(|&(p, w)| w / p as f64).sum()
}

/// Offered load in bit/s/terminal at a given mean payload.
pub fn offered_load_per_terminal(mean_packet_bytes: f64) -> f64 {
    population_packet_rate() * mean_packet_bytes * 8.0
}

/// Offered load in bit/s/sector for a terminal population.
pub fn offered_load_per_sector(terminals_per_sector: f64, mean_packet_bytes: f64) -> f64 {
    terminals_per_sector * offered_load_per_terminal(mean_packet_bytes)
}

/// Per-terminal periodic reporting schedule.
#[derive(Debug, Clone, Copy)]
pub struct MarProfile {
    pub period_ttis: u64,
    pub phase_ttis: u64,
}

impl MarProfile {
    /// Draw a period class by population share and a uniform phase.
    pub fn assign(rng: &mut ChaCha8Rng) -> MarProfile {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut period_s = MAR_CLASSES[MAR_CLASSES.len() - 1].0;
        for &(p, w) in &MAR_CLASSES {
            acc += w;
            if u < acc {
                period_s = p;
                break;
            }
        }
        let period_ttis = period_s * TTIS_PER_S;
        let phase_ttis = rng.gen_range(0..period_ttis);
        MarProfile {
            period_ttis,
            phase_ttis,
        }
    }

    /// Smallest phase + m·period strictly after `now`.
    pub fn next_report_time(&self, now: u64) -> u64 {
        if now < self.phase_ttis {
            return self.phase_ttis;
        }
        let m = (now - self.phase_ttis) / self.period_ttis + 1;
        self.phase_ttis + m * self.period_ttis
    }
}

/// Truncated Pareto payload sizes (excess mass lumped at the cap).
#[derive(Debug, Clone, Copy)]
pub struct PacketSizeModel {
    pub min_bytes: f64,
    pub shape: f64,
    pub cap_bytes: f64,
}

impl PacketSizeModel {
    pub fn new(min_bytes: f64, shape: f64, cap_bytes: f64) -> PacketSizeModel {
        assert!(min_bytes > 0.0 && shape > 1.0 && cap_bytes >= min_bytes);
        PacketSizeModel {
            min_bytes,
            shape,
            cap_bytes,
        }
    }

    /// Inverse-transform draw, capped at `cap_bytes`.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.gen(); // [0, 1)
        let x = self.min_bytes * (1.0 - u).powf(-1.0 / self.shape);
        x.min(self.cap_bytes)
    }

    /// Exact mean of the capped distribution:
    /// E[min(X, L)] = κ·m^κ/(κ−1)·(m^{1−κ} − L^{1−κ}) + L·(m/L)^κ.
    pub fn analytic_mean(&self) -> f64 {
        let (m, k, l) = (self.min_bytes, self.shape, self.cap_bytes);
        let body = k * m.powf(k) / (k - 1.0) * (m.powf(1.0 - k) - l.powf(1.0 - k));
        body + l * (m / l).powf(k)
    }

    /// P(X ≥ cap) — the lump at the truncation point.
    pub fn cap_mass(&self) -> f64 {
        (self.min_bytes / self.cap_bytes).powf(self.shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdrxPhase {
    IdleSleep,
    PtwMonitor,
    Connected,
}

/// Per-terminal eDRX machine. The paging time window occupies a fixed
/// slot of each eDRX period; slots are staggered across terminals so the
/// awake population stays level.
#[derive(Debug, Clone, Copy)]
pub struct EdrxState {
    pub phase: EdrxPhase,
    pub period_ttis: u64,
    /// Offset of the PTW start within the period.
    pub ptw_offset_ttis: u64,
    pub ptw_len_ttis: u64,
    /// Connected-mode inactivity countdown, reloaded by `touch`.
    pub timer_ttis: u64,
    pub inactivity_ttis: u64,
}

/// eDRX period in seconds for exponent k: 2^k superframes.
pub fn edrx_period_s(k: u32) -> f64 {
    (SUPERFRAME_TTIS << k) as f64 / TTIS_PER_S as f64
}

impl EdrxState {
    /// Build the machine for one terminal, staggering PTW slots by
    /// terminal id so each slot carries ~N/(period/ptw) terminals.
    pub fn new(terminal: usize, k: u32, ptw_s: f64, inactivity_s: f64) -> EdrxState {
        let period_ttis = SUPERFRAME_TTIS << k;
        let ptw_len_ttis = ((ptw_s * TTIS_PER_S as f64).round() as u64)
            .clamp(1, period_ttis);
        let slots = (period_ttis / ptw_len_ttis).max(1);
        let ptw_offset_ttis = (terminal as u64 % slots) * ptw_len_ttis;
        let inactivity_ttis = (inactivity_s * TTIS_PER_S as f64).round() as u64;
        EdrxState {
            phase: EdrxPhase::IdleSleep,
            period_ttis,
            ptw_offset_ttis,
            ptw_len_ttis,
            timer_ttis: 0,
            inactivity_ttis,
        }
    }

    pub fn in_ptw(&self, t: u64) -> bool {
        let pos = t % self.period_ttis;
        pos >= self.ptw_offset_ttis && pos < self.ptw_offset_ttis + self.ptw_len_ttis
    }

    /// Next TTI ≥ `t` at which the PTW is open.
    pub fn next_ptw_start(&self, t: u64) -> u64 {
        if self.in_ptw(t) {
            return t;
        }
        let pos = t % self.period_ttis;
        let base = t - pos;
        if pos < self.ptw_offset_ttis {
            base + self.ptw_offset_ttis
        } else {
            base + self.period_ttis + self.ptw_offset_ttis
        }
    }

    /// Reload the connected-mode inactivity timer (any activity).
    pub fn touch(&mut self) {
        if self.phase == EdrxPhase::Connected {
            self.timer_ttis = self.inactivity_ttis;
        }
    }

    /// Advance the machine at TTI `t`. A sleeping terminal wakes only
    /// into PTW monitoring; a page during the PTW promotes it to
    /// connected; the inactivity timer sends it back to sleep.
    pub fn step(&mut self, t: u64, paging_pending: bool) {
        match self.phase {
            EdrxPhase::IdleSleep => {
                if self.in_ptw(t) {
                    self.phase = EdrxPhase::PtwMonitor;
                    // Fall through logically: a page waiting at wake-up is
                    // honored in the same TTI.
                    if paging_pending {
                        self.phase = EdrxPhase::Connected;
                        self.timer_ttis = self.inactivity_ttis;
                    }
                }
            }
            EdrxPhase::PtwMonitor => {
                if paging_pending {
                    self.phase = EdrxPhase::Connected;
                    self.timer_ttis = self.inactivity_ttis;
                } else if !self.in_ptw(t) {
                    self.phase = EdrxPhase::IdleSleep;
                }
            }
            EdrxPhase::Connected => {
                if self.timer_ttis == 0 {
                    self.phase = EdrxPhase::IdleSleep;
                } else {
                    self.timer_ttis -= 1;
                }
            }
        }
    }

    pub fn awake(&self) -> bool {
        self.phase != EdrxPhase::IdleSleep
    }
}

/// Terminals visible to the scheduler at `t`. With eDRX disabled every
/// terminal is always eligible.
pub fn eligible_terminals(states: &[EdrxState], edrx_enabled: bool) -> Vec<usize> {
    if !edrx_enabled {
        return (0..states.len()).collect();
    }
    states
        .iter()
        .enumerate()
        .filter(|(_, s)| s.awake())
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn edrx_period_table() {
        let expected = [
            20.48, 40.96, 81.92, 163.84, 327.68, 655.36, 1310.72, 2621.44, 5242.88, 10485.76,
        ];
        for (i, &e) in expected.iter().enumerate() {
            assert!((edrx_period_s(i as u32 + 1) - e).abs() < 1e-9);
        }
    }

    #[test]
    fn population_rate_matches_closed_form() {
        let r = population_packet_rate();
        assert!((r - 1.296e-4).abs() / 1.296e-4 < 1e-3, "{r}");
        let per_sector = offered_load_per_sector(52_549.0, MAR_NOMINAL_MEAN_BYTES);
        assert!((per_sector - 1744.6).abs() / 1744.6 < 1e-3, "{per_sector}");
    }

    #[test]
    fn next_report_examples() {
        let p = MarProfile {
            period_ttis: 1_800_000,
            phase_ttis: 0,
        };
        assert_eq!(p.next_report_time(0), 1_800_000);
        assert_eq!(p.next_report_time(1_799_999), 1_800_000);
        assert_eq!(p.next_report_time(1_800_000), 3_600_000);
        let q = MarProfile {
            period_ttis: 100,
            phase_ttis: 37,
        };
        assert_eq!(q.next_report_time(0), 37);
        assert_eq!(q.next_report_time(37), 137);
        assert_eq!(q.next_report_time(236), 237);
    }

    #[test]
    fn class_shares_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let p = MarProfile::assign(&mut rng);
            let period_s = p.period_ttis / TTIS_PER_S;
            let idx = MAR_CLASSES.iter().position(|&(s, _)| s == period_s).unwrap();
            assert!(p.phase_ttis < p.period_ttis);
            counts[idx] += 1;
        }
        for (i, &(_, w)) in MAR_CLASSES.iter().enumerate() {
            let share = counts[i] as f64 / n as f64;
            assert!((share - w).abs() < 0.01, "class {i}: {share} vs {w}");
        }
    }

    #[test]
    fn packet_draws_in_support() {
        let m = PacketSizeModel::new(24.0, 2.5, 200.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let x = m.draw(&mut rng);
            assert!((24.0..=200.0).contains(&x));
        }
    }

    #[test]
    fn packet_mean_matches_analytic() {
        let m = PacketSizeModel::new(24.0, 2.5, 200.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| m.draw(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - m.analytic_mean()).abs() < 0.2, "{mean} vs {}", m.analytic_mean());
    }

    #[test]
    fn packet_ks_against_truncated_cdf() {
        // KS on the continuous part (draws below the cap), plus a
        // binomial check of the lump at the cap.
        let m = PacketSizeModel::new(24.0, 2.5, 200.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mut below: Vec<f64> = Vec::new();
        let mut at_cap = 0usize;
        for _ in 0..n {
            let x = m.draw(&mut rng);
            if x >= 200.0 {
                at_cap += 1;
            } else {
                below.push(x);
            }
        }
        let p_cap = m.cap_mass();
        let frac = at_cap as f64 / n as f64;
        assert!((frac - p_cap).abs() < 3.0 * (p_cap / n as f64).sqrt() + 1e-4);
        below.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nn = below.len() as f64;
        let denom = 1.0 - p_cap;
        let mut ks: f64 = 0.0;
        for (i, &x) in below.iter().enumerate() {
            let cdf = (1.0 - (24.0f64 / x).powf(2.5)) / denom;
            ks = ks
                .max((cdf - i as f64 / nn).abs())
                .max((cdf - (i + 1) as f64 / nn).abs());
        }
        assert!(ks < 1.628 / nn.sqrt(), "KS {ks}");
    }

    #[test]
    fn duty_cycle_without_paging() {
        let mut s = EdrxState::new(3, 1, 2.56, 10.0);
        assert_eq!(s.period_ttis, 20_480);
        assert_eq!(s.ptw_len_ttis, 2_560);
        let periods = 5u64;
        let mut awake = 0u64;
        for t in 0..periods * s.period_ttis {
            s.step(t, false);
            if s.awake() {
                awake += 1;
            }
        }
        assert_eq!(awake, periods * s.ptw_len_ttis);
    }

    #[test]
    fn paging_promotes_and_timer_demotes() {
        let mut s = EdrxState::new(0, 1, 2.56, 0.05);
        let mut became_connected = None;
        let mut back_asleep = None;
        for t in 0..s.period_ttis {
            let page = t == 100 && s.phase == EdrxPhase::PtwMonitor;
            s.step(t, page);
            if s.phase == EdrxPhase::Connected && became_connected.is_none() {
                became_connected = Some(t);
            }
            if became_connected.is_some() && s.phase == EdrxPhase::IdleSleep && back_asleep.is_none()
            {
                back_asleep = Some(t);
            }
        }
        let up = became_connected.expect("page must connect");
        let down = back_asleep.expect("timer must expire");
        assert_eq!(up, 100);
        assert_eq!(down - up, 51, "timer of 50 TTIs plus the expiry step");
    }

    #[test]
    fn never_sleep_to_connected_directly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = EdrxState::new(5, 1, 2.56, 0.2);
        let mut prev = s.phase;
        for t in 0..3 * s.period_ttis {
            s.step(t, rng.gen::<f64>() < 0.01);
            if prev == EdrxPhase::IdleSleep {
                assert_ne!(s.phase, EdrxPhase::Connected);
            }
            prev = s.phase;
        }
    }

    #[test]
    fn staggered_population_stays_level() {
        // 500 terminals, k = 1: 8 PTW slots, so 62-63 awake at any TTI.
        let n = 500usize;
        let mut states: Vec<EdrxState> =
            (0..n).map(|i| EdrxState::new(i, 1, 2.56, 10.0)).collect();
        for t in 0..2 * 20_480u64 {
            for s in states.iter_mut() {
                s.step(t, false);
            }
            if t > 0 {
                let awake = eligible_terminals(&states, true).len();
                assert!(
                    (62..=63).contains(&awake),
                    "awake {awake} at tti {t}"
                );
            }
        }
    }

    #[test]
    fn edrx_disabled_passthrough() {
        let states: Vec<EdrxState> = (0..5).map(|i| EdrxState::new(i, 1, 2.56, 10.0)).collect();
        assert_eq!(eligible_terminals(&states, false), vec![0, 1, 2, 3, 4]);
        assert!(eligible_terminals(&states, true).is_empty(), "all start asleep");
    }

    #[test]
    fn next_ptw_start_arithmetic() {
        let s = EdrxState::new(2, 1, 2.56, 10.0);
        let off = s.ptw_offset_ttis;
        assert_eq!(s.next_ptw_start(0), off);
        assert_eq!(s.next_ptw_start(off), off);
        assert_eq!(s.next_ptw_start(off + s.ptw_len_ttis), s.period_ttis + off);
    }
}
