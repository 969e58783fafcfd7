//! Simulation parameters: flat `key = value` config files with validated
//! defaults. The default values follow 3GPP TS 36.888 style NB-IoT
//! deployment assumptions (19 tri-sector cells, 1732 m inter-site
//! distance, 900 MHz stand-alone carrier).

use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: malformed entry `{text}` (expected `key = value`)")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("`{key}` out of range: {reason}")]
    Validation { key: String, reason: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    RoundRobin,
    ProportionalFair,
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheduler::RoundRobin => write!(f, "RR"),
            Scheduler::ProportionalFair => write!(f, "PF"),
        }
    }
}

/// Which plane the sector pattern's angle argument is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternPlane {
    Horizontal,
    Vertical,
}

/// How the minimum-path-loss floor is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiMode {
    /// Evaluate the path-loss model at `min_link_distance` and subtract
    /// the maximum antenna gains.
    Derived,
    /// Fixed 178.96 dB literature value.
    PaperValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingModel {
    BlockRayleigh,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficMode {
    /// Awake terminals always have data pending in both directions.
    FullBuffer,
    /// Mobile-autonomous-reporting periodic uplink reports with Pareto
    /// payload sizes; downlink mirrors each report.
    Mar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub num_sites: usize,
    pub sectors_per_site: usize,
    pub inter_site_distance: f64,
    pub carrier_freq: f64,
    pub bandwidth_dl: f64,
    pub subcarrier_ul: f64,
    pub enb_tx_power: f64,
    pub terminal_tx_power: f64,
    pub enb_antenna_gain_max: f64,
    pub terminal_antenna_gain: f64,
    pub enb_noise_figure: f64,
    pub terminal_noise_figure: f64,
    pub thermal_noise_density: f64,
    pub cable_loss: f64,
    pub penetration_loss: f64,
    pub interference_margin: f64,
    pub shadow_std: f64,
    pub shadow_corr_distance: f64,
    pub shadow_grid_spacing: f64,
    pub enb_antenna_height: f64,
    pub min_link_distance: f64,
    pub pixel_resolution: f64,
    pub num_terminals: usize,
    pub num_ttis: u64,
    pub scheduler: Scheduler,
    pub harq_feedback_delay: u64,
    pub harq_max_retx: u32,
    pub edrx_enabled: bool,
    pub edrx_k: u32,
    pub ptw_length: f64,
    pub inactivity_timer: f64,
    pub rng_seed: u64,
    pub pattern_plane: PatternPlane,
    pub psi_mode: PsiMode,
    pub fading_model: FadingModel,
    pub fading_temporal_corr: f64,
    pub pf_ewma_beta: f64,
    pub traffic_mode: TrafficMode,
    pub packet_min_bytes: f64,
    pub packet_shape: f64,
    pub packet_cap_bytes: f64,
    pub target_snr_dl: f64,
    pub target_snr_ul: f64,
    pub process_gain: f64,
    pub dl_nsf: u32,
    pub ul_ru_duration: u64,
    pub roi_all_cells: bool,
    pub fast_forward: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_sites: 19,
            sectors_per_site: 3,
            inter_site_distance: 1732.0,
            carrier_freq: 900.0,
            bandwidth_dl: 180_000.0,
            subcarrier_ul: 15_000.0,
            enb_tx_power: 43.0,
            terminal_tx_power: 23.0,
            enb_antenna_gain_max: 18.0,
            terminal_antenna_gain: -4.0,
            enb_noise_figure: 5.0,
            terminal_noise_figure: 3.0,
            thermal_noise_density: -174.0,
            cable_loss: 3.0,
            penetration_loss: 20.0,
            interference_margin: 0.0,
            shadow_std: 8.0,
            shadow_corr_distance: 110.0,
            shadow_grid_spacing: 20.0,
            enb_antenna_height: 15.0,
            min_link_distance: 35.0,
            pixel_resolution: 5.0,
            num_terminals: 500,
            num_ttis: 10_000,
            scheduler: Scheduler::RoundRobin,
            harq_feedback_delay: 4,
            harq_max_retx: 4,
            edrx_enabled: true,
            edrx_k: 1,
            ptw_length: 2.56,
            inactivity_timer: 10.0,
            rng_seed: 1,
            pattern_plane: PatternPlane::Horizontal,
            psi_mode: PsiMode::Derived,
            fading_model: FadingModel::BlockRayleigh,
            fading_temporal_corr: 0.9,
            pf_ewma_beta: 0.01,
            traffic_mode: TrafficMode::FullBuffer,
            packet_min_bytes: 24.0,
            packet_shape: 2.5,
            packet_cap_bytes: 200.0,
            target_snr_dl: -4.6,
            target_snr_ul: -11.8,
            process_gain: 0.0,
            dl_nsf: 1,
            ul_ru_duration: 8,
            roi_all_cells: false,
            fast_forward: true,
        }
    }
}

macro_rules! set_field {
    ($cfg:expr, $key:expr, $val:expr, $line:expr; $($name:ident: $parse:ident),+ $(,)?) => {
        match $key {
            $(stringify!($name) => {
                $cfg.$name = $parse($key, $val, $line)?;
            })+
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: $line,
                    key: $key.to_string(),
                })
            }
        }
    };
}

fn parse_f64(key: &str, val: &str, line: usize) -> Result<f64, ConfigError> {
    val.parse::<f64>().map_err(|e| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn parse_usize(key: &str, val: &str, line: usize) -> Result<usize, ConfigError> {
    val.parse::<usize>().map_err(|e| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn parse_u64(key: &str, val: &str, line: usize) -> Result<u64, ConfigError> {
    val.parse::<u64>().map_err(|e| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn parse_u32(key: &str, val: &str, line: usize) -> Result<u32, ConfigError> {
    val.parse::<u32>().map_err(|e| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, val: &str, line: usize) -> Result<bool, ConfigError> {
    match val {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("`{val}` is not a boolean"),
        }),
    }
}

fn parse_scheduler(key: &str, val: &str, line: usize) -> Result<Scheduler, ConfigError> {
    match val.to_ascii_uppercase().as_str() {
        "RR" => Ok(Scheduler::RoundRobin),
        "PF" => Ok(Scheduler::ProportionalFair),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("`{val}` is not one of RR, PF"),
        }),
    }
}

fn parse_plane(key: &str, val: &str, line: usize) -> Result<PatternPlane, ConfigError> {
    match val {
        "horizontal" => Ok(PatternPlane::Horizontal),
        "vertical" => Ok(PatternPlane::Vertical),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("`{val}` is not one of horizontal, vertical"),
        }),
    }
}

fn parse_psi(key: &str, val: &str, line: usize) -> Result<PsiMode, ConfigError> {
    match val {
        "derived" => Ok(PsiMode::Derived),
        "paper_value" => Ok(PsiMode::PaperValue),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("`{val}` is not one of derived, paper_value"),
        }),
    }
}

fn parse_fading(key: &str, val: &str, line: usize) -> Result<FadingModel, ConfigError> {
    match val {
        "block_rayleigh" => Ok(FadingModel::BlockRayleigh),
        "none" => Ok(FadingModel::None),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("`{val}` is not one of block_rayleigh, none"),
        }),
    }
}

fn parse_traffic(key: &str, val: &str, line: usize) -> Result<TrafficMode, ConfigError> {
    match val {
        "full_buffer" => Ok(TrafficMode::FullBuffer),
        "mar" => Ok(TrafficMode::Mar),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("`{val}` is not one of full_buffer, mar"),
        }),
    }
}

impl SimConfig {
    /// Parse a config file body. Unknown keys are rejected so that typos
    /// surface immediately; missing keys take defaults. Validation runs
    /// after the whole file is applied.
    pub fn parse(text: &str) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let body = body.trim();
            if body.is_empty() {
                continue;
            }
            let (key, val) = body.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line,
                text: body.to_string(),
            })?;
            let key = key.trim();
            let val = val.trim();
            set_field!(cfg, key, val, line;
                num_sites: parse_usize,
                sectors_per_site: parse_usize,
                inter_site_distance: parse_f64,
                carrier_freq: parse_f64,
                bandwidth_dl: parse_f64,
                subcarrier_ul: parse_f64,
                enb_tx_power: parse_f64,
                terminal_tx_power: parse_f64,
                enb_antenna_gain_max: parse_f64,
                terminal_antenna_gain: parse_f64,
                enb_noise_figure: parse_f64,
                terminal_noise_figure: parse_f64,
                thermal_noise_density: parse_f64,
                cable_loss: parse_f64,
                penetration_loss: parse_f64,
                interference_margin: parse_f64,
                shadow_std: parse_f64,
                shadow_corr_distance: parse_f64,
                shadow_grid_spacing: parse_f64,
                enb_antenna_height: parse_f64,
                min_link_distance: parse_f64,
                pixel_resolution: parse_f64,
                num_terminals: parse_usize,
                num_ttis: parse_u64,
                scheduler: parse_scheduler,
                harq_feedback_delay: parse_u64,
                harq_max_retx: parse_u32,
                edrx_enabled: parse_bool,
                edrx_k: parse_u32,
                ptw_length: parse_f64,
                inactivity_timer: parse_f64,
                rng_seed: parse_u64,
                pattern_plane: parse_plane,
                psi_mode: parse_psi,
                fading_model: parse_fading,
                fading_temporal_corr: parse_f64,
                pf_ewma_beta: parse_f64,
                traffic_mode: parse_traffic,
                packet_min_bytes: parse_f64,
                packet_shape: parse_f64,
                packet_cap_bytes: parse_f64,
                target_snr_dl: parse_f64,
                target_snr_ul: parse_f64,
                process_gain: parse_f64,
                dl_nsf: parse_u32,
                ul_ru_duration: parse_u64,
                roi_all_cells: parse_bool,
                fast_forward: parse_bool,
            );
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SimConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        SimConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn err(key: &str, reason: impl Into<String>) -> ConfigError {
            ConfigError::Validation {
                key: key.to_string(),
                reason: reason.into(),
            }
        }
        let finite = [
            ("inter_site_distance", self.inter_site_distance),
            ("carrier_freq", self.carrier_freq),
            ("bandwidth_dl", self.bandwidth_dl),
            ("subcarrier_ul", self.subcarrier_ul),
            ("enb_tx_power", self.enb_tx_power),
            ("terminal_tx_power", self.terminal_tx_power),
            ("enb_antenna_gain_max", self.enb_antenna_gain_max),
            ("terminal_antenna_gain", self.terminal_antenna_gain),
            ("enb_noise_figure", self.enb_noise_figure),
            ("terminal_noise_figure", self.terminal_noise_figure),
            ("thermal_noise_density", self.thermal_noise_density),
            ("cable_loss", self.cable_loss),
            ("penetration_loss", self.penetration_loss),
            ("interference_margin", self.interference_margin),
            ("shadow_std", self.shadow_std),
            ("shadow_corr_distance", self.shadow_corr_distance),
            ("shadow_grid_spacing", self.shadow_grid_spacing),
            ("enb_antenna_height", self.enb_antenna_height),
            ("min_link_distance", self.min_link_distance),
            ("pixel_resolution", self.pixel_resolution),
            ("ptw_length", self.ptw_length),
            ("inactivity_timer", self.inactivity_timer),
            ("fading_temporal_corr", self.fading_temporal_corr),
            ("pf_ewma_beta", self.pf_ewma_beta),
            ("packet_min_bytes", self.packet_min_bytes),
            ("packet_shape", self.packet_shape),
            ("packet_cap_bytes", self.packet_cap_bytes),
            ("target_snr_dl", self.target_snr_dl),
            ("target_snr_ul", self.target_snr_ul),
            ("process_gain", self.process_gain),
        ];
        for (key, v) in finite {
            if !v.is_finite() {
                return Err(err(key, "must be finite"));
            }
        }
        if self.num_sites != 1 && self.num_sites != 19 {
            return Err(err("num_sites", "must be 1 or 19"));
        }
        if self.sectors_per_site != 3 {
            return Err(err("sectors_per_site", "must be 3"));
        }
        if self.inter_site_distance <= 2.0 * self.min_link_distance {
            return Err(err(
                "inter_site_distance",
                format!(
                    "must exceed 2*min_link_distance = {}",
                    2.0 * self.min_link_distance
                ),
            ));
        }
        if !(1..=10).contains(&self.edrx_k) {
            return Err(err("edrx_k", "must be in [1,10]"));
        }
        if self.pixel_resolution <= 0.0 {
            return Err(err("pixel_resolution", "must be > 0"));
        }
        if self.carrier_freq <= 0.0 {
            return Err(err("carrier_freq", "must be > 0"));
        }
        if self.enb_antenna_height <= 0.0 {
            return Err(err("enb_antenna_height", "must be > 0"));
        }
        if self.min_link_distance <= 0.0 {
            return Err(err("min_link_distance", "must be > 0"));
        }
        if self.bandwidth_dl <= 0.0 {
            return Err(err("bandwidth_dl", "must be > 0"));
        }
        if self.subcarrier_ul != 15_000.0 && self.subcarrier_ul != 3_750.0 {
            return Err(err("subcarrier_ul", "must be 15000 or 3750"));
        }
        if self.shadow_std < 0.0 {
            return Err(err("shadow_std", "must be >= 0"));
        }
        if self.shadow_corr_distance <= 0.0 {
            return Err(err("shadow_corr_distance", "must be > 0"));
        }
        if self.shadow_grid_spacing <= 0.0 {
            return Err(err("shadow_grid_spacing", "must be > 0"));
        }
        if self.ptw_length <= 0.0 {
            return Err(err("ptw_length", "must be > 0"));
        }
        if self.inactivity_timer < 0.0 {
            return Err(err("inactivity_timer", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.fading_temporal_corr) && self.fading_temporal_corr != 1.0 {
            return Err(err("fading_temporal_corr", "must be in [0,1]"));
        }
        if !(0.0 < self.pf_ewma_beta && self.pf_ewma_beta <= 1.0) {
            return Err(err("pf_ewma_beta", "must be in (0,1]"));
        }
        if self.packet_min_bytes <= 0.0 {
            return Err(err("packet_min_bytes", "must be > 0"));
        }
        if self.packet_shape <= 1.0 {
            return Err(err("packet_shape", "must be > 1"));
        }
        if self.packet_cap_bytes < self.packet_min_bytes {
            return Err(err("packet_cap_bytes", "must be >= packet_min_bytes"));
        }
        if self.dl_nsf == 0 || self.dl_nsf > 10 {
            return Err(err("dl_nsf", "must be in [1,10]"));
        }
        if self.ul_ru_duration == 0 {
            return Err(err("ul_ru_duration", "must be >= 1"));
        }
        Ok(())
    }

    /// Number of sectors in the layout.
    pub fn num_sectors(&self) -> usize {
        self.num_sites * self.sectors_per_site
    }

    /// eDRX period in seconds: 2^k superframes of 10.24 s.
    pub fn edrx_period_s(&self) -> f64 {
        10.24 * f64::from(1u32 << self.edrx_k)
    }

    /// Serialize to the same flat `key = value` format accepted by `parse`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write;
        let w = &mut s;
        let _ = writeln!(w, "num_sites = {}", self.num_sites);
        let _ = writeln!(w, "sectors_per_site = {}", self.sectors_per_site);
        let _ = writeln!(w, "inter_site_distance = {}", self.inter_site_distance);
        let _ = writeln!(w, "carrier_freq = {}", self.carrier_freq);
        let _ = writeln!(w, "bandwidth_dl = {}", self.bandwidth_dl);
        let _ = writeln!(w, "subcarrier_ul = {}", self.subcarrier_ul);
        let _ = writeln!(w, "enb_tx_power = {}", self.enb_tx_power);
        let _ = writeln!(w, "terminal_tx_power = {}", self.terminal_tx_power);
        let _ = writeln!(w, "enb_antenna_gain_max = {}", self.enb_antenna_gain_max);
        let _ = writeln!(w, "terminal_antenna_gain = {}", self.terminal_antenna_gain);
        let _ = writeln!(w, "enb_noise_figure = {}", self.enb_noise_figure);
        let _ = writeln!(w, "terminal_noise_figure = {}", self.terminal_noise_figure);
        let _ = writeln!(w, "thermal_noise_density = {}", self.thermal_noise_density);
        let _ = writeln!(w, "cable_loss = {}", self.cable_loss);
        let _ = writeln!(w, "penetration_loss = {}", self.penetration_loss);
        let _ = writeln!(w, "interference_margin = {}", self.interference_margin);
        let _ = writeln!(w, "shadow_std = {}", self.shadow_std);
        let _ = writeln!(w, "shadow_corr_distance = {}", self.shadow_corr_distance);
        let _ = writeln!(w, "shadow_grid_spacing = {}", self.shadow_grid_spacing);
        let _ = writeln!(w, "enb_antenna_height = {}", self.enb_antenna_height);
        let _ = writeln!(w, "min_link_distance = {}", self.min_link_distance);
        let _ = writeln!(w, "pixel_resolution = {}", self.pixel_resolution);
        let _ = writeln!(w, "num_terminals = {}", self.num_terminals);
        let _ = writeln!(w, "num_ttis = {}", self.num_ttis);
        let _ = writeln!(w, "scheduler = {}", self.scheduler);
        let _ = writeln!(w, "harq_feedback_delay = {}", self.harq_feedback_delay);
        let _ = writeln!(w, "harq_max_retx = {}", self.harq_max_retx);
        let _ = writeln!(w, "edrx_enabled = {}", self.edrx_enabled);
        let _ = writeln!(w, "edrx_k = {}", self.edrx_k);
        let _ = writeln!(w, "ptw_length = {}", self.ptw_length);
        let _ = writeln!(w, "inactivity_timer = {}", self.inactivity_timer);
        let _ = writeln!(w, "rng_seed = {}", self.rng_seed);
        let _ = writeln!(
            w,
            "pattern_plane = {}",
            match self.pattern_plane {
                PatternPlane::Horizontal => "horizontal",
                PatternPlane::Vertical => "vertical",
            }
        );
        let _ = writeln!(
            w,
            "psi_mode = {}",
            match self.psi_mode {
                PsiMode::Derived => "derived",
                PsiMode::PaperValue => "paper_value",
            }
        );
        let _ = writeln!(
            w,
            "fading_model = {}",
            match self.fading_model {
                FadingModel::BlockRayleigh => "block_rayleigh",
                FadingModel::None => "none",
            }
        );
        let _ = writeln!(w, "fading_temporal_corr = {}", self.fading_temporal_corr);
        let _ = writeln!(w, "pf_ewma_beta = {}", self.pf_ewma_beta);
        let _ = writeln!(
            w,
            "traffic_mode = {}",
            match self.traffic_mode {
                TrafficMode::FullBuffer => "full_buffer",
                TrafficMode::Mar => "mar",
            }
        );
        let _ = writeln!(w, "packet_min_bytes = {}", self.packet_min_bytes);
        let _ = writeln!(w, "packet_shape = {}", self.packet_shape);
        let _ = writeln!(w, "packet_cap_bytes = {}", self.packet_cap_bytes);
        let _ = writeln!(w, "target_snr_dl = {}", self.target_snr_dl);
        let _ = writeln!(w, "target_snr_ul = {}", self.target_snr_ul);
        let _ = writeln!(w, "process_gain = {}", self.process_gain);
        let _ = writeln!(w, "dl_nsf = {}", self.dl_nsf);
        let _ = writeln!(w, "ul_ru_duration = {}", self.ul_ru_duration);
        let _ = writeln!(w, "roi_all_cells = {}", self.roi_all_cells);
        let _ = writeln!(w, "fast_forward = {}", self.fast_forward);
        s
    }
}
