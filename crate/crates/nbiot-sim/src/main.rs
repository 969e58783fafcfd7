//! Command-line front end: run simulations, print the link budget,
//! inspect the reporting traffic model and dump network layouts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use nbiot_sim::channel::{
    antenna_gain_db, path_loss_db, pattern_angle_deg, AntennaPattern, PathLossParams,
};
use nbiot_sim::config::{ConfigError, SimConfig};
use nbiot_sim::engine::{self, RngStreams, SimError, SimResult};
use nbiot_sim::mac::Direction;
use nbiot_sim::metrics::{
    build_cdf, coupling_cdf_csv, link_budget, link_budget_csv, normalized_user_throughput,
    summary_csv, throughput_csv,
};
use nbiot_sim::topology::{
    attach_terminals, build_layout, build_pixel_map, drop_terminals, sites_csv, terminals_csv,
};
use nbiot_sim::traffic::{
    offered_load_per_sector, offered_load_per_terminal, population_packet_rate,
    MAR_NOMINAL_MEAN_BYTES,
};

/// Declares one optional CLI flag per config key; set flags become
/// `key = value` lines appended after the config file, so the usual
/// parser enforces precedence (flag over file over default) and syntax.
macro_rules! overrides {
    ($($field:ident),* $(,)?) => {
        #[derive(Args, Debug, Default)]
        struct Overrides {
            $(
                #[arg(
                    long,
                    alias = stringify!($field),
                    value_name = "VALUE",
                    help_heading = "Config overrides"
                )]
                $field: Option<String>,
            )*
        }

        impl Overrides {
            fn lines(&self) -> Vec<String> {
                let mut v = Vec::new();
                $(
                    if let Some(val) = &self.$field {
                        v.push(format!("{} = {}", stringify!($field), val));
                    }
                )*
                v
            }
        }
    };
}

overrides!(
    num_sites,
    sectors_per_site,
    inter_site_distance,
    carrier_freq,
    bandwidth_dl,
    subcarrier_ul,
    enb_tx_power,
    terminal_tx_power,
    enb_antenna_gain_max,
    terminal_antenna_gain,
    enb_noise_figure,
    terminal_noise_figure,
    thermal_noise_density,
    cable_loss,
    penetration_loss,
    interference_margin,
    shadow_std,
    shadow_corr_distance,
    shadow_grid_spacing,
    enb_antenna_height,
    min_link_distance,
    pixel_resolution,
    num_terminals,
    num_ttis,
    scheduler,
    harq_feedback_delay,
    harq_max_retx,
    edrx_enabled,
    edrx_k,
    ptw_length,
    inactivity_timer,
    rng_seed,
    pattern_plane,
    psi_mode,
    fading_model,
    fading_temporal_corr,
    pf_ewma_beta,
    traffic_mode,
    packet_min_bytes,
    packet_shape,
    packet_cap_bytes,
    target_snr_dl,
    target_snr_ul,
    process_gain,
    dl_nsf,
    ul_ru_duration,
    roi_all_cells,
    fast_forward,
);

#[derive(Parser, Debug)]
#[command(name = "nbiot-sim", version, about = "System-level NB-IoT network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Config file with `key = value` lines; missing keys take defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the simulation and write result CSVs.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for the result CSVs.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        /// Number of independent replicas (seeds rng_seed, rng_seed+1, ...).
        #[arg(long, value_name = "N", default_value_t = 1)]
        replicas: usize,
        /// Worker threads for running replicas in parallel.
        #[arg(long, value_name = "N", default_value_t = 1)]
        jobs: usize,
        /// Print progress to stderr.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Print the maximum-coupling-loss link budget for both directions.
    Mcl {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print the periodic-reporting traffic model figures.
    Traffic {
        #[command(flatten)]
        common: CommonArgs,
        /// Terminal density used for the per-sector load row.
        #[arg(long, value_name = "N")]
        terminals_per_sector: Option<f64>,
    },
    /// Write the site and terminal layout CSVs.
    DumpLayout {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for sites.csv and terminals.csv.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
}

enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        CliError::Config(e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> CliError {
        match e {
            SimError::Config(c) => CliError::Config(c),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

fn build_config(common: &CommonArgs) -> Result<SimConfig, CliError> {
    let mut text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(ConfigError::from)?,
        None => String::new(),
    };
    for line in common.overrides.lines() {
        text.push('\n');
        text.push_str(&line);
    }
    Ok(SimConfig::parse(&text)?)
}

/// Concatenates per-terminal series across replicas; per-sector eligible
/// counts become cross-replica means.
fn merge_results(results: Vec<SimResult>) -> SimResult {
    let n = results.len() as f64;
    let mut iter = results.into_iter();
    let mut merged = iter.next().expect("at least one replica");
    for r in iter {
        merged.num_terminals += r.num_terminals;
        merged.serving_sector.extend(r.serving_sector);
        merged.coupling_to_site0_db.extend(r.coupling_to_site0_db);
        merged.coupling_serving_db.extend(r.coupling_serving_db);
        for (dst, src) in [(&mut merged.dl, r.dl), (&mut merged.ul, r.ul)] {
            dst.delivered_bits.extend(src.delivered_bits);
            dst.dropped_bits.extend(src.dropped_bits);
            dst.offered_bits.extend(src.offered_bits);
            dst.in_flight_bits.extend(src.in_flight_bits);
            dst.tx_ttis.extend(src.tx_ttis);
        }
        for (a, b) in merged
            .avg_eligible_per_sector
            .iter_mut()
            .zip(r.avg_eligible_per_sector)
        {
            *a += b;
        }
        merged.avg_active_terminals += r.avg_active_terminals;
        merged.total_grants += r.total_grants;
    }
    for a in merged.avg_eligible_per_sector.iter_mut() {
        *a /= n;
    }
    merged.avg_active_terminals /= n;
    merged
}

fn run_replicas(
    cfg: &SimConfig,
    replicas: usize,
    jobs: usize,
    verbose: bool,
) -> Result<SimResult, CliError> {
    let results: Mutex<Vec<(usize, SimResult)>> = Mutex::new(Vec::with_capacity(replicas));
    let next = AtomicUsize::new(0);
    let error: Mutex<Option<SimError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(replicas) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= replicas || error.lock().unwrap().is_some() {
                    return;
                }
                let mut c = cfg.clone();
                c.rng_seed = cfg.rng_seed.wrapping_add(i as u64);
                if verbose {
                    eprintln!("replica {} of {replicas}: seed {}", i + 1, c.rng_seed);
                }
                match engine::run(c) {
                    Ok(r) => results.lock().unwrap().push((i, r)),
                    Err(e) => *error.lock().unwrap() = Some(e),
                }
            });
        }
    });
    if let Some(e) = error.into_inner().unwrap() {
        return Err(e.into());
    }
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    Ok(merge_results(results.into_iter().map(|(_, r)| r).collect()))
}

fn cmd_run(
    common: &CommonArgs,
    out: &Path,
    replicas: usize,
    jobs: usize,
    verbose: bool,
) -> Result<(), CliError> {
    if replicas == 0 {
        return Err(CliError::Runtime("--replicas must be >= 1".into()));
    }
    let cfg = build_config(common)?;
    let result = run_replicas(&cfg, replicas, jobs, verbose)?;
    let stats = normalized_user_throughput(&result, cfg.bandwidth_dl);
    let cdf = build_cdf(&result.coupling_to_site0_db)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let budget = link_budget_csv(
        &link_budget(Direction::Dl, &cfg),
        &link_budget(Direction::Ul, &cfg),
    );
    let summary = summary_csv(&result, &stats);
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("coupling_cdf.csv"), coupling_cdf_csv(&cdf))?;
    std::fs::write(out.join("throughput.csv"), throughput_csv(&stats))?;
    std::fs::write(out.join("summary.csv"), &summary)?;
    std::fs::write(out.join("link_budget.csv"), budget)?;
    if verbose {
        eprintln!("wrote 4 CSV files to {}", out.display());
    }
    print!("{summary}");
    Ok(())
}

fn cmd_mcl(common: &CommonArgs) -> Result<(), CliError> {
    let cfg = build_config(common)?;
    print!(
        "{}",
        link_budget_csv(
            &link_budget(Direction::Dl, &cfg),
            &link_budget(Direction::Ul, &cfg),
        )
    );
    Ok(())
}

fn cmd_traffic(common: &CommonArgs, terminals_per_sector: Option<f64>) -> Result<(), CliError> {
    let cfg = build_config(common)?;
    let density = terminals_per_sector
        .unwrap_or(cfg.num_terminals as f64 / cfg.num_sectors() as f64);
    println!("metric,value");
    println!("packet_rate_per_terminal_hz,{:.6e}", population_packet_rate());
    println!(
        "offered_load_per_terminal_bps,{:.6e}",
        offered_load_per_terminal(MAR_NOMINAL_MEAN_BYTES)
    );
    println!("terminals_per_sector,{density:.1}");
    println!(
        "offered_load_per_sector_bps,{:.1}",
        offered_load_per_sector(density, MAR_NOMINAL_MEAN_BYTES)
    );
    Ok(())
}

fn cmd_dump_layout(common: &CommonArgs, out: &Path) -> Result<(), CliError> {
    let cfg = build_config(common)?;
    let (sites, sectors) = build_layout(&cfg);
    let map = build_pixel_map(&cfg, &sites);
    let streams = RngStreams::new(cfg.rng_seed);
    let mut rng = streams.stream(RngStreams::PLACEMENT);
    let mut terminals =
        drop_terminals(&cfg, &map, &mut rng).map_err(|e| CliError::Runtime(e.to_string()))?;
    // Attach by pattern gain minus path loss; shadowing belongs to `run`.
    let params = PathLossParams::from_config(&cfg);
    let pattern = AntennaPattern::from_config(&cfg);
    attach_terminals(&mut terminals, sectors.len(), |s, t| {
        let site = &sites[sectors[s].site_id];
        let (dx, dy) = (t.x - site.x, t.y - site.y);
        let r = dx.hypot(dy).max(cfg.min_link_distance);
        let theta = pattern_angle_deg(
            dx,
            dy,
            sectors[s].boresight_azimuth,
            cfg.pattern_plane,
            cfg.enb_antenna_height,
        );
        antenna_gain_db(theta, &pattern) - path_loss_db(r, &params).unwrap()
    });
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("sites.csv"), sites_csv(&sites))?;
    std::fs::write(
        out.join("terminals.csv"),
        terminals_csv(&terminals, cfg.sectors_per_site),
    )?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run {
            common,
            out,
            replicas,
            jobs,
            verbose,
        } => cmd_run(common, out, *replicas, *jobs, *verbose),
        Command::Mcl { common } => cmd_mcl(common),
        Command::Traffic {
            common,
            terminals_per_sector,
        } => cmd_traffic(common, *terminals_per_sector),
        Command::DumpLayout { common, out } => cmd_dump_layout(common, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
