//! Large-scale propagation (path loss, sector antenna pattern, spatially
//! correlated log-normal shadowing) and per-TTI small-scale fading.
//!
//! Large-scale gains are frozen for a whole run; only the fading process
//! advances inside the TTI loop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{FadingModel, PatternPlane, PsiMode, SimConfig};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("shadowing correlation matrix is not positive-definite")]
    NotPositiveDefinite,
    #[error("shadowing grid has {nodes} nodes, limit {limit}; increase shadow_grid_spacing")]
    GridTooLarge { nodes: usize, limit: usize },
}

/// Suburban macro path-loss model parameters.
#[derive(Debug, Clone, Copy)]
pub struct PathLossParams {
    /// eNodeB antenna height in meters.
    pub height_m: f64,
    /// Carrier frequency in MHz.
    pub freq_mhz: f64,
    /// Minimum path-loss floor in dB (applied to L - G_bs - G_terminal).
    pub psi_floor_db: f64,
    /// Cable loss in dB.
    pub cable_loss_db: f64,
    /// Building penetration loss in dB.
    pub penetration_loss_db: f64,
    /// Terminal antenna gain in dBi.
    pub terminal_gain_db: f64,
}

impl PathLossParams {
    pub fn from_config(cfg: &SimConfig) -> PathLossParams {
        let mut p = PathLossParams {
            height_m: cfg.enb_antenna_height,
            freq_mhz: cfg.carrier_freq,
            psi_floor_db: 0.0,
            cable_loss_db: cfg.cable_loss,
            penetration_loss_db: cfg.penetration_loss,
            terminal_gain_db: cfg.terminal_antenna_gain,
        };
        p.psi_floor_db = match cfg.psi_mode {
            PsiMode::Derived => {
                raw_path_loss_db(cfg.min_link_distance, &p)
                    - cfg.enb_antenna_gain_max
                    - cfg.terminal_antenna_gain
            }
            PsiMode::PaperValue => 178.96,
        };
        p
    }
}

/// Sector antenna pattern: parabolic attenuation with a back-lobe floor.
#[derive(Debug, Clone, Copy)]
pub struct AntennaPattern {
    pub g_max_db: f64,
    pub beamwidth_deg: f64,
    pub floor_attenuation_db: f64,
}

impl AntennaPattern {
    pub fn from_config(cfg: &SimConfig) -> AntennaPattern {
        AntennaPattern {
            g_max_db: cfg.enb_antenna_gain_max,
            beamwidth_deg: 65.0,
            floor_attenuation_db: 23.0,
        }
    }
}

fn raw_path_loss_db(r_m: f64, p: &PathLossParams) -> f64 {
    let r_km = r_m / 1000.0;
    if p.height_m == 15.0 && p.freq_mhz == 900.0 {
        // Reduced form of the general model at the default height/frequency.
        120.9 + 37.6 * r_km.log10()
    } else {
        40.0 * (1.0 - 4e-3 * p.height_m) * r_km.log10() - 18.0 * p.height_m.log10()
            + 21.0 * p.freq_mhz.log10()
            + 80.0
    }
}

/// Macro path loss in dB at distance `r_m` meters.
pub fn path_loss_db(r_m: f64, params: &PathLossParams) -> Result<f64, ChannelError> {
    if r_m <= 0.0 {
        return Err(ChannelError::NonPositiveDistance(r_m));
    }
    Ok(raw_path_loss_db(r_m, params))
}

/// Sector antenna gain in dBi at offset `theta_deg` from boresight.
pub fn antenna_gain_db(theta_deg: f64, pattern: &AntennaPattern) -> f64 {
    let att = (12.0 * (theta_deg / pattern.beamwidth_deg).powi(2))
        .min(pattern.floor_attenuation_db);
    pattern.g_max_db - att
}

/// Total large-scale attenuation (excluding shadowing):
/// `max(L - G_bs - G_terminal, psi) + cable + penetration`.
pub fn coupling_alpha_db(
    r_m: f64,
    theta_deg: f64,
    params: &PathLossParams,
    pattern: &AntennaPattern,
) -> Result<f64, ChannelError> {
    let l = path_loss_db(r_m, params)?;
    let g_bs = antenna_gain_db(theta_deg, pattern);
    let alpha = (l - g_bs - params.terminal_gain_db).max(params.psi_floor_db)
        + params.cable_loss_db
        + params.penetration_loss_db;
    Ok(alpha)
}

/// Pattern angle for a terminal at (dx, dy) from the site, for a sector
/// boresight azimuth. Horizontal plane: azimuth offset wrapped to
/// [-180, 180]. Vertical plane: elevation angle from the antenna height.
pub fn pattern_angle_deg(
    dx: f64,
    dy: f64,
    boresight_deg: f64,
    plane: PatternPlane,
    height_m: f64,
) -> f64 {
    match plane {
        PatternPlane::Horizontal => {
            let az = dy.atan2(dx).to_degrees();
            let mut off = az - boresight_deg;
            while off > 180.0 {
                off -= 360.0;
            }
            while off < -180.0 {
                off += 360.0;
            }
            off
        }
        PatternPlane::Vertical => {
            let r = (dx * dx + dy * dy).sqrt();
            height_m.atan2(r).to_degrees()
        }
    }
}

/// In-place Cholesky factorization; `mat` is row-major n x n and receives
/// the lower factor (upper triangle zeroed).
pub fn cholesky_lower(mat: &mut [f64], n: usize) -> Result<(), ChannelError> {
    assert_eq!(mat.len(), n * n);
    for j in 0..n {
        let mut d = mat[j * n + j];
        for k in 0..j {
            d -= mat[j * n + k] * mat[j * n + k];
        }
        if d <= 0.0 {
            return Err(ChannelError::NotPositiveDefinite);
        }
        let d = d.sqrt();
        mat[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = mat[i * n + j];
            let (row_i, row_j) = (&mat[i * n..i * n + j], &mat[j * n..j * n + j]);
            for k in 0..j {
                s -= row_i[k] * row_j[k];
            }
            mat[i * n + j] = s / d;
        }
        for i in 0..j {
            mat[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// Fill `out` with independent standard normals (Box-Muller; draws are
/// consumed in pairs so the count is deterministic).
pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        let (a, b) = normal_pair(rng);
        out[i] = a;
        if i + 1 < out.len() {
            out[i + 1] = b;
        }
        i += 2;
    }
}

fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0,1]
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    (r * th.cos(), r * th.sin())
}

/// Cholesky factor of the exponential correlation over a rectangular
/// grid; shared by all per-site shadowing fields in a run.
pub struct ShadowingGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub corr_distance: f64,
    chol: Vec<f64>,
}

pub const MAX_GRID_NODES: usize = 10_000;

impl ShadowingGrid {
    /// Build the grid over the rectangle [min_x, max_x] x [min_y, max_y]
    /// and factor its correlation matrix r(x) = exp(-x / corr_distance).
    pub fn build(
        min_x: f64,
        max_x: f64,
        min_y: f64,
        max_y: f64,
        spacing: f64,
        corr_distance: f64,
    ) -> Result<ShadowingGrid, ChannelError> {
        let nx = ((max_x - min_x) / spacing).ceil() as usize + 1;
        let ny = ((max_y - min_y) / spacing).ceil() as usize + 1;
        let n = nx * ny;
        if n > MAX_GRID_NODES {
            return Err(ChannelError::GridTooLarge {
                nodes: n,
                limit: MAX_GRID_NODES,
            });
        }
        let mut mat = vec![0.0; n * n];
        for a in 0..n {
            let (ax, ay) = ((a % nx) as f64, (a / nx) as f64);
            for b in 0..=a {
                let (bx, by) = ((b % nx) as f64, (b / nx) as f64);
                let d = spacing * ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
                let r = (-d / corr_distance).exp();
                mat[a * n + b] = r;
                mat[b * n + a] = r;
            }
        }
        // Jitter to keep the factorization stable.
        for i in 0..n {
            mat[i * n + i] += 1e-9;
        }
        cholesky_lower(&mut mat, n)?;
        Ok(ShadowingGrid {
            origin_x: min_x,
            origin_y: min_y,
            spacing,
            nx,
            ny,
            corr_distance,
            chol: mat,
        })
    }

    /// Draw one field realization: s = L a, scaled to `std_db`.
    pub fn realize(&self, std_db: f64, rng: &mut ChaCha8Rng) -> ShadowingField {
        let n = self.nx * self.ny;
        let mut a = vec![0.0; n];
        fill_standard_normal(rng, &mut a);
        let mut values = vec![0.0; n];
        for (i, v) in values.iter_mut().enumerate() {
            let mut s = 0.0;
            let row = &self.chol[i * n..i * n + i + 1];
            for (k, l) in row.iter().enumerate() {
                s += l * a[k];
            }
            *v = s;
        }
        ShadowingField {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            spacing: self.spacing,
            nx: self.nx,
            ny: self.ny,
            corr_distance: self.corr_distance,
            std_db,
            values,
        }
    }
}

/// One correlated shadowing field (per site). Node values are unit
/// variance; lookup interpolates bilinearly and renormalizes so the
/// marginal std stays `std_db` at every point.
#[derive(Debug, Clone)]
pub struct ShadowingField {
    pub origin_x: f64,
    pub origin_y: f64,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub corr_distance: f64,
    pub std_db: f64,
    values: Vec<f64>,
}

impl ShadowingField {
    /// A zero field (shadow_std = 0 degenerates to 0 dB everywhere).
    pub fn zero() -> ShadowingField {
        ShadowingField {
            origin_x: 0.0,
            origin_y: 0.0,
            spacing: 1.0,
            nx: 1,
            ny: 1,
            corr_distance: 1.0,
            std_db: 0.0,
            values: vec![0.0],
        }
    }

    pub fn sample_db(&self, x: f64, y: f64) -> f64 {
        if self.std_db == 0.0 {
            return 0.0;
        }
        let fx = ((x - self.origin_x) / self.spacing).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.origin_y) / self.spacing).clamp(0.0, (self.ny - 1) as f64);
        let ix = (fx.floor() as usize).min(self.nx.saturating_sub(2));
        let iy = (fy.floor() as usize).min(self.ny.saturating_sub(2));
        if self.nx == 1 || self.ny == 1 {
            return self.std_db * self.values[iy * self.nx + ix];
        }
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let w = [
            (1.0 - tx) * (1.0 - ty),
            tx * (1.0 - ty),
            (1.0 - tx) * ty,
            tx * ty,
        ];
        let idx = [
            iy * self.nx + ix,
            iy * self.nx + ix + 1,
            (iy + 1) * self.nx + ix,
            (iy + 1) * self.nx + ix + 1,
        ];
        let raw: f64 = w
            .iter()
            .zip(&idx)
            .map(|(wi, &i)| wi * self.values[i])
            .sum();
        // Variance of the interpolated value from the 2x2 node covariance;
        // dividing by it keeps the marginal std exact off-grid.
        let pos: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        let mut var = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let d = self.spacing
                    * ((pos[a].0 - pos[b].0).powi(2) + (pos[a].1 - pos[b].1).powi(2)).sqrt();
                var += w[a] * w[b] * (-d / self.corr_distance).exp();
            }
        }
        self.std_db * raw / var.sqrt()
    }
}

/// First-order autoregressive block-Rayleigh fading for a single link.
/// Constant within a TTI; unit mean power.
#[derive(Debug, Clone)]
pub struct FadingProcess {
    model: FadingModel,
    rho: f64,
    re: f64,
    im: f64,
    last_tti: Option<u64>,
    rng: ChaCha8Rng,
}

impl FadingProcess {
    pub fn new(model: FadingModel, rho: f64, rng: ChaCha8Rng) -> FadingProcess {
        FadingProcess {
            model,
            rho,
            re: 0.0,
            im: 0.0,
            last_tti: None,
            rng,
        }
    }

    /// Linear power gain |h(t, n)|^2. The default model is flat over the
    /// 180 kHz carrier, so the subcarrier index does not change the value.
    pub fn gain(&mut self, tti: u64, _subcarrier: usize) -> f64 {
        match self.model {
            FadingModel::None => 1.0,
            FadingModel::BlockRayleigh => {
                self.advance_to(tti);
                self.re * self.re + self.im * self.im
            }
        }
    }

    /// Complex amplitude components (for correlation diagnostics).
    pub fn amplitude(&mut self, tti: u64) -> (f64, f64) {
        if self.model == FadingModel::None {
            return (1.0, 0.0);
        }
        self.advance_to(tti);
        (self.re, self.im)
    }

    fn advance_to(&mut self, tti: u64) {
        match self.last_tti {
            Some(last) if last == tti => {}
            Some(last) => {
                debug_assert!(tti > last, "fading queried backwards in time");
                let delta = (tti - last) as i32;
                let decay = self.rho.powi(delta);
                let innov = (1.0 - decay * decay).max(0.0).sqrt();
                let (a, b) = normal_pair(&mut self.rng);
                self.re = decay * self.re + innov * a / 2f64.sqrt();
                self.im = decay * self.im + innov * b / 2f64.sqrt();
                self.last_tti = Some(tti);
            }
            None => {
                let (a, b) = normal_pair(&mut self.rng);
                self.re = a / 2f64.sqrt();
                self.im = b / 2f64.sqrt();
                self.last_tti = Some(tti);
            }
        }
    }
}
