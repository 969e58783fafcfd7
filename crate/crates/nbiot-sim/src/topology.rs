//! Three-layer hexagonal site layout, sectorization, pixel map of the
//! region of interest, and terminal placement.
//!
//! The layout is the classic 19-site grid: 1 inner site, 6 in the middle
//! ring and 12 in the outer ring, every nearest-neighbor pair separated
//! by exactly the inter-site distance. Each site carries 3 sectors with
//! boresights at 0/120/240 degrees.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::SimConfig;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("ROI has {pixels} pixels but {requested} terminals were requested")]
    RoiTooSmall { pixels: usize, requested: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Inner,
    Middle,
    Outer,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Inner => "inner",
            Layer::Middle => "middle",
            Layer::Outer => "outer",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Site {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub layer: Layer,
}

#[derive(Debug, Clone, Copy)]
pub struct Sector {
    pub site_id: usize,
    pub sector_index: usize,
    /// Boresight azimuth in degrees (0, 120 or 240).
    pub boresight_azimuth: f64,
}

impl Sector {
    /// Global index of this sector across the layout.
    pub fn global_index(&self, sectors_per_site: usize) -> usize {
        self.site_id * sectors_per_site + self.sector_index
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Terminal {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    /// Global sector index of the serving sector, set by `attach_terminals`.
    pub serving_sector: Option<usize>,
}

/// Pixel map over the ROI bounding box; terminals live on masked pixel
/// centers.
#[derive(Debug, Clone)]
pub struct PixelMap {
    pub origin_x: f64,
    pub origin_y: f64,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    mask: Vec<bool>,
}

impl PixelMap {
    pub fn pixel_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin_x + (ix as f64 + 0.5) * self.resolution,
            self.origin_y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn in_roi(&self, ix: usize, iy: usize) -> bool {
        self.mask[iy * self.width + ix]
    }

    /// Pixel centers inside the ROI, row-major order.
    pub fn roi_pixels(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for iy in 0..self.height {
            for ix in 0..self.width {
                if self.in_roi(ix, iy) {
                    out.push(self.pixel_center(ix, iy));
                }
            }
        }
        out
    }

    pub fn roi_pixel_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Build the site grid and its sectors. Deterministic, no randomness.
pub fn build_layout(cfg: &SimConfig) -> (Vec<Site>, Vec<Sector>) {
    let d = cfg.inter_site_distance;
    let mut sites = vec![Site {
        id: 0,
        x: 0.0,
        y: 0.0,
        layer: Layer::Inner,
    }];
    if cfg.num_sites > 1 {
        for a in 0..6 {
            let th = (60.0 * a as f64).to_radians();
            sites.push(Site {
                id: sites.len(),
                x: d * th.cos(),
                y: d * th.sin(),
                layer: Layer::Middle,
            });
        }
        for a in 0..6 {
            let th = (60.0 * a as f64).to_radians();
            sites.push(Site {
                id: sites.len(),
                x: 2.0 * d * th.cos(),
                y: 2.0 * d * th.sin(),
                layer: Layer::Outer,
            });
            let th2 = (60.0 * a as f64 + 30.0).to_radians();
            let r2 = d * 3f64.sqrt();
            sites.push(Site {
                id: sites.len(),
                x: r2 * th2.cos(),
                y: r2 * th2.sin(),
                layer: Layer::Outer,
            });
        }
    }
    let mut sectors = Vec::with_capacity(sites.len() * cfg.sectors_per_site);
    for site in &sites {
        for s in 0..cfg.sectors_per_site {
            sectors.push(Sector {
                site_id: site.id,
                sector_index: s,
                boresight_azimuth: 360.0 * s as f64 / cfg.sectors_per_site as f64,
            });
        }
    }
    (sites, sectors)
}

/// Point-in-hexagon test for the coverage hexagon of a site: apothem
/// d/2 facing each of the 6 neighbor directions.
fn in_site_hex(px: f64, py: f64, site: &Site, isd: f64) -> bool {
    let apothem = isd / 2.0;
    for a in 0..6 {
        let th = (60.0 * a as f64).to_radians();
        if (px - site.x) * th.cos() + (py - site.y) * th.sin() > apothem + 1e-9 {
            return false;
        }
    }
    true
}

/// Build the pixel map of the ROI. By default the ROI is the coverage
/// hexagon of the center site; with `roi_all_cells` it widens to the
/// union of all 19 coverage hexagons. Pixels closer than
/// `min_link_distance` to their covering site are masked out.
pub fn build_pixel_map(cfg: &SimConfig, sites: &[Site]) -> PixelMap {
    let isd = cfg.inter_site_distance;
    let hex_circumradius = isd / 3f64.sqrt();
    let covered: &[Site] = if cfg.roi_all_cells { sites } else { &sites[..1] };
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for s in covered {
        min_x = min_x.min(s.x - hex_circumradius);
        max_x = max_x.max(s.x + hex_circumradius);
        min_y = min_y.min(s.y - hex_circumradius);
        max_y = max_y.max(s.y + hex_circumradius);
    }
    let res = cfg.pixel_resolution;
    let width = ((max_x - min_x) / res).ceil() as usize;
    let height = ((max_y - min_y) / res).ceil() as usize;
    let mut mask = vec![false; width * height];
    for iy in 0..height {
        for ix in 0..width {
            let px = min_x + (ix as f64 + 0.5) * res;
            let py = min_y + (iy as f64 + 0.5) * res;
            for site in covered {
                if in_site_hex(px, py, site, isd) {
                    let dist = ((px - site.x).powi(2) + (py - site.y).powi(2)).sqrt();
                    if dist >= cfg.min_link_distance {
                        mask[iy * width + ix] = true;
                    }
                    break;
                }
            }
        }
    }
    PixelMap {
        origin_x: min_x,
        origin_y: min_y,
        resolution: res,
        width,
        height,
        mask,
    }
}

/// Place terminals uniformly over ROI pixel centers, without replacement.
pub fn drop_terminals(
    cfg: &SimConfig,
    map: &PixelMap,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Terminal>, TopologyError> {
    let mut pixels = map.roi_pixels();
    if pixels.len() < cfg.num_terminals {
        return Err(TopologyError::RoiTooSmall {
            pixels: pixels.len(),
            requested: cfg.num_terminals,
        });
    }
    // Partial Fisher-Yates: the first num_terminals entries end up a
    // uniform sample without replacement.
    let n = pixels.len();
    let mut terminals = Vec::with_capacity(cfg.num_terminals);
    for i in 0..cfg.num_terminals {
        let j = rng.gen_range(i..n);
        pixels.swap(i, j);
        terminals.push(Terminal {
            id: i,
            x: pixels[i].0,
            y: pixels[i].1,
            serving_sector: None,
        });
    }
    Ok(terminals)
}

/// Attach every terminal to the sector with the strongest large-scale
/// received power. `rx_gain_db(sector_global_index, terminal)` must return
/// antenna-pattern gain minus path loss minus shadowing; ties break toward
/// the lowest global sector index.
pub fn attach_terminals<F>(terminals: &mut [Terminal], num_sectors: usize, rx_gain_db: F)
where
    F: Fn(usize, &Terminal) -> f64,
{
    for t in terminals.iter_mut() {
        let mut best = 0usize;
        let mut best_gain = f64::NEG_INFINITY;
        for s in 0..num_sectors {
            let g = rx_gain_db(s, t);
            if g > best_gain {
                best_gain = g;
                best = s;
            }
        }
        t.serving_sector = Some(best);
    }
}

/// CSV dump of the site layout: `site_id,x_m,y_m,layer`.
pub fn sites_csv(sites: &[Site]) -> String {
    let mut out = String::from("site_id,x_m,y_m,layer\n");
    for s in sites {
        out.push_str(&format!(
            "{},{:.3},{:.3},{}\n",
            s.id,
            s.x,
            s.y,
            s.layer.as_str()
        ));
    }
    out
}

/// CSV dump of terminal placements:
/// `terminal_id,x_m,y_m,serving_site,serving_sector`.
pub fn terminals_csv(terminals: &[Terminal], sectors_per_site: usize) -> String {
    let mut out = String::from("terminal_id,x_m,y_m,serving_site,serving_sector\n");
    for t in terminals {
        let (site, sec) = match t.serving_sector {
            Some(g) => (
                (g / sectors_per_site) as i64,
                (g % sectors_per_site) as i64,
            ),
            None => (-1, -1),
        };
        out.push_str(&format!(
            "{},{:.3},{:.3},{},{}\n",
            t.id, t.x, t.y, site, sec
        ));
    }
    out
}
