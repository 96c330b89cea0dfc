//! Deployment geometry: hexagonal grids with wraparound, uniform-random
//! deployments, user drops, and the master simulation configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub const SECTORS_PER_SITE: usize = 3;
pub const SECTOR_AZIMUTHS_DEG: [f64; 3] = [30.0, 150.0, 270.0];
pub const GUE_HEIGHT_M: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Environment {
    UMa,
    UMi,
}

impl Environment {
    pub fn bs_height(self) -> f64 {
        match self {
            Environment::UMa => 25.0,
            Environment::UMi => 10.0,
        }
    }
}

/// 3D point; `z` is height above ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

/// One cell: a sector of a site.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub site: usize,
    pub sector: usize,
    /// Boresight azimuth, degrees counterclockwise from +x.
    pub azimuth_deg: f64,
    pub position: Position,
}

#[derive(Debug, Clone)]
pub struct NetworkLayout {
    pub sites: Vec<[f64; 2]>,
    pub bs_height: f64,
    pub isd: f64,
    pub wraparound: bool,
    /// Lattice translations mapping the network onto its 6 wraparound images
    /// (empty when wraparound is off).
    translations: Vec<[f64; 2]>,
    /// Sectorized (three cells per site) or omni (one cell per site).
    pub sectorized: bool,
    /// Half-extent of the square region for random deployments.
    region_half: f64,
}

/// Hex lattice basis vectors for a given ISD.
fn hex_basis(isd: f64) -> ([f64; 2], [f64; 2]) {
    ([isd, 0.0], [isd / 2.0, isd * 3f64.sqrt() / 2.0])
}

fn lattice_point(isd: f64, i: i32, j: i32) -> [f64; 2] {
    let (a, b) = hex_basis(isd);
    [
        i as f64 * a[0] + j as f64 * b[0],
        i as f64 * a[1] + j as f64 * b[1],
    ]
}

/// 19-site hexagonal grid centered at the origin, with the standard 7-image
/// wraparound translation set (cluster vector (3,2), i.e. |t| = isd*sqrt(19)).
pub fn build_hex_layout(isd: f64, env: Environment) -> Result<NetworkLayout, SimError> {
    if isd <= 0.0 {
        return Err(SimError::Config(format!("isd must be positive, got {isd}")));
    }
    let mut sites = Vec::with_capacity(19);
    for i in -2i32..=2 {
        for j in -2i32..=2 {
            if i.abs() <= 2 && j.abs() <= 2 && (i + j).abs() <= 2 {
                sites.push(lattice_point(isd, i, j));
            }
        }
    }
    debug_assert_eq!(sites.len(), 19);
    // (3,2) and its five 60-degree rotations (i,j) -> (-j, i+j)
    let mut translations = Vec::with_capacity(6);
    let (mut i, mut j) = (3i32, 2i32);
    for _ in 0..6 {
        translations.push(lattice_point(isd, i, j));
        let (ni, nj) = (-j, i + j);
        i = ni;
        j = nj;
    }
    Ok(NetworkLayout {
        sites,
        bs_height: env.bs_height(),
        isd,
        wraparound: true,
        translations,
        sectorized: true,
        region_half: 0.0,
    })
}

/// Uniform-random deployment: a binomial point process of `n_sites` BSs over
/// a square whose area matches the density implied by the ISD,
/// density = 1 / (isd^2 * sqrt(3)/2).
pub fn build_random_layout(
    isd: f64,
    env: Environment,
    n_sites: usize,
    sectorized: bool,
    seed: u64,
) -> Result<NetworkLayout, SimError> {
    if isd <= 0.0 {
        return Err(SimError::Config(format!("isd must be positive, got {isd}")));
    }
    if n_sites == 0 {
        return Err(SimError::Config("n_sites must be >= 1".into()));
    }
    let density = 1.0 / (isd * isd * 3f64.sqrt() / 2.0);
    let area = n_sites as f64 / density;
    let half = area.sqrt() / 2.0;
    let mut rng = derive_rng(seed, 0xB5);
    let sites = (0..n_sites)
        .map(|_| {
            [
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
            ]
        })
        .collect();
    Ok(NetworkLayout {
        sites,
        bs_height: env.bs_height(),
        isd,
        wraparound: false,
        translations: Vec::new(),
        sectorized,
        region_half: half,
    })
}

impl NetworkLayout {
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for (s, &site) in self.sites.iter().enumerate() {
            if self.sectorized {
                for (k, &az) in SECTOR_AZIMUTHS_DEG.iter().enumerate() {
                    cells.push(Cell {
                        site: s,
                        sector: k,
                        azimuth_deg: az,
                        position: Position::new(site[0], site[1], self.bs_height),
                    });
                }
            } else {
                cells.push(Cell {
                    site: s,
                    sector: 0,
                    azimuth_deg: 0.0,
                    position: Position::new(site[0], site[1], self.bs_height),
                });
            }
        }
        cells
    }

    pub fn n_cells(&self) -> usize {
        self.sites.len() * if self.sectorized { SECTORS_PER_SITE } else { 1 }
    }

    /// Region area in m^2 over which users are placed.
    pub fn region_area(&self) -> f64 {
        if self.wraparound {
            // parallelogram spanned by two adjacent cluster translations
            let t1 = self.translations[0];
            let t2 = self.translations[1];
            (t1[0] * t2[1] - t1[1] * t2[0]).abs()
        } else {
            (2.0 * self.region_half).powi(2)
        }
    }

    /// Uniform sample over the drop region (the wraparound fundamental
    /// domain, or the deployment square).
    pub fn sample_position(&self, rng: &mut impl Rng) -> [f64; 2] {
        if self.wraparound {
            let t1 = self.translations[0];
            let t2 = self.translations[1];
            let s: f64 = rng.gen();
            let t: f64 = rng.gen();
            [
                (s - 0.5) * t1[0] + (t - 0.5) * t2[0],
                (s - 0.5) * t1[1] + (t - 0.5) * t2[1],
            ]
        } else {
            [
                rng.gen_range(-self.region_half..self.region_half),
                rng.gen_range(-self.region_half..self.region_half),
            ]
        }
    }

    /// Minimum-image distance and bearing between two points.
    /// Returns (d2d m, d3d m, bearing degrees from a toward b's image).
    pub fn wrap_distance(&self, a: Position, b: Position) -> (f64, f64, f64) {
        let mut best_d2 = f64::INFINITY;
        let mut best = [b.x - a.x, b.y - a.y];
        let zero = [0.0, 0.0];
        let images = std::iter::once(&zero).chain(self.translations.iter());
        for t in images {
            if !self.wraparound && (t[0] != 0.0 || t[1] != 0.0) {
                continue;
            }
            let dx = b.x + t[0] - a.x;
            let dy = b.y + t[1] - a.y;
            let d2 = dx * dx + dy * dy;
            if d2 < best_d2 {
                best_d2 = d2;
                best = [dx, dy];
            }
        }
        let d2d = best_d2.sqrt();
        let dz = b.z - a.z;
        let d3d = (d2d * d2d + dz * dz).sqrt();
        let bearing = best[1].atan2(best[0]).to_degrees();
        (d2d, d3d, bearing)
    }
}

/// Users placed for one Monte Carlo drop.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDrop {
    pub gues: Vec<Position>,
    pub uavs: Vec<Position>,
    pub seed: u64,
}

/// How many users to place: per-sector counts, or densities per km^2.
#[derive(Debug, Clone, Copy)]
pub enum DensitySpec {
    PerSector { gues: usize, uavs: usize },
    PerKm2 { gues: f64, uavs: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct HeightSpec {
    pub gue_height: f64,
    pub uav_height_min: f64,
    pub uav_height_max: f64,
}

impl Default for HeightSpec {
    fn default() -> Self {
        Self {
            gue_height: GUE_HEIGHT_M,
            uav_height_min: 25.0,
            uav_height_max: 150.0,
        }
    }
}

/// Drops users uniformly over the layout region. Deterministic given seed.
pub fn drop_users(
    layout: &NetworkLayout,
    spec: DensitySpec,
    heights: HeightSpec,
    seed: u64,
) -> Result<UserDrop, SimError> {
    if layout.sites.is_empty() {
        return Err(SimError::Config("empty layout".into()));
    }
    let (n_gue, n_uav) = match spec {
        DensitySpec::PerSector { gues, uavs } => {
            let sectors = layout.n_cells();
            (gues * sectors, uavs * sectors)
        }
        DensitySpec::PerKm2 { gues, uavs } => {
            if gues < 0.0 || uavs < 0.0 {
                return Err(SimError::Config("densities must be >= 0".into()));
            }
            let area_km2 = layout.region_area() / 1e6;
            (
                (gues * area_km2).round() as usize,
                (uavs * area_km2).round() as usize,
            )
        }
    };
    let mut rng = derive_rng(seed, 0xD0);
    let gues = (0..n_gue)
        .map(|_| {
            let p = layout.sample_position(&mut rng);
            Position::new(p[0], p[1], heights.gue_height)
        })
        .collect();
    let uavs = (0..n_uav)
        .map(|_| {
            let p = layout.sample_position(&mut rng);
            let h = if heights.uav_height_max > heights.uav_height_min {
                rng.gen_range(heights.uav_height_min..heights.uav_height_max)
            } else {
                heights.uav_height_min
            };
            Position::new(p[0], p[1], h)
        })
        .collect();
    Ok(UserDrop { gues, uavs, seed })
}

/// Independent per-purpose RNG stream derived from a seed. Streams with
/// different salts never collide.
pub fn derive_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    // splitmix64 mixing keeps nearby (seed, salt) pairs decorrelated
    let mut z = seed ^ salt.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Seed for drop number `drop_index` under a master seed.
pub fn drop_seed(master_seed: u64, drop_index: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(drop_index.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0xA5A5A5A5);
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51AFD7ED558CCD);
    z ^ (z >> 33)
}
