//! UAV-to-UAV sidelink coexistence with the ground uplink: underlay and
//! overlay spectrum sharing with frequency hopping, coverage and rate
//! statistics, and the mmWave double-wobbling link study.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{fspl_db, pathloss_db, sample_large_scale, shadowing_sigma_db, LinkKind};
use crate::error::SimError;
use crate::channel::AntennaConfig;
use crate::linklevel::{
    assemble_sinr, bs_user_coupling, db_to_lin, noise_power_dbm, rate_bps, LinkDirection,
    PRB_BANDWIDTH_HZ,
};
use crate::powerctrl::{tx_power_per_prb_dbm, PowerControlParams};
use crate::scenario::{
    build_hex_layout, derive_rng, drop_seed, Cell, Environment, NetworkLayout, Position,
    GUE_HEIGHT_M,
};
use crate::stats::CdfSummary;

/// One sidelink: a transmitter and its receiver, offset by a
/// truncated-Rayleigh radius at a uniform bearing, sharing one height.
#[derive(Debug, Clone, Copy)]
pub struct U2uPair {
    pub tx: Position,
    pub rx: Position,
    pub link_distance_m: f64,
}

/// Truncated-Rayleigh radius by inverse-CDF sampling. `r_mean` parameterizes
/// the untruncated Rayleigh mean (sigma = r_mean * sqrt(2/pi)); the draw is
/// conditioned on r <= r_trunc.
pub fn truncated_rayleigh(r_mean: f64, r_trunc: f64, rng: &mut impl Rng) -> Result<f64, SimError> {
    if r_mean <= 0.0 || r_trunc <= 0.0 {
        return Err(SimError::Config(format!(
            "truncated_rayleigh needs positive r_mean, r_trunc (got {r_mean}, {r_trunc})"
        )));
    }
    let sigma = r_mean * (2.0 / std::f64::consts::PI).sqrt();
    let cap = 1.0 - (-r_trunc * r_trunc / (2.0 * sigma * sigma)).exp();
    let u: f64 = rng.gen();
    Ok(sigma * (-2.0 * (1.0 - u * cap).ln()).sqrt())
}

/// Poisson-count placement of sidelink pairs over the drop region.
pub fn place_pairs(
    layout: &NetworkLayout,
    density_per_km2: f64,
    r_mean: f64,
    r_trunc: f64,
    height: f64,
    rng: &mut impl Rng,
) -> Result<Vec<U2uPair>, SimError> {
    if density_per_km2 < 0.0 {
        return Err(SimError::Config("pair density must be >= 0".into()));
    }
    if r_trunc <= 0.0 {
        return Err(SimError::Config("r_trunc must be > 0".into()));
    }
    if density_per_km2 == 0.0 {
        return Ok(Vec::new());
    }
    let mean = density_per_km2 * layout.region_area() / 1e6;
    let n = Poisson::new(mean)
        .map_err(|e| SimError::Config(format!("invalid Poisson mean: {e}")))?
        .sample(rng) as usize;
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let [x, y] = layout.sample_position(rng);
        let r = truncated_rayleigh(r_mean, r_trunc, rng)?;
        let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
        pairs.push(U2uPair {
            tx: Position::new(x, y, height),
            rx: Position::new(x + r * bearing.cos(), y + r * bearing.sin(), height),
            link_distance_m: r,
        });
    }
    Ok(pairs)
}

/// Spectrum split between the ground uplink and the sidelinks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SharingMode {
    /// Sidelinks reuse a fraction eta_u of the ground spectrum.
    Underlay { eta_u: f64 },
    /// The last `u2u_prbs` PRBs are dedicated to sidelinks.
    Overlay { u2u_prbs: usize },
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SharingConfig {
    pub mode: SharingMode,
    pub hopping: bool,
    pub total_prbs: usize,
}

impl SharingConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.total_prbs == 0 {
            return Err(SimError::Config("total_prbs must be >= 1".into()));
        }
        match self.mode {
            SharingMode::Underlay { eta_u } => {
                if !(0.0..=1.0).contains(&eta_u) {
                    return Err(SimError::Config(format!("eta_u {eta_u} out of [0,1]")));
                }
            }
            SharingMode::Overlay { u2u_prbs } => {
                if u2u_prbs > self.total_prbs {
                    return Err(SimError::Config("overlay slice exceeds the band".into()));
                }
            }
        }
        Ok(())
    }
}

/// Per-pair PRB sets plus the PRBs the ground uplink occupies.
#[derive(Debug, Clone)]
pub struct PrbPlan {
    pub pair_sets: Vec<Vec<usize>>,
    pub gue_prbs: Vec<usize>,
}

/// Draws each pair's PRB occupancy. Underlay with hopping samples
/// floor(eta_u * total) distinct PRBs per pair; overlay hands every pair the
/// dedicated slice, disjoint from the ground allocation.
pub fn assign_prbs(
    sharing: &SharingConfig,
    n_pairs: usize,
    rng: &mut impl Rng,
) -> Result<PrbPlan, SimError> {
    sharing.validate()?;
    let total = sharing.total_prbs;
    match sharing.mode {
        SharingMode::Underlay { eta_u } => {
            let n_uav = (eta_u * total as f64).floor() as usize;
            let sets = (0..n_pairs)
                .map(|_| {
                    if sharing.hopping {
                        // partial Fisher-Yates: first n_uav of a shuffle
                        let mut idx: Vec<usize> = (0..total).collect();
                        for i in 0..n_uav.min(total.saturating_sub(1)) {
                            let j = rng.gen_range(i..total);
                            idx.swap(i, j);
                        }
                        let mut s = idx[..n_uav].to_vec();
                        s.sort_unstable();
                        s
                    } else {
                        (0..n_uav).collect()
                    }
                })
                .collect();
            Ok(PrbPlan {
                pair_sets: sets,
                gue_prbs: (0..total).collect(),
            })
        }
        SharingMode::Overlay { u2u_prbs } => {
            let split = total - u2u_prbs;
            let slice: Vec<usize> = (split..total).collect();
            Ok(PrbPlan {
                pair_sets: vec![slice; n_pairs],
                gue_prbs: (0..split).collect(),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct U2uStudyConfig {
    pub env: Environment,
    pub isd_m: f64,
    pub fc_hz: f64,
    pub sharing: SharingConfig,
    pub pair_density_per_km2: f64,
    pub r_mean_m: f64,
    pub r_trunc_m: f64,
    pub uav_height_m: f64,
    pub p_max_dbm: f64,
    pub p_ref_dbm: f64,
    pub epsilon_uav: f64,
    pub epsilon_gue: f64,
    pub bs_noise_figure_db: f64,
    pub ue_noise_figure_db: f64,
    pub coverage_threshold_db: f64,
    pub se_cap_bps_hz: f64,
    pub n_drops: usize,
    pub seed: u64,
}

impl U2uStudyConfig {
    /// Macro deployment of the coexistence study: 2 GHz, 10 MHz, one ground
    /// user scheduled per cell and PRB, one sidelink pair per km^2.
    pub fn uma_default(sharing: SharingConfig) -> Self {
        Self {
            env: Environment::UMa,
            isd_m: 480.0,
            fc_hz: 2.0e9,
            sharing,
            pair_density_per_km2: 1.0,
            r_mean_m: 100.0,
            r_trunc_m: 300.0,
            uav_height_m: 100.0,
            p_max_dbm: 24.0,
            p_ref_dbm: -58.0,
            epsilon_uav: 0.6,
            epsilon_gue: 0.6,
            bs_noise_figure_db: 5.0,
            ue_noise_figure_db: 9.0,
            coverage_threshold_db: 0.0,
            se_cap_bps_hz: 4.8,
            n_drops: 200,
            seed: 1,
        }
    }

    /// Aggressive underlay across the whole band, with hopping.
    pub fn full_underlay() -> SharingConfig {
        SharingConfig {
            mode: SharingMode::Underlay { eta_u: 1.0 },
            hopping: true,
            total_prbs: 50,
        }
    }

    /// Overlay with a 1 MHz sidelink slice out of 10 MHz.
    pub fn overlay_1mhz() -> SharingConfig {
        SharingConfig {
            mode: SharingMode::Overlay { u2u_prbs: 5 },
            hopping: false,
            total_prbs: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoexResult {
    pub gue_sinr_db: CdfSummary,
    pub u2u_sinr_db: CdfSummary,
    pub gue_rate_bps: CdfSummary,
    pub u2u_rate_bps: CdfSummary,
}

impl CoexResult {
    pub fn gue_coverage(&self, threshold_db: f64) -> f64 {
        self.gue_sinr_db.fraction_above(threshold_db)
    }

    pub fn u2u_coverage(&self, threshold_db: f64) -> f64 {
        self.u2u_sinr_db.fraction_above(threshold_db)
    }
}

const STREAM_GUE: u64 = 0x61;
const STREAM_PAIR: u64 = 0x62;
const STREAM_PLAN: u64 = 0x63;
const STREAM_LINK: u64 = 0x64;

fn stream_rng(dseed: u64, stream: u64, a: u64, b: u64) -> rand_chacha::ChaCha8Rng {
    derive_rng(
        dseed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        ((a + 1) << 32) | b,
    )
}

/// Large-scale coupling loss (pathloss + shadowing, 0 dBi ends) in dB.
fn coupling_loss(
    layout: &NetworkLayout,
    from: Position,
    to: Position,
    kind: LinkKind,
    h_ut: f64,
    fc_hz: f64,
    env: Environment,
    rng: &mut impl Rng,
) -> Result<f64, SimError> {
    let (d2d, d3d, _) = layout.wrap_distance(from, to);
    if kind == LinkKind::UavUav {
        // sidelinks fly in near-certain LoS at these heights; a rare NLoS
        // draw at 50 m would be compensated by the pair's power control,
        // an artifact that drowns out the real height trends
        let pl = pathloss_db(kind, d3d.max(1.0), h_ut, fc_hz, true, env)?;
        let sigma = shadowing_sigma_db(kind, h_ut, true, env);
        let sh: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
        return Ok(pl + sh);
    }
    let (_, pl, sh) = sample_large_scale(kind, d2d, d3d.max(1.0), h_ut, fc_hz, env, rng)?;
    Ok(pl + sh)
}

struct DropSamples {
    gue_sinr_db: Vec<f64>,
    u2u_sinr_db: Vec<f64>,
    gue_rate_bps: Vec<f64>,
    u2u_rate_bps: Vec<f64>,
}

fn eval_u2u_drop(
    cfg: &U2uStudyConfig,
    layout: &NetworkLayout,
    cells: &[Cell],
    dseed: u64,
) -> Result<DropSamples, SimError> {
    cfg.sharing.validate()?;
    let n_cells = cells.len();

    // one candidate ground user per cell; each associates with its
    // strongest sector (downtilted beam included) and at most one transmits
    // per cell on the studied PRB
    let ant = AntennaConfig::sector_8v();
    let mut grng = stream_rng(dseed, STREAM_GUE, 0, 0);
    let gues: Vec<Position> = (0..n_cells)
        .map(|_| {
            let [x, y] = layout.sample_position(&mut grng);
            Position::new(x, y, GUE_HEIGHT_M)
        })
        .collect();
    // (large-scale loss, BS beam gain) per [gue][cell]
    let mut gue_link = vec![vec![(0.0, 0.0); n_cells]; n_cells];
    for (g, &pos) in gues.iter().enumerate() {
        for c in 0..n_cells {
            let mut rng = stream_rng(dseed, STREAM_LINK, c as u64, g as u64);
            let cp = bs_user_coupling(
                layout,
                &cells[c],
                pos,
                LinkKind::BsGue,
                cfg.fc_hz,
                cfg.env,
                &mut rng,
            )?;
            gue_link[g][c] = (cp.xi_db(), cp.fixed_beam_gain_dbi(&ant));
        }
    }
    let mut tx_of_cell: Vec<Option<usize>> = vec![None; n_cells];
    for g in 0..n_cells {
        let best = (0..n_cells)
            .max_by(|&a, &b| {
                let ra = gue_link[g][a].1 - gue_link[g][a].0;
                let rb = gue_link[g][b].1 - gue_link[g][b].0;
                ra.partial_cmp(&rb).unwrap()
            })
            .unwrap();
        if tx_of_cell[best].is_none() {
            tx_of_cell[best] = Some(g);
        }
    }
    let tx_gues: Vec<(usize, usize)> = tx_of_cell
        .iter()
        .enumerate()
        .filter_map(|(c, &g)| g.map(|g| (g, c)))
        .collect();
    let pc_gue = PowerControlParams::new(cfg.p_max_dbm, cfg.p_ref_dbm, cfg.epsilon_gue, 1)?;
    let gue_power_dbm: Vec<f64> = tx_gues
        .iter()
        .map(|&(g, c)| tx_power_per_prb_dbm(&pc_gue, gue_link[g][c].0))
        .collect();

    // sidelink pairs, their PRB sets, and their transmit powers
    let mut prng = stream_rng(dseed, STREAM_PAIR, 0, 0);
    let pairs = place_pairs(
        layout,
        cfg.pair_density_per_km2,
        cfg.r_mean_m,
        cfg.r_trunc_m,
        cfg.uav_height_m,
        &mut prng,
    )?;
    let mut plan_rng = stream_rng(dseed, STREAM_PLAN, 0, 0);
    let plan = assign_prbs(&cfg.sharing, pairs.len(), &mut plan_rng)?;
    if let SharingMode::Overlay { .. } = cfg.sharing.mode {
        for s in &plan.pair_sets {
            debug_assert!(s.iter().all(|p| !plan.gue_prbs.contains(p)));
        }
    }
    let pair_loss: Vec<f64> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = stream_rng(dseed, STREAM_LINK, 0x1000 + i as u64, 0x1000 + i as u64);
            coupling_loss(
                layout,
                p.tx,
                p.rx,
                LinkKind::UavUav,
                cfg.uav_height_m,
                cfg.fc_hz,
                cfg.env,
                &mut rng,
            )
        })
        .collect::<Result<_, _>>()?;
    let pair_power_dbm: Vec<f64> = pairs
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let n_uav = plan.pair_sets[i].len().max(1);
            let pc = PowerControlParams::new(cfg.p_max_dbm, cfg.p_ref_dbm, cfg.epsilon_uav, n_uav)
                .expect("validated above");
            tx_power_per_prb_dbm(&pc, pair_loss[i])
        })
        .collect();

    // cross-tier couplings: (large-scale loss, BS beam gain) per [pair][cell]
    let mut uav_to_bs = vec![vec![(0.0, 0.0); n_cells]; pairs.len()];
    for (i, p) in pairs.iter().enumerate() {
        for c in 0..n_cells {
            let mut rng = stream_rng(dseed, STREAM_LINK, c as u64, 0x1000 + i as u64);
            let cp = bs_user_coupling(
                layout,
                &cells[c],
                p.tx,
                LinkKind::BsUav,
                cfg.fc_hz,
                cfg.env,
                &mut rng,
            )?;
            uav_to_bs[i][c] = (cp.xi_db(), cp.fixed_beam_gain_dbi(&ant));
        }
    }
    let mut gue_to_rx = vec![vec![0.0; pairs.len()]; tx_gues.len()];
    for (t, &(g, _)) in tx_gues.iter().enumerate() {
        for (i, p) in pairs.iter().enumerate() {
            let mut rng = stream_rng(dseed, STREAM_LINK, 0x2000 + g as u64, 0x1000 + i as u64);
            gue_to_rx[t][i] = coupling_loss(
                layout,
                gues[g],
                p.rx,
                LinkKind::GueUav,
                cfg.uav_height_m,
                cfg.fc_hz,
                cfg.env,
                &mut rng,
            )?;
        }
    }
    let mut uav_to_rx = vec![vec![0.0; pairs.len()]; pairs.len()];
    for (i, pi) in pairs.iter().enumerate() {
        for (j, pj) in pairs.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut rng =
                stream_rng(dseed, STREAM_LINK, 0x3000 + i as u64, 0x1000 + j as u64);
            uav_to_rx[i][j] = coupling_loss(
                layout,
                pi.tx,
                pj.rx,
                LinkKind::UavUav,
                cfg.uav_height_m,
                cfg.fc_hz,
                cfg.env,
                &mut rng,
            )?;
        }
    }

    let noise_bs = noise_power_dbm(PRB_BANDWIDTH_HZ, cfg.bs_noise_figure_db);
    let noise_ue = noise_power_dbm(PRB_BANDWIDTH_HZ, cfg.ue_noise_figure_db);
    let mut out = DropSamples {
        gue_sinr_db: Vec::new(),
        u2u_sinr_db: Vec::new(),
        gue_rate_bps: Vec::new(),
        u2u_rate_bps: Vec::new(),
    };

    // ground uplink, evaluated on the first ground PRB
    if let Some(&q0) = plan.gue_prbs.first() {
        for (t, &(g, c)) in tx_gues.iter().enumerate() {
            let signal = gue_power_dbm[t] - gue_link[g][c].0 + gue_link[g][c].1;
            let mut interf = Vec::new();
            for (t2, &(g2, _)) in tx_gues.iter().enumerate() {
                if g2 != g {
                    interf.push(gue_power_dbm[t2] - gue_link[g2][c].0 + gue_link[g2][c].1);
                }
            }
            for i in 0..pairs.len() {
                if plan.pair_sets[i].contains(&q0) {
                    interf.push(pair_power_dbm[i] - uav_to_bs[i][c].0 + uav_to_bs[i][c].1);
                }
            }
            let s = assemble_sinr(LinkDirection::Ul, signal, &interf, noise_bs);
            out.gue_sinr_db.push(s.sinr_db);
            out.gue_rate_bps
                .push(rate_bps(s.sinr_db, PRB_BANDWIDTH_HZ, cfg.se_cap_bps_hz));
        }
    }

    // sidelinks, each evaluated on its first occupied PRB
    for (i, _) in pairs.iter().enumerate() {
        let Some(&q) = plan.pair_sets[i].first() else { continue };
        let signal = pair_power_dbm[i] - pair_loss[i];
        let mut interf = Vec::new();
        for j in 0..pairs.len() {
            if j != i && plan.pair_sets[j].contains(&q) {
                interf.push(pair_power_dbm[j] - uav_to_rx[j][i]);
            }
        }
        if plan.gue_prbs.contains(&q) {
            for (t, _) in tx_gues.iter().enumerate() {
                interf.push(gue_power_dbm[t] - gue_to_rx[t][i]);
            }
        }
        let s = assemble_sinr(LinkDirection::U2u, signal, &interf, noise_ue);
        out.u2u_sinr_db.push(s.sinr_db);
        let bw = plan.pair_sets[i].len() as f64 * PRB_BANDWIDTH_HZ;
        out.u2u_rate_bps
            .push(rate_bps(s.sinr_db, bw, cfg.se_cap_bps_hz));
    }
    Ok(out)
}

/// Runs the coexistence study over independent drops.
pub fn run_u2u_study(cfg: &U2uStudyConfig) -> Result<CoexResult, SimError> {
    if cfg.n_drops == 0 {
        return Err(SimError::Config("n_drops must be >= 1".into()));
    }
    cfg.sharing.validate()?;
    let layout = build_hex_layout(cfg.isd_m, cfg.env)?;
    let cells = layout.cells();
    let drops: Vec<DropSamples> = (0..cfg.n_drops as u64)
        .into_par_iter()
        .map(|d| eval_u2u_drop(cfg, &layout, &cells, drop_seed(cfg.seed, d)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut r = CoexResult {
        gue_sinr_db: CdfSummary::new(),
        u2u_sinr_db: CdfSummary::new(),
        gue_rate_bps: CdfSummary::new(),
        u2u_rate_bps: CdfSummary::new(),
    };
    for d in &drops {
        r.gue_sinr_db.extend(&d.gue_sinr_db);
        r.u2u_sinr_db.extend(&d.u2u_sinr_db);
        r.gue_rate_bps.extend(&d.gue_rate_bps);
        r.u2u_rate_bps.extend(&d.u2u_rate_bps);
    }
    Ok(r)
}

/// Coverage probabilities over a sweep of UAV power control factors, with
/// common random numbers so only the power rule changes between points.
pub fn epsilon_sweep(
    base: &U2uStudyConfig,
    eps_values: &[f64],
) -> Result<Vec<(f64, f64, f64)>, SimError> {
    eps_values
        .iter()
        .map(|&e| {
            let mut cfg = base.clone();
            cfg.epsilon_uav = e;
            let r = run_u2u_study(&cfg)?;
            Ok((
                e,
                r.u2u_coverage(cfg.coverage_threshold_db),
                r.gue_coverage(cfg.coverage_threshold_db),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub label: String,
    pub gue_p5_bps: f64,
    pub u2u_p5_bps: f64,
}

/// 5%-worst rates per tier for a list of sharing configurations.
pub fn rate_comparison(
    base: &U2uStudyConfig,
    configs: &[(String, SharingConfig, f64)],
) -> Result<Vec<RateReport>, SimError> {
    configs
        .iter()
        .map(|(label, sharing, eps)| {
            let mut cfg = base.clone();
            cfg.sharing = *sharing;
            cfg.epsilon_uav = *eps;
            let r = run_u2u_study(&cfg)?;
            Ok(RateReport {
                label: label.clone(),
                gue_p5_bps: r.gue_rate_bps.percentile(0.05)?,
                u2u_p5_bps: r.u2u_rate_bps.percentile(0.05)?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// mmWave double-wobbling link
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WobbleConfig {
    pub n_antennas: usize,
    pub delta_max_deg: f64,
    pub fc_hz: f64,
    pub link_distance_m: f64,
    pub bandwidth_hz: f64,
}

impl WobbleConfig {
    pub fn new(n_antennas: usize, delta_max_deg: f64) -> Result<Self, SimError> {
        if n_antennas == 0 {
            return Err(SimError::Config("n_antennas must be >= 1".into()));
        }
        if delta_max_deg < 0.0 {
            return Err(SimError::Config("delta_max must be >= 0".into()));
        }
        Ok(Self {
            n_antennas,
            delta_max_deg,
            fc_hz: 60.0e9,
            link_distance_m: 500.0,
            bandwidth_hz: 100.0e6,
        })
    }
}

/// Power gain of an N-element half-wavelength vertical ULA toward an
/// elevation offset `delta` radians from its steered boresight: N at perfect
/// alignment, scaled by the normalized array-factor power off axis.
pub fn ula_misalignment_gain(n: usize, delta_rad: f64) -> f64 {
    let psi = std::f64::consts::PI * delta_rad.sin();
    if psi.abs() < 1e-12 {
        return n as f64;
    }
    let af = (0.5 * n as f64 * psi).sin() / (n as f64 * (0.5 * psi).sin());
    n as f64 * af * af
}

/// Mean spectral efficiency of the double-wobbling link: both ends draw an
/// independent elevation misalignment uniform in [0, delta_max].
pub fn wobble_spectral_efficiency(
    cfg: &WobbleConfig,
    tx_power_dbm: f64,
    noise_figure_db: f64,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<f64, SimError> {
    if cfg.n_antennas == 0 {
        return Err(SimError::Config("n_antennas must be >= 1".into()));
    }
    if cfg.delta_max_deg < 0.0 {
        return Err(SimError::Config("delta_max must be >= 0".into()));
    }
    if n_samples == 0 {
        return Err(SimError::Config("n_samples must be >= 1".into()));
    }
    let snr0_db = tx_power_dbm
        - fspl_db(cfg.link_distance_m, cfg.fc_hz)
        - noise_power_dbm(cfg.bandwidth_hz, noise_figure_db);
    let snr0 = db_to_lin(snr0_db);
    let dmax = cfg.delta_max_deg.to_radians();
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let d1 = if dmax > 0.0 { rng.gen_range(0.0..dmax) } else { 0.0 };
        let d2 = if dmax > 0.0 { rng.gen_range(0.0..dmax) } else { 0.0 };
        let g = ula_misalignment_gain(cfg.n_antennas, d1)
            * ula_misalignment_gain(cfg.n_antennas, d2);
        acc += (1.0 + snr0 * g).log2();
    }
    Ok(acc / n_samples as f64)
}
