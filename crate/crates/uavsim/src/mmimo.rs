//! Multi-user massive MIMO downlink: zero-forcing precoding with perfect
//! CSI, SRS-based estimation with pilot reuse and contamination, and
//! UAV-aware null steering from statistical (LoS-direction) CSI.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{cn01, steering_raw, AntennaConfig, LinkKind, DEFAULT_K_FACTOR_DB};
use crate::error::SimError;
use crate::linklevel::{
    bs_user_coupling, db_to_lin, noise_power_dbm, LinkCoupling, PRB_BANDWIDTH_HZ,
};
use crate::powerctrl::{tx_power_per_prb_dbm, PowerControlParams};
use crate::scenario::{
    build_hex_layout, derive_rng, drop_seed, drop_users, Cell, DensitySpec, Environment,
    HeightSpec, NetworkLayout, Position,
};
use crate::stats::CdfSummary;

/// Spatial-multiplexing limit per cell.
pub const MAX_MULTIPLEXED_USERS: usize = 8;
/// Orthogonal SRS sequences per pool.
pub const SRS_SEQUENCES: usize = 8;
/// Sectors sharing one sequence pool (reuse factor).
pub const SRS_REUSE_SECTORS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CsiQuality {
    Perfect,
    SrsEstimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MmimoMode {
    /// Single user per PRB on the fixed sector beam, UAVs with UE arrays.
    Su,
    /// Up to 8 spatially multiplexed devices, single-antenna terminals.
    Mmimo,
    /// Multiplexing plus UAV-side 2x2 conventional beamforming.
    MmimoAaUav,
    /// MmimoAaUav plus BS radiation nulls toward strong external UAVs.
    MmimoNulls,
}

impl MmimoMode {
    pub fn uses_ue_array(self) -> bool {
        !matches!(self, MmimoMode::Mmimo)
    }
}

/// Channel matrix of one cell's scheduled users (antennas x users).
#[derive(Debug, Clone)]
pub struct CsiMatrix {
    pub entries: DMatrix<Complex64>,
    pub quality: CsiQuality,
}

impl CsiMatrix {
    pub fn new(entries: DMatrix<Complex64>, quality: CsiQuality) -> Result<Self, SimError> {
        if entries.ncols() == 0 {
            return Err(SimError::Config("CsiMatrix needs >= 1 user".into()));
        }
        if entries.ncols() > MAX_MULTIPLEXED_USERS {
            return Err(SimError::Config(format!(
                "{} users exceed the multiplexing limit {MAX_MULTIPLEXED_USERS}",
                entries.ncols()
            )));
        }
        Ok(Self { entries, quality })
    }
}

/// SRS sequence plan over one reuse group.
#[derive(Debug, Clone)]
pub struct SrsPlan {
    pub n_sequences: usize,
    pub reuse_group: usize,
    /// Contributor index -> sequence index.
    pub assignment: Vec<usize>,
}

impl SrsPlan {
    pub fn new(assignment: Vec<usize>) -> Self {
        Self {
            n_sequences: SRS_SEQUENCES,
            reuse_group: SRS_REUSE_SECTORS,
            assignment,
        }
    }
}

/// Global sequence index of scheduling slot `slot` in a sector: pools repeat
/// every `SRS_REUSE_SECTORS` sectors.
pub fn srs_sequence_id(sector_index: usize, slot: usize) -> usize {
    (sector_index % SRS_REUSE_SECTORS) * SRS_SEQUENCES + slot
}

/// Per-user unit-norm precoders with per-user power shares.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub weights: Vec<DVector<Complex64>>,
    pub power_share: Vec<f64>,
    /// A ridge was needed (rank-deficient CSI).
    pub regularized: bool,
    /// Null directions dropped to keep the augmented system solvable.
    pub dropped_nulls: usize,
}

impl PrecoderSet {
    /// Sum of p_k * ||w_k||^2; equals the configured cell power.
    pub fn total_power(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.power_share)
            .map(|(w, p)| p * w.norm_squared())
            .sum()
    }
}

/// W = H (H^H H)^{-1}; falls back to a ridge of 1e-8 * trace on the Gram
/// matrix when the Cholesky factorization fails.
fn zf_solve(h: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, bool), SimError> {
    let k = h.ncols();
    let gram = h.adjoint() * h;
    if let Some(ch) = gram.clone().cholesky() {
        return Ok((h * ch.inverse(), false));
    }
    let ridge = 1e-8 * gram.trace().re.max(f64::MIN_POSITIVE);
    let reg = gram + DMatrix::identity(k, k) * Complex64::new(ridge, 0.0);
    let ch = reg
        .cholesky()
        .ok_or_else(|| SimError::Numerical("ZF Gram matrix not factorizable".into()))?;
    Ok((h * ch.inverse(), true))
}

fn normalize_columns(
    w: &DMatrix<Complex64>,
    take: usize,
    total_power: f64,
    regularized: bool,
    dropped_nulls: usize,
) -> Result<PrecoderSet, SimError> {
    let mut weights = Vec::with_capacity(take);
    for c in 0..take {
        let col = w.column(c).into_owned();
        let n = col.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(SimError::Numerical(format!("degenerate precoder column {c}")));
        }
        weights.push(col / Complex64::new(n, 0.0));
    }
    let share = total_power / take as f64;
    Ok(PrecoderSet {
        weights,
        power_share: vec![share; take],
        regularized,
        dropped_nulls,
    })
}

/// Zero-forcing precoders with an equal power split under a total-power
/// constraint.
pub fn zf_precoders(h: &CsiMatrix, total_power: f64) -> Result<PrecoderSet, SimError> {
    let (n_ant, k) = (h.entries.nrows(), h.entries.ncols());
    if k > n_ant {
        return Err(SimError::Config(format!(
            "{k} users exceed {n_ant} antennas"
        )));
    }
    if total_power <= 0.0 {
        return Err(SimError::Config("total_power must be positive".into()));
    }
    let (w, reg) = zf_solve(&h.entries)?;
    normalize_columns(&w, k, total_power, reg, 0)
}

/// ZF over the augmented matrix [H_served | A_nulls] with zero power on the
/// null columns. Nulls beyond the spatial budget (or making the system
/// singular) are dropped weakest-first by `null_powers`.
pub fn null_steering_precoders(
    h_served: &CsiMatrix,
    null_dirs: &[DVector<Complex64>],
    null_powers: &[f64],
    max_nulls: usize,
    total_power: f64,
) -> Result<PrecoderSet, SimError> {
    if null_dirs.len() != null_powers.len() {
        return Err(SimError::Config(
            "null_dirs and null_powers length mismatch".into(),
        ));
    }
    let (n_ant, k) = (h_served.entries.nrows(), h_served.entries.ncols());
    if k > n_ant {
        return Err(SimError::Config(format!(
            "{k} users exceed {n_ant} antennas"
        )));
    }
    let budget = max_nulls.min(n_ant - k);
    let mut order: Vec<usize> = (0..null_dirs.len()).collect();
    order.sort_by(|&a, &b| {
        null_powers[b]
            .partial_cmp(&null_powers[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<usize> = order.into_iter().take(budget).collect();
    loop {
        let mut aug = DMatrix::zeros(n_ant, k + kept.len());
        aug.view_mut((0, 0), (n_ant, k)).copy_from(&h_served.entries);
        for (j, &idx) in kept.iter().enumerate() {
            aug.column_mut(k + j).copy_from(&null_dirs[idx]);
        }
        let gram = aug.adjoint() * &aug;
        if let Some(ch) = gram.cholesky() {
            let w = &aug * ch.inverse();
            return normalize_columns(
                &w,
                k,
                total_power,
                false,
                null_dirs.len() - kept.len(),
            );
        }
        if kept.pop().is_none() {
            // even plain ZF is singular; take the regularized path
            let mut set = zf_precoders(h_served, total_power)?;
            set.dropped_nulls = null_dirs.len();
            return Ok(set);
        }
    }
}

/// Per-antenna MMSE channel estimates from superposed SRS observations.
///
/// `h_true` holds the channels of every contributor (served users plus
/// co-sequence users elsewhere) toward this BS; `beta_lin` their per-antenna
/// average channel power. Returns estimates for the `served` contributors.
pub fn srs_estimate(
    h_true: &DMatrix<Complex64>,
    plan: &SrsPlan,
    srs_power_lin: &[f64],
    beta_lin: &[f64],
    noise_var: f64,
    served: &[usize],
    rng: &mut impl Rng,
) -> Result<CsiMatrix, SimError> {
    let j_all = h_true.ncols();
    if plan.assignment.len() != j_all || srs_power_lin.len() != j_all || beta_lin.len() != j_all {
        return Err(SimError::Config("srs_estimate input length mismatch".into()));
    }
    if served.iter().any(|&s| s >= j_all) {
        return Err(SimError::Config("served index out of range".into()));
    }
    let n_ant = h_true.nrows();
    // one superposed observation per sequence needed (deterministic order)
    let mut needed: Vec<usize> = served.iter().map(|&s| plan.assignment[s]).collect();
    needed.sort_unstable();
    needed.dedup();
    let mut obs: BTreeMap<usize, DVector<Complex64>> = BTreeMap::new();
    let noise_amp = noise_var.sqrt();
    for &q in &needed {
        let mut y = DVector::from_fn(n_ant, |_, _| cn01(rng) * noise_amp);
        for j in 0..j_all {
            if plan.assignment[j] == q {
                let a = Complex64::new(srs_power_lin[j].sqrt(), 0.0);
                y += h_true.column(j) * a;
            }
        }
        obs.insert(q, y);
    }
    let mut est = DMatrix::zeros(n_ant, served.len());
    for (c, &s) in served.iter().enumerate() {
        let q = plan.assignment[s];
        let denom: f64 = (0..j_all)
            .filter(|&j| plan.assignment[j] == q)
            .map(|j| srs_power_lin[j] * beta_lin[j])
            .sum::<f64>()
            + noise_var;
        let coef = srs_power_lin[s].sqrt() * beta_lin[s] / denom;
        est.column_mut(c)
            .copy_from(&(&obs[&q] * Complex64::new(coef, 0.0)));
    }
    CsiMatrix::new(est, CsiQuality::SrsEstimated)
}

// ---------------------------------------------------------------------------
// System-level study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MmimoStudyConfig {
    pub mode: MmimoMode,
    pub csi: CsiQuality,
    pub env: Environment,
    pub isd_m: f64,
    pub fc_hz: f64,
    pub uav_height_m: f64,
    pub uavs_per_sector: usize,
    pub gues_per_sector: usize,
    pub n_drops: usize,
    pub bs_power_dbm: f64,
    pub n_prb: usize,
    pub ue_noise_figure_db: f64,
    pub bs_noise_figure_db: f64,
    pub max_nulls: usize,
    pub srs_power: PowerControlParams,
    pub rate_threshold_bps: f64,
    pub se_cap_bps_hz: f64,
    pub k_factor_db: f64,
    pub seed: u64,
}

impl MmimoStudyConfig {
    /// Macro-deployment defaults used across the mode comparison table.
    pub fn table_default(mode: MmimoMode, csi: CsiQuality, uav_height_m: f64) -> Self {
        Self {
            mode,
            csi,
            env: Environment::UMa,
            isd_m: 500.0,
            fc_hz: 2.0e9,
            uav_height_m,
            uavs_per_sector: 1,
            gues_per_sector: 14,
            n_drops: 50,
            bs_power_dbm: 46.0,
            n_prb: 50,
            ue_noise_figure_db: 9.0,
            bs_noise_figure_db: 5.0,
            max_nulls: 16,
            srs_power: PowerControlParams::new(24.0, -58.0, 0.8, 1).expect("valid defaults"),
            rate_threshold_bps: 100e3,
            se_cap_bps_hz: 4.8,
            k_factor_db: DEFAULT_K_FACTOR_DB,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmimoStudyResult {
    pub mode: MmimoMode,
    pub csi: CsiQuality,
    pub uav_height_m: f64,
    pub uav_sinr_db: CdfSummary,
    pub gue_sinr_db: CdfSummary,
    pub uav_rate_bps: CdfSummary,
    pub gue_rate_bps: CdfSummary,
    /// Fraction of UAV rate samples above the configured C2 threshold.
    pub frac_uav_above_threshold: f64,
}

/// Effective BS-side channel vector of one link, with the UE analog beam
/// already applied, plus its per-antenna average power.
struct EffChan {
    h: DVector<Complex64>,
    beta: f64,
}

/// LoS factor contributed by the UE analog beam: the UE steers toward its
/// serving cell, so energy from direction `link_dir` is scaled by the UE
/// array inner product.
fn ue_beam_factor(
    ue_cfg: &AntennaConfig,
    serving_dir: [f64; 3],
    link_dir: [f64; 3],
) -> Complex64 {
    let to_angles = |d: [f64; 3]| crate::channel::direction_to_local(d[0], d[1], d[2], 0.0);
    let (ts, ps) = to_angles(serving_dir);
    let (tl, pl) = to_angles(link_dir);
    let w = steering_raw(ue_cfg, ts, ps);
    let a = steering_raw(ue_cfg, tl, pl);
    w.dotc(&a) / Complex64::new((ue_cfg.n_elements() as f64).sqrt(), 0.0)
}

fn effective_channel(
    bs_cfg: &AntennaConfig,
    coup: &LinkCoupling,
    c_los: Complex64,
    k_factor_db: f64,
    rng: &mut impl Rng,
) -> EffChan {
    let g_db = -coup.xi_db() + coup.element_gain_dbi(bs_cfg);
    let g = db_to_lin(g_db);
    let n = bs_cfg.n_elements();
    if coup.los {
        let k = db_to_lin(k_factor_db);
        let det_amp = (g * k / (k + 1.0)).sqrt();
        let dif_amp = (g / (k + 1.0)).sqrt();
        let steer = steering_raw(bs_cfg, coup.theta_bs_deg, coup.phi_bs_deg);
        let h = DVector::from_fn(n, |i, _| {
            steer[i] * c_los * det_amp + cn01(rng) * dif_amp
        });
        let beta = g * (k / (k + 1.0) * c_los.norm_sqr() + 1.0 / (k + 1.0));
        EffChan { h, beta }
    } else {
        let amp = g.sqrt();
        EffChan {
            h: DVector::from_fn(n, |_, _| cn01(rng) * amp),
            beta: g,
        }
    }
}

struct DropSamples {
    uav_sinr_db: Vec<f64>,
    gue_sinr_db: Vec<f64>,
    uav_rate_bps: Vec<f64>,
    gue_rate_bps: Vec<f64>,
}

const STREAM_COUPLING: u64 = 0x11;
const STREAM_FADING: u64 = 0x22;
const STREAM_SCHED: u64 = 0x33;
const STREAM_SRS: u64 = 0x44;

fn link_rng(dseed: u64, stream: u64, cell: usize, user: usize) -> rand_chacha::ChaCha8Rng {
    derive_rng(
        dseed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        ((cell as u64 + 1) << 32) | user as u64,
    )
}

struct UserCtx {
    pos: Position,
    is_uav: bool,
}

fn eval_drop(
    cfg: &MmimoStudyConfig,
    layout: &NetworkLayout,
    cells: &[Cell],
    dseed: u64,
) -> Result<DropSamples, SimError> {
    let drop = drop_users(
        layout,
        DensitySpec::PerSector {
            gues: cfg.gues_per_sector,
            uavs: cfg.uavs_per_sector,
        },
        HeightSpec {
            gue_height: crate::scenario::GUE_HEIGHT_M,
            uav_height_min: cfg.uav_height_m,
            uav_height_max: cfg.uav_height_m,
        },
        dseed,
    )?;
    let mut users: Vec<UserCtx> = Vec::with_capacity(drop.uavs.len() + drop.gues.len());
    users.extend(drop.uavs.iter().map(|&p| UserCtx { pos: p, is_uav: true }));
    users.extend(drop.gues.iter().map(|&p| UserCtx { pos: p, is_uav: false }));

    let bs_cfg = match cfg.mode {
        MmimoMode::Su => AntennaConfig::sector_8v(),
        _ => AntennaConfig::panel_8x8(),
    };
    let ue_cfg = AntennaConfig::ue_2x2();
    let n_cells = cells.len();

    // large-scale couplings, deterministic per (cell, user)
    let couplings: Vec<Vec<LinkCoupling>> = (0..n_cells)
        .map(|c| {
            (0..users.len())
                .map(|u| {
                    let kind = if users[u].is_uav {
                        LinkKind::BsUav
                    } else {
                        LinkKind::BsGue
                    };
                    let mut rng = link_rng(dseed, STREAM_COUPLING, c, u);
                    bs_user_coupling(layout, &cells[c], users[u].pos, kind, cfg.fc_hz, cfg.env, &mut rng)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    // association on large-scale RSRP with the mode's achievable beam gain
    let serving: Vec<usize> = (0..users.len())
        .map(|u| {
            let mut best = 0usize;
            let mut best_r = f64::NEG_INFINITY;
            for c in 0..n_cells {
                let coup = &couplings[c][u];
                let gain = match cfg.mode {
                    MmimoMode::Su => coup.fixed_beam_gain_dbi(&bs_cfg),
                    _ => coup.element_gain_dbi(&bs_cfg),
                };
                let r = -coup.xi_db() + gain;
                if r > best_r {
                    best_r = r;
                    best = c;
                }
            }
            best
        })
        .collect();

    // scheduling: per cell, UAVs first, then a deterministic random subset
    // of its GUEs, up to the multiplexing limit
    let mut assoc: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for (u, &c) in serving.iter().enumerate() {
        assoc[c].push(u);
    }
    let mut sched: Vec<Vec<usize>> = Vec::with_capacity(n_cells);
    for c in 0..n_cells {
        let mut uavs: Vec<usize> = assoc[c].iter().copied().filter(|&u| users[u].is_uav).collect();
        let mut gues: Vec<usize> = assoc[c].iter().copied().filter(|&u| !users[u].is_uav).collect();
        // Fisher-Yates with a per-cell stream
        let mut rng = link_rng(dseed, STREAM_SCHED, c, 0);
        for i in (1..gues.len()).rev() {
            let j = rng.gen_range(0..=i);
            gues.swap(i, j);
        }
        uavs.truncate(MAX_MULTIPLEXED_USERS);
        let room = MAX_MULTIPLEXED_USERS - uavs.len();
        uavs.extend(gues.into_iter().take(room));
        // slot order (and hence SRS sequence assignment) is random per cell,
        // so UAV pilots do not systematically collide across sites
        for i in (1..uavs.len()).rev() {
            let j = rng.gen_range(0..=i);
            uavs.swap(i, j);
        }
        sched.push(uavs);
    }
    let slot_of = |cell: usize, user: usize| sched[cell].iter().position(|&x| x == user);

    // UE analog beams point at the serving cell (LoS geometry)
    let ue_factor = |c: usize, u: usize| -> Complex64 {
        if cfg.mode.uses_ue_array() && users[u].is_uav {
            ue_beam_factor(
                &ue_cfg,
                couplings[serving[u]][u].user_to_bs,
                couplings[c][u].user_to_bs,
            )
        } else {
            Complex64::new(1.0, 0.0)
        }
    };

    // fading channels for every (cell, scheduled user) pair
    let scheduled: Vec<usize> = {
        let mut v: Vec<usize> = sched.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    };
    let chan: Vec<BTreeMap<usize, EffChan>> = (0..n_cells)
        .map(|c| {
            scheduled
                .iter()
                .map(|&u| {
                    let mut rng = link_rng(dseed, STREAM_FADING, c, u);
                    let e = effective_channel(
                        &bs_cfg,
                        &couplings[c][u],
                        ue_factor(c, u),
                        cfg.k_factor_db,
                        &mut rng,
                    );
                    (u, e)
                })
                .collect()
        })
        .collect();

    let p_prb_dbm = cfg.bs_power_dbm - 10.0 * (cfg.n_prb as f64).log10();
    let p_prb = db_to_lin(p_prb_dbm);
    let noise_ue = db_to_lin(noise_power_dbm(PRB_BANDWIDTH_HZ, cfg.ue_noise_figure_db));

    let mut out = DropSamples {
        uav_sinr_db: Vec::new(),
        gue_sinr_db: Vec::new(),
        uav_rate_bps: Vec::new(),
        gue_rate_bps: Vec::new(),
    };

    if cfg.mode == MmimoMode::Su {
        // fixed sector beam, one user per PRB
        let w_fixed = steering_raw(&bs_cfg, 90.0 + bs_cfg.downtilt_deg, 0.0)
            / Complex64::new((bs_cfg.n_elements() as f64).sqrt(), 0.0);
        for &u in &scheduled {
            let c0 = serving[u];
            let mut sig = 0.0;
            let mut interf = 0.0;
            for c in 0..n_cells {
                let e = &chan[c][&u];
                let pow = p_prb * w_fixed.dotc(&e.h).norm_sqr();
                if c == c0 {
                    sig = pow;
                } else {
                    interf += pow;
                }
            }
            let sinr = sig / (interf + noise_ue);
            let share = 1.0 / assoc[c0].len().max(1) as f64;
            record(cfg, &mut out, users[u].is_uav, sinr, share);
        }
        return Ok(out);
    }

    // precoders per cell
    let noise_bs = db_to_lin(noise_power_dbm(PRB_BANDWIDTH_HZ, cfg.bs_noise_figure_db));
    let mut precoders: Vec<Option<PrecoderSet>> = Vec::with_capacity(n_cells);
    for c in 0..n_cells {
        if sched[c].is_empty() {
            precoders.push(None);
            continue;
        }
        let n_ant = bs_cfg.n_elements();
        let k = sched[c].len();
        let mut h_mat = DMatrix::zeros(n_ant, k);
        for (j, &u) in sched[c].iter().enumerate() {
            h_mat.column_mut(j).copy_from(&chan[c][&u].h);
        }
        // statistical-CSI null directions toward strong external UAVs; also
        // projected out of the pilot observations (receive-side nulls apply
        // during sounding as well as payload)
        let (null_dirs, null_powers): (Vec<DVector<Complex64>>, Vec<f64>) =
            if cfg.mode == MmimoMode::MmimoNulls {
                let mut cand: Vec<(f64, DVector<Complex64>)> = Vec::new();
                for &u in &scheduled {
                    if !users[u].is_uav || serving[u] == c || !couplings[c][u].los {
                        continue;
                    }
                    let coup = &couplings[c][u];
                    let pow = db_to_lin(-coup.xi_db() + coup.element_gain_dbi(&bs_cfg));
                    cand.push((
                        pow,
                        steering_raw(&bs_cfg, coup.theta_bs_deg, coup.phi_bs_deg),
                    ));
                }
                cand.into_iter().map(|(p, d)| (d, p)).unzip()
            } else {
                (Vec::new(), Vec::new())
            };
        let csi = match cfg.csi {
            CsiQuality::Perfect => CsiMatrix::new(h_mat.clone(), CsiQuality::Perfect)?,
            CsiQuality::SrsEstimated => {
                // contributors: slot-s users of every cell sharing this pool
                let pool = cells[c].sector % SRS_REUSE_SECTORS;
                let mut contrib: Vec<usize> = Vec::new();
                let mut seqs: Vec<usize> = Vec::new();
                for c2 in 0..n_cells {
                    if cells[c2].sector % SRS_REUSE_SECTORS != pool {
                        continue;
                    }
                    for (s, &u) in sched[c2].iter().enumerate() {
                        contrib.push(u);
                        seqs.push(srs_sequence_id(cells[c2].sector, s));
                    }
                }
                let mut h_all = DMatrix::zeros(n_ant, contrib.len());
                let mut betas = Vec::with_capacity(contrib.len());
                let mut powers = Vec::with_capacity(contrib.len());
                for (j, &u) in contrib.iter().enumerate() {
                    let e = if let Some(e) = chan[c].get(&u) {
                        e
                    } else {
                        unreachable!("scheduled users have channels everywhere")
                    };
                    h_all.column_mut(j).copy_from(&e.h);
                    betas.push(e.beta);
                    let xi = couplings[serving[u]][u].xi_db();
                    powers.push(db_to_lin(tx_power_per_prb_dbm(&cfg.srs_power, xi)));
                }
                let served: Vec<usize> = sched[c]
                    .iter()
                    .map(|&u| contrib.iter().position(|&x| x == u).expect("own user"))
                    .collect();
                let plan = SrsPlan::new(seqs);
                let mut rng = link_rng(dseed, STREAM_SRS, c, 0);
                srs_estimate(&h_all, &plan, &powers, &betas, noise_bs, &served, &mut rng)?
            }
        };
        let set = if cfg.mode == MmimoMode::MmimoNulls {
            null_steering_precoders(&csi, &null_dirs, &null_powers, cfg.max_nulls, p_prb)?
        } else {
            zf_precoders(&csi, p_prb)?
        };
        precoders.push(Some(set));
    }

    for &u in &scheduled {
        let c0 = serving[u];
        let s0 = slot_of(c0, u).expect("scheduled");
        let mut sig = 0.0;
        let mut interf = 0.0;
        for c in 0..n_cells {
            let Some(set) = &precoders[c] else { continue };
            let e = &chan[c][&u];
            for (s, w) in set.weights.iter().enumerate() {
                let pow = set.power_share[s] * w.dotc(&e.h).norm_sqr();
                if c == c0 && s == s0 {
                    sig = pow;
                } else {
                    interf += pow;
                }
            }
        }
        let sinr = sig / (interf + noise_ue);
        let share = sched[c0].len() as f64 / assoc[c0].len().max(1) as f64;
        record(cfg, &mut out, users[u].is_uav, sinr, share);
    }
    Ok(out)
}

/// Scheduling granularity of the control-plane allocation: one PRB pair.
pub const C2_ALLOC_HZ: f64 = 2.0 * PRB_BANDWIDTH_HZ;

/// Control-plane rate model: the C2 stream rides one PRB pair, and a user
/// holds it for the fraction of scheduling rounds given by `share`
/// (served-per-round / users-in-cell). Spatial multiplexing therefore
/// multiplies the C2 duty cycle directly.
fn record(cfg: &MmimoStudyConfig, out: &mut DropSamples, is_uav: bool, sinr_lin: f64, share: f64) {
    let sinr_db = 10.0 * sinr_lin.log10();
    let se = (1.0 + sinr_lin).log2().min(cfg.se_cap_bps_hz);
    let rate = share * C2_ALLOC_HZ * se;
    if is_uav {
        out.uav_sinr_db.push(sinr_db);
        out.uav_rate_bps.push(rate);
    } else {
        out.gue_sinr_db.push(sinr_db);
        out.gue_rate_bps.push(rate);
    }
}

/// Runs the downlink mode study over independent drops (parallel, with a
/// deterministic merge order).
pub fn run_mmimo_study(cfg: &MmimoStudyConfig) -> Result<MmimoStudyResult, SimError> {
    if cfg.n_drops == 0 {
        return Err(SimError::Config("n_drops must be >= 1".into()));
    }
    let layout = build_hex_layout(cfg.isd_m, cfg.env)?;
    let cells = layout.cells();
    let drops: Vec<DropSamples> = (0..cfg.n_drops as u64)
        .into_par_iter()
        .map(|d| eval_drop(cfg, &layout, &cells, drop_seed(cfg.seed, d)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut uav_sinr = CdfSummary::new();
    let mut gue_sinr = CdfSummary::new();
    let mut uav_rate = CdfSummary::new();
    let mut gue_rate = CdfSummary::new();
    for d in drops {
        uav_sinr.extend(&d.uav_sinr_db);
        gue_sinr.extend(&d.gue_sinr_db);
        uav_rate.extend(&d.uav_rate_bps);
        gue_rate.extend(&d.gue_rate_bps);
    }
    let frac = if uav_rate.len() > 0 {
        uav_rate.fraction_above(cfg.rate_threshold_bps)
    } else {
        0.0
    };
    Ok(MmimoStudyResult {
        mode: cfg.mode,
        csi: cfg.csi,
        uav_height_m: cfg.uav_height_m,
        uav_sinr_db: uav_sinr,
        gue_sinr_db: gue_sinr,
        uav_rate_bps: uav_rate,
        gue_rate_bps: gue_rate,
        frac_uav_above_threshold: frac,
    })
}
