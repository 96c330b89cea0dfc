//! Uplink cell-free processing: every BS observes every user, and a central
//! unit forms per-user combiners over all M single-antenna BSs. Supports
//! matched-filter and MMSE combining under perfect or single-symbol-SRS
//! channel estimates, plus a serving-BS-restricted cellular baseline.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{cn01, sample_large_scale, LinkKind, DEFAULT_K_FACTOR_DB};
use crate::error::SimError;
use crate::linklevel::{db_to_lin, noise_power_dbm, PRB_BANDWIDTH_HZ};
use crate::powerctrl::{tx_power_per_prb_dbm, PowerControlParams};
use crate::scenario::{
    build_random_layout, derive_rng, drop_seed, Environment, Position, GUE_HEIGHT_M,
};
use crate::stats::CdfSummary;

/// Channel coefficients of the whole network toward every user:
/// `g[(m, k)]` is the coefficient between BS m and user k.
#[derive(Debug, Clone)]
pub struct CollectiveChannel {
    pub g: DMatrix<Complex64>,
    /// Per-link mean power (pathloss, shadowing, antenna gains) in dB.
    pub large_scale_db: DMatrix<f64>,
}

impl CollectiveChannel {
    pub fn new(g: DMatrix<Complex64>, large_scale_db: DMatrix<f64>) -> Result<Self, SimError> {
        if g.nrows() == 0 || g.ncols() == 0 {
            return Err(SimError::Config("CollectiveChannel needs M, K >= 1".into()));
        }
        if g.shape() != large_scale_db.shape() {
            return Err(SimError::Config(
                "channel and large-scale shapes differ".into(),
            ));
        }
        Ok(Self { g, large_scale_db })
    }

    pub fn n_bs(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.g.ncols()
    }
}

/// SRS dimensioning: `tau_p` orthogonal pilot symbols per coherence
/// interval, and a user -> pilot map. Users sharing a pilot contaminate
/// each other's estimates.
#[derive(Debug, Clone)]
pub struct PilotConfig {
    pub tau_p: usize,
    pub assignment: Vec<usize>,
}

impl PilotConfig {
    pub fn new(tau_p: usize, assignment: Vec<usize>) -> Result<Self, SimError> {
        if tau_p == 0 {
            return Err(SimError::Config("tau_p must be >= 1".into()));
        }
        if assignment.iter().any(|&p| p >= tau_p) {
            return Err(SimError::Config("pilot index out of range".into()));
        }
        Ok(Self { tau_p, assignment })
    }

    /// Single-symbol SRS: every user on the one available pilot.
    pub fn shared(n_users: usize) -> Self {
        Self {
            tau_p: 1,
            assignment: vec![0; n_users],
        }
    }

    /// Deterministic greedy assignment for tau_p >= 2: users are taken in
    /// descending order of their strongest large-scale gain and placed on
    /// the pilot with the least accumulated gain overlap.
    pub fn assign_greedy(tau_p: usize, large_scale_db: &DMatrix<f64>) -> Result<Self, SimError> {
        if tau_p == 0 {
            return Err(SimError::Config("tau_p must be >= 1".into()));
        }
        let (m, k) = large_scale_db.shape();
        let beta: Vec<Vec<f64>> = (0..k)
            .map(|u| (0..m).map(|b| db_to_lin(large_scale_db[(b, u)])).collect())
            .collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let ga = beta[b].iter().cloned().fold(0.0, f64::max);
            let gb = beta[a].iter().cloned().fold(0.0, f64::max);
            ga.partial_cmp(&gb).unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut assignment = vec![0usize; k];
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); tau_p];
        for &u in &order {
            let mut best = 0usize;
            let mut best_overlap = f64::INFINITY;
            for p in 0..tau_p {
                let overlap: f64 = members[p]
                    .iter()
                    .map(|&v| (0..m).map(|b| beta[u][b] * beta[v][b]).sum::<f64>())
                    .sum();
                if overlap < best_overlap {
                    best_overlap = overlap;
                    best = p;
                }
            }
            assignment[u] = best;
            members[best].push(u);
        }
        Self::new(tau_p, assignment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CombinerKind {
    Mf,
    Mmse,
}

/// Unit-norm per-user combiner vectors over the M BSs.
#[derive(Debug, Clone)]
pub struct CombinerSet {
    pub kind: CombinerKind,
    pub v: Vec<DVector<Complex64>>,
}

/// Per-BS MMSE channel estimates from the superposed co-pilot observation:
/// for each pilot q, BS m sees y_m = sum_{j in q} sqrt(p_j) g_mj + n_m and
/// scales it by sqrt(p_k) beta_mk / (sum_j p_j beta_mj + sigma^2).
pub fn cf_estimate(
    g_true: &CollectiveChannel,
    pilots: &PilotConfig,
    pilot_power_lin: &[f64],
    noise_var: f64,
    rng: &mut impl Rng,
) -> Result<CollectiveChannel, SimError> {
    let (m, k) = g_true.g.shape();
    if pilots.assignment.len() != k || pilot_power_lin.len() != k {
        return Err(SimError::Config("cf_estimate input length mismatch".into()));
    }
    let noise_amp = noise_var.sqrt();
    // one observation vector per pilot symbol
    let mut obs = vec![DVector::<Complex64>::zeros(m); pilots.tau_p];
    for y in obs.iter_mut() {
        for i in 0..m {
            y[i] = cn01(rng) * noise_amp;
        }
    }
    for j in 0..k {
        let a = Complex64::new(pilot_power_lin[j].sqrt(), 0.0);
        let q = pilots.assignment[j];
        for i in 0..m {
            obs[q][i] += g_true.g[(i, j)] * a;
        }
    }
    let beta = |i: usize, j: usize| db_to_lin(g_true.large_scale_db[(i, j)]);
    let mut est = DMatrix::zeros(m, k);
    for u in 0..k {
        let q = pilots.assignment[u];
        for i in 0..m {
            let denom: f64 = (0..k)
                .filter(|&j| pilots.assignment[j] == q)
                .map(|j| pilot_power_lin[j] * beta(i, j))
                .sum::<f64>()
                + noise_var;
            let coef = pilot_power_lin[u].sqrt() * beta(i, u) / denom;
            est[(i, u)] = obs[q][i] * Complex64::new(coef, 0.0);
        }
    }
    CollectiveChannel::new(est, g_true.large_scale_db.clone())
}

fn normalized_columns(w: &DMatrix<Complex64>) -> Result<Vec<DVector<Complex64>>, SimError> {
    (0..w.ncols())
        .map(|c| {
            let col = w.column(c).into_owned();
            let n = col.norm();
            if !n.is_finite() || n == 0.0 {
                return Err(SimError::Numerical(format!("degenerate combiner column {c}")));
            }
            Ok(col / Complex64::new(n, 0.0))
        })
        .collect()
}

/// Matched filter: v_k = g_hat_k / ||g_hat_k||.
pub fn mf_combiners(g_hat: &CollectiveChannel) -> Result<CombinerSet, SimError> {
    Ok(CombinerSet {
        kind: CombinerKind::Mf,
        v: normalized_columns(&g_hat.g)?,
    })
}

/// MMSE combiners: v_k proportional to
/// (sum_{j != k} p_j g_j g_j^H + sigma^2 I)^{-1} g_k, normalized. Including
/// user k's own term rescales without rotating (Sherman-Morrison), so a
/// single factorization of the full covariance serves every user.
pub fn mmse_combiners(
    g_hat: &CollectiveChannel,
    power_lin: &[f64],
    noise_var: f64,
) -> Result<CombinerSet, SimError> {
    let (m, k) = g_hat.g.shape();
    if power_lin.len() != k {
        return Err(SimError::Config("mmse_combiners power length mismatch".into()));
    }
    if noise_var <= 0.0 {
        return Err(SimError::Config("mmse_combiners needs sigma^2 > 0".into()));
    }
    let mut a = DMatrix::<Complex64>::identity(m, m) * Complex64::new(noise_var, 0.0);
    for j in 0..k {
        let gj = g_hat.g.column(j);
        let p = Complex64::new(power_lin[j], 0.0);
        // a += p * gj gj^H
        a.ger(p, &gj, &gj.conjugate(), Complex64::new(1.0, 0.0));
    }
    let ch = a
        .cholesky()
        .ok_or_else(|| SimError::Numerical("MMSE covariance not factorizable".into()))?;
    let w = ch.solve(&g_hat.g);
    Ok(CombinerSet {
        kind: CombinerKind::Mmse,
        v: normalized_columns(&w)?,
    })
}

/// Uplink SINR of every user on the true channels under the given combiners:
/// SINR_k = p_k |v_k^H g_k|^2 / (sum_{j != k} p_j |v_k^H g_j|^2 + sigma^2).
pub fn cf_uplink_sinr(
    g_true: &CollectiveChannel,
    combiners: &CombinerSet,
    power_lin: &[f64],
    noise_var: f64,
) -> Result<Vec<f64>, SimError> {
    let k = g_true.n_users();
    if combiners.v.len() != k || power_lin.len() != k {
        return Err(SimError::Config("cf_uplink_sinr input length mismatch".into()));
    }
    let mut out = Vec::with_capacity(k);
    for u in 0..k {
        let v = &combiners.v[u];
        let scale = v.norm_squared();
        let mut sig = 0.0;
        let mut interf = 0.0;
        for j in 0..k {
            let c = v.dotc(&g_true.g.column(j).into_owned()).norm_sqr();
            if j == u {
                sig = power_lin[j] * c;
            } else {
                interf += power_lin[j] * c;
            }
        }
        out.push(sig / (interf + noise_var * scale));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// System-level study
// ---------------------------------------------------------------------------

/// User population of the uplink study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CfMix {
    /// One UAV per BS, no ground users.
    UavOnly,
    /// 14 ground users for every UAV (about 7% UAVs).
    Mixed7Pct,
}

#[derive(Debug, Clone, Serialize)]
pub struct CfStudyConfig {
    pub mix: CfMix,
    pub n_bs: usize,
    pub isd_m: f64,
    pub env: Environment,
    pub fc_hz: f64,
    pub bs_noise_figure_db: f64,
    pub power: PowerControlParams,
    pub uav_height_min_m: f64,
    pub uav_height_max_m: f64,
    pub k_factor_db: f64,
    /// Pilot dimensions: `None` gives every user an orthogonal sequence
    /// within the single SRS symbol (estimation error is noise-limited);
    /// `Some(t)` packs users onto `t` shared dimensions with contamination.
    pub tau_p: Option<usize>,
    /// Coherence-interval length in symbols, for the SRS overhead metadata.
    pub tau_c: usize,
    pub n_drops: usize,
    pub n_realizations: usize,
    pub seed: u64,
}

impl CfStudyConfig {
    /// Dense urban-micro uplink deployment used for the combining study.
    pub fn umi_default(mix: CfMix) -> Self {
        Self {
            mix,
            n_bs: 57,
            isd_m: 200.0,
            env: Environment::UMi,
            fc_hz: 2.0e9,
            bs_noise_figure_db: 5.0,
            // 23 dBm terminals over a 20 MHz channel (100 PRBs)
            power: PowerControlParams::new(23.0, -58.0, 0.7, 100).expect("valid defaults"),
            uav_height_min_m: 25.0,
            uav_height_max_m: 150.0,
            k_factor_db: DEFAULT_K_FACTOR_DB,
            tau_p: None,
            tau_c: 200,
            n_drops: 300,
            n_realizations: 100,
            seed: 1,
        }
    }

    pub fn user_counts(&self) -> (usize, usize) {
        match self.mix {
            CfMix::UavOnly => (self.n_bs, 0),
            CfMix::Mixed7Pct => {
                let uavs = (self.n_bs as f64 / 15.0).round().max(1.0) as usize;
                (uavs, 14 * uavs)
            }
        }
    }

    /// Fraction of each coherence interval spent on SRS. Orthogonal
    /// sequences share the one SRS symbol.
    pub fn srs_overhead(&self) -> f64 {
        self.tau_p.unwrap_or(1) as f64 / self.tau_c as f64
    }
}

/// One curve family: small-scale-averaged SINR distributions of the UAVs
/// under the two channel-estimation bounds.
#[derive(Debug, Clone)]
pub struct CfCurve {
    pub srs: CdfSummary,
    pub perfect: CdfSummary,
}

#[derive(Debug, Clone)]
pub struct CfStudyResult {
    pub mix: CfMix,
    pub cellular: CfCurve,
    pub cf_mf: CfCurve,
    pub cf_mmse: CfCurve,
    /// SRS overhead fraction to discount from spectral efficiency.
    pub srs_overhead: f64,
}

const STREAM_PLACE: u64 = 0x51;
const STREAM_LSCALE: u64 = 0x52;
const STREAM_FADING: u64 = 0x53;
const STREAM_SRS: u64 = 0x54;

fn stream_rng(dseed: u64, stream: u64, a: u64, b: u64) -> rand_chacha::ChaCha8Rng {
    derive_rng(
        dseed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        ((a + 1) << 32) | b,
    )
}

struct DropAccum {
    // per scheme and estimation mode, one small-scale-averaged SINR (dB)
    // per reported user
    cellular: [Vec<f64>; 2],
    mf: [Vec<f64>; 2],
    mmse: [Vec<f64>; 2],
}

fn eval_cf_drop(cfg: &CfStudyConfig, dseed: u64) -> Result<DropAccum, SimError> {
    let (n_uav, n_gue) = cfg.user_counts();
    let k = n_uav + n_gue;
    let m = cfg.n_bs;
    let layout = build_random_layout(cfg.isd_m, cfg.env, m, false, dseed)?;
    let cells = layout.cells();

    let mut rng = stream_rng(dseed, STREAM_PLACE, 0, 0);
    let mut users: Vec<(Position, bool)> = Vec::with_capacity(k);
    for _ in 0..n_uav {
        let [x, y] = layout.sample_position(&mut rng);
        let h = if cfg.uav_height_max_m > cfg.uav_height_min_m {
            rng.gen_range(cfg.uav_height_min_m..cfg.uav_height_max_m)
        } else {
            cfg.uav_height_min_m
        };
        users.push((Position::new(x, y, h), true));
    }
    for _ in 0..n_gue {
        let [x, y] = layout.sample_position(&mut rng);
        users.push((Position::new(x, y, GUE_HEIGHT_M), false));
    }

    // large-scale gains (0 dBi ends on both sides), LoS flags
    let mut gain_db = DMatrix::zeros(m, k);
    let mut los = vec![vec![false; k]; m];
    for b in 0..m {
        for (u, &(pos, is_uav)) in users.iter().enumerate() {
            let (d2d, d3d, _) = layout.wrap_distance(cells[b].position, pos);
            let kind = if is_uav { LinkKind::BsUav } else { LinkKind::BsGue };
            let mut r = stream_rng(dseed, STREAM_LSCALE, b as u64, u as u64);
            let (l, pl, sh) =
                sample_large_scale(kind, d2d, d3d.max(1.0), pos.z, cfg.fc_hz, cfg.env, &mut r)?;
            gain_db[(b, u)] = -(pl + sh);
            los[b][u] = l;
        }
    }

    // fractional power control against the strongest BS
    let mut serving = vec![0usize; k];
    let mut power_lin = vec![0.0; k];
    for u in 0..k {
        let mut best = 0usize;
        for b in 1..m {
            if gain_db[(b, u)] > gain_db[(best, u)] {
                best = b;
            }
        }
        serving[u] = best;
        let xi = -gain_db[(best, u)];
        power_lin[u] = db_to_lin(tx_power_per_prb_dbm(&cfg.power, xi));
    }
    let noise_var = db_to_lin(noise_power_dbm(PRB_BANDWIDTH_HZ, cfg.bs_noise_figure_db));

    let k_lin = db_to_lin(cfg.k_factor_db);
    let det = (k_lin / (k_lin + 1.0)).sqrt();
    let dif = (1.0 / (k_lin + 1.0)).sqrt();

    // accumulate linear SINR sums over realizations: [scheme][est][user]
    let mut acc = [[vec![0.0f64; k], vec![0.0f64; k]], [
        vec![0.0f64; k],
        vec![0.0f64; k],
    ], [vec![0.0f64; k], vec![0.0f64; k]]];

    let pilots = match cfg.tau_p {
        None => PilotConfig::new(k, (0..k).collect())?,
        Some(1) => PilotConfig::shared(k),
        Some(t) => PilotConfig::assign_greedy(t, &gain_db)?,
    };
    // the SRS symbol sounds the whole band at full terminal power; the
    // despread observation for one PRB-wide estimate carries the full-band
    // energy against one PRB's noise
    let pilot_power: Vec<f64> = power_lin
        .iter()
        .map(|p| p * cfg.power.n_prb as f64)
        .collect();
    let pilot_noise = db_to_lin(noise_power_dbm(PRB_BANDWIDTH_HZ, cfg.bs_noise_figure_db));
    for r in 0..cfg.n_realizations {
        let mut frng = stream_rng(dseed, STREAM_FADING, r as u64, 0);
        let g = DMatrix::from_fn(m, k, |b, u| {
            let amp = db_to_lin(gain_db[(b, u)]).sqrt();
            if los[b][u] {
                let phase = frng.gen_range(0.0..std::f64::consts::TAU);
                let spec = Complex64::from_polar(det, phase);
                (spec + cn01(&mut frng) * dif) * amp
            } else {
                cn01(&mut frng) * amp
            }
        });
        let true_ch = CollectiveChannel::new(g, gain_db.clone())?;

        for (e, est_mode) in [false, true].into_iter().enumerate() {
            let hat;
            let g_hat = if est_mode {
                &true_ch
            } else {
                let mut srng = stream_rng(dseed, STREAM_SRS, r as u64, 0);
                hat = cf_estimate(&true_ch, &pilots, &pilot_power, pilot_noise, &mut srng)?;
                &hat
            };
            let mf = mf_combiners(g_hat)?;
            let mmse = mmse_combiners(g_hat, &power_lin, noise_var)?;
            let s_mf = cf_uplink_sinr(&true_ch, &mf, &power_lin, noise_var)?;
            let s_mmse = cf_uplink_sinr(&true_ch, &mmse, &power_lin, noise_var)?;
            for u in 0..k {
                // cellular baseline: combiner support restricted to the
                // serving BS (a scalar, so estimation cannot rotate it)
                let b0 = serving[u];
                let mut interf = 0.0;
                for j in 0..k {
                    if j != u {
                        interf += power_lin[j] * true_ch.g[(b0, j)].norm_sqr();
                    }
                }
                let cell = power_lin[u] * true_ch.g[(b0, u)].norm_sqr() / (interf + noise_var);
                acc[0][e][u] += cell;
                acc[1][e][u] += s_mf[u];
                acc[2][e][u] += s_mmse[u];
            }
        }
    }

    let n = cfg.n_realizations as f64;
    let to_db = |sums: &[f64]| -> Vec<f64> {
        (0..k)
            .filter(|&u| users[u].1) // report UAVs
            .map(|u| 10.0 * (sums[u] / n).log10())
            .collect()
    };
    Ok(DropAccum {
        cellular: [to_db(&acc[0][0]), to_db(&acc[0][1])],
        mf: [to_db(&acc[1][0]), to_db(&acc[1][1])],
        mmse: [to_db(&acc[2][0]), to_db(&acc[2][1])],
    })
}

/// Runs the uplink combining study: three schemes (cellular, cell-free MF,
/// cell-free MMSE), each bounded by single-symbol-SRS and perfect estimation.
pub fn run_cf_study(cfg: &CfStudyConfig) -> Result<CfStudyResult, SimError> {
    if cfg.n_drops == 0 || cfg.n_realizations == 0 {
        return Err(SimError::Config("n_drops and n_realizations must be >= 1".into()));
    }
    let drops: Vec<DropAccum> = (0..cfg.n_drops as u64)
        .into_par_iter()
        .map(|d| eval_cf_drop(cfg, drop_seed(cfg.seed, d)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut result = CfStudyResult {
        mix: cfg.mix,
        cellular: CfCurve { srs: CdfSummary::new(), perfect: CdfSummary::new() },
        cf_mf: CfCurve { srs: CdfSummary::new(), perfect: CdfSummary::new() },
        cf_mmse: CfCurve { srs: CdfSummary::new(), perfect: CdfSummary::new() },
        srs_overhead: cfg.srs_overhead(),
    };
    for d in &drops {
        result.cellular.srs.extend(&d.cellular[0]);
        result.cellular.perfect.extend(&d.cellular[1]);
        result.cf_mf.srs.extend(&d.mf[0]);
        result.cf_mf.perfect.extend(&d.mf[1]);
        result.cf_mmse.srs.extend(&d.mmse[0]);
        result.cf_mmse.perfect.extend(&d.mmse[1]);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::linklevel::{assemble_sinr, lin_to_db, LinkDirection};

    fn rand_channel(m: usize, k: usize, seed: u64) -> CollectiveChannel {
        let mut rng = derive_rng(seed, 0xCF);
        let g = DMatrix::from_fn(m, k, |_, _| cn01(&mut rng));
        CollectiveChannel::new(g, DMatrix::zeros(m, k)).unwrap()
    }

    /// Independent SINR evaluation with explicit loops, no shared code.
    fn sinr_oracle(
        g: &DMatrix<Complex64>,
        v: &DVector<Complex64>,
        u: usize,
        p: &[f64],
        noise: f64,
    ) -> f64 {
        let m = g.nrows();
        let mut num = Complex64::new(0.0, 0.0);
        for i in 0..m {
            num += v[i].conj() * g[(i, u)];
        }
        let mut den = 0.0;
        for j in 0..g.ncols() {
            if j == u {
                continue;
            }
            let mut c = Complex64::new(0.0, 0.0);
            for i in 0..m {
                c += v[i].conj() * g[(i, j)];
            }
            den += p[j] * c.norm_sqr();
        }
        let vn: f64 = (0..m).map(|i| v[i].norm_sqr()).sum();
        p[u] * num.norm_sqr() / (den + noise * vn)
    }

    #[test]
    fn sinr_matches_brute_force_small() {
        for (m, k, seed) in [(1, 1, 1u64), (2, 2, 2), (3, 3, 3), (3, 2, 4), (2, 3, 5)] {
            let ch = rand_channel(m, k, seed);
            let p: Vec<f64> = (0..k).map(|j| 0.5 + j as f64).collect();
            let noise = 0.3;
            for set in [
                mf_combiners(&ch).unwrap(),
                mmse_combiners(&ch, &p, noise).unwrap(),
            ] {
                let got = cf_uplink_sinr(&ch, &set, &p, noise).unwrap();
                for u in 0..k {
                    let want = sinr_oracle(&ch.g, &set.v[u], u, &p, noise);
                    assert!(
                        (got[u] - want).abs() <= 1e-9 * want.max(1.0),
                        "user {u}: {} vs {want}",
                        got[u]
                    );
                }
            }
        }
    }

    #[test]
    fn mmse_never_below_mf() {
        for seed in 0..20 {
            let ch = rand_channel(8, 5, 100 + seed);
            let p = vec![1.0; 5];
            let noise = 0.05;
            let mf = cf_uplink_sinr(&ch, &mf_combiners(&ch).unwrap(), &p, noise).unwrap();
            let mm =
                cf_uplink_sinr(&ch, &mmse_combiners(&ch, &p, noise).unwrap(), &p, noise).unwrap();
            for u in 0..5 {
                assert!(mm[u] >= mf[u] - 1e-12, "seed {seed} user {u}");
            }
        }
    }

    #[test]
    fn mmse_matches_grid_search_two_users() {
        // 2 BSs, 2 users: exhaustive search over v = [cos a, sin a e^{j b}]
        let ch = rand_channel(2, 2, 42);
        let p = [1.0, 2.5];
        let noise = 0.2;
        let set = mmse_combiners(&ch, &p, noise).unwrap();
        let got = cf_uplink_sinr(&ch, &set, &p, noise).unwrap();
        for u in 0..2 {
            let mut best = 0.0f64;
            let n = 600;
            for ia in 0..=n {
                let a = std::f64::consts::FRAC_PI_2 * ia as f64 / n as f64;
                for ib in 0..n {
                    let b = std::f64::consts::TAU * ib as f64 / n as f64;
                    let v = DVector::from_vec(vec![
                        Complex64::new(a.cos(), 0.0),
                        Complex64::from_polar(a.sin(), b),
                    ]);
                    best = best.max(sinr_oracle(&ch.g, &v, u, &p, noise));
                }
            }
            let diff_db = lin_to_db(best) - lin_to_db(got[u]);
            assert!(diff_db.abs() < 0.05, "user {u}: grid {best} vs mmse {}", got[u]);
        }
    }

    #[test]
    fn noise_dominated_mmse_aligns_with_mf() {
        let ch = rand_channel(6, 4, 7);
        let p = vec![1.0; 4];
        let noise = 1e9;
        let mf = mf_combiners(&ch).unwrap();
        let mm = mmse_combiners(&ch, &p, noise).unwrap();
        for u in 0..4 {
            let cosang = mf.v[u].dotc(&mm.v[u]).norm().min(1.0);
            assert!(cosang.acos() < 1e-3, "user {u}: angle {}", cosang.acos());
        }
    }

    #[test]
    fn mmse_exclusion_form_is_collinear() {
        // the spec'd sum over j != k, computed literally, points the same way
        let ch = rand_channel(5, 4, 9);
        let p = [1.0, 2.0, 0.5, 3.0];
        let noise = 0.1;
        let set = mmse_combiners(&ch, &p, noise).unwrap();
        for u in 0..4 {
            let m = 5;
            let mut a = DMatrix::<Complex64>::identity(m, m) * Complex64::new(noise, 0.0);
            for j in 0..4 {
                if j == u {
                    continue;
                }
                let gj = ch.g.column(j);
                a.ger(Complex64::new(p[j], 0.0), &gj, &gj.conjugate(), Complex64::new(1.0, 0.0));
            }
            let w = a.cholesky().unwrap().solve(&ch.g.column(u).into_owned());
            let wn = &w / Complex64::new(w.norm(), 0.0);
            assert_relative_eq!(wn.dotc(&set.v[u]).norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn perfect_csi_low_noise_mmse_nulls_interference() {
        let ch = rand_channel(8, 6, 11);
        let p = vec![1.0; 6];
        let noise = 1e-12;
        let set = mmse_combiners(&ch, &p, noise).unwrap();
        let sinr = cf_uplink_sinr(&ch, &set, &p, noise).unwrap();
        for u in 0..6 {
            assert!(lin_to_db(sinr[u]) > 60.0, "user {u}: {} dB", lin_to_db(sinr[u]));
        }
    }

    #[test]
    fn single_user_mf_equals_mmse() {
        let ch = rand_channel(7, 1, 13);
        let mf = mf_combiners(&ch).unwrap();
        let mm = mmse_combiners(&ch, &[2.0], 0.4).unwrap();
        assert_relative_eq!(mf.v[0].dotc(&mm.v[0]).norm(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn single_bs_mf_equals_mmse_sinr() {
        let ch = rand_channel(1, 4, 17);
        let p = vec![1.0; 4];
        let noise = 0.2;
        let mf = cf_uplink_sinr(&ch, &mf_combiners(&ch).unwrap(), &p, noise).unwrap();
        let mm = cf_uplink_sinr(&ch, &mmse_combiners(&ch, &p, noise).unwrap(), &p, noise).unwrap();
        for u in 0..4 {
            assert_relative_eq!(mf[u], mm[u], epsilon = 1e-12);
        }
    }

    #[test]
    fn mf_scale_invariant_and_zero_column_rejected() {
        let ch = rand_channel(4, 2, 19);
        let mut scaled = ch.clone();
        scaled.g *= Complex64::new(7.5, 0.0);
        let a = mf_combiners(&ch).unwrap();
        let b = mf_combiners(&scaled).unwrap();
        for u in 0..2 {
            assert_relative_eq!(a.v[u].dotc(&b.v[u]).norm(), 1.0, epsilon = 1e-12);
        }
        let mut z = ch.clone();
        z.g.column_mut(1).fill(Complex64::new(0.0, 0.0));
        assert!(mf_combiners(&z).is_err());
    }

    #[test]
    fn zero_noise_mmse_rejected() {
        let ch = rand_channel(3, 2, 21);
        assert!(mmse_combiners(&ch, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn estimate_perfect_in_clean_orthogonal_limit() {
        // distinct pilots and vanishing noise recover the true channels
        let ch = rand_channel(4, 3, 23);
        let pilots = PilotConfig::new(3, vec![0, 1, 2]).unwrap();
        let p = vec![1.0; 3];
        let mut rng = derive_rng(23, 0xE);
        let est = cf_estimate(&ch, &pilots, &p, 1e-14, &mut rng).unwrap();
        for u in 0..3 {
            for b in 0..4 {
                assert_relative_eq!(est.g[(b, u)].re, ch.g[(b, u)].re, epsilon = 1e-5);
                assert_relative_eq!(est.g[(b, u)].im, ch.g[(b, u)].im, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn estimate_mse_matches_two_user_closed_form() {
        // 1 BS, 2 users sharing a pilot, equal unit gains and powers:
        // MSE = beta - p beta^2 / (2 p beta + sigma^2)
        let p = 0.8;
        let noise = 0.3;
        let beta = 1.0;
        let want = beta - p * beta * beta / (2.0 * p * beta + noise);
        let pilots = PilotConfig::shared(2);
        let mut rng = derive_rng(29, 0xF);
        let n_trials = 200_000;
        let mut mse = 0.0;
        for _ in 0..n_trials {
            let g = DMatrix::from_fn(1, 2, |_, _| cn01(&mut rng));
            let ch = CollectiveChannel::new(g, DMatrix::zeros(1, 2)).unwrap();
            let est = cf_estimate(&ch, &pilots, &[p, p], noise, &mut rng).unwrap();
            mse += (est.g[(0, 0)] - ch.g[(0, 0)]).norm_sqr();
        }
        mse /= n_trials as f64;
        assert_relative_eq!(mse, want, max_relative = 0.02);
    }

    #[test]
    fn contaminated_estimates_are_collinear_per_bs() {
        // with one shared pilot, co-pilot estimates at a BS are scalings of
        // the same observation
        let ch = rand_channel(3, 4, 31);
        let pilots = PilotConfig::shared(4);
        let p = vec![1.0; 4];
        let mut rng = derive_rng(31, 0x10);
        let est = cf_estimate(&ch, &pilots, &p, 0.2, &mut rng).unwrap();
        for b in 0..3 {
            let r0 = est.g[(b, 0)];
            for u in 1..4 {
                let ratio = est.g[(b, u)] / r0;
                assert!(ratio.im.abs() < 1e-12 && ratio.re > 0.0);
            }
        }
    }

    #[test]
    fn cellular_restriction_matches_linklevel_sinr() {
        let ch = rand_channel(4, 3, 37);
        let p = [1.0, 0.5, 2.0];
        let noise = 0.7;
        let b0 = 2usize;
        // single-BS combiner as a basis-vector CombinerSet
        let mut v = DVector::zeros(4);
        v[b0] = Complex64::new(1.0, 0.0);
        let set = CombinerSet { kind: CombinerKind::Mf, v: vec![v; 3] };
        let got = cf_uplink_sinr(&ch, &set, &p, noise).unwrap();
        for u in 0..3 {
            let sig = lin_to_db(p[u] * ch.g[(b0, u)].norm_sqr());
            let interf: Vec<f64> = (0..3)
                .filter(|&j| j != u)
                .map(|j| lin_to_db(p[j] * ch.g[(b0, j)].norm_sqr()))
                .collect();
            let want = assemble_sinr(LinkDirection::Ul, sig, &interf, lin_to_db(noise)).sinr_db;
            assert_relative_eq!(lin_to_db(got[u]), want, epsilon = 1e-9);
        }
    }

    #[test]
    fn greedy_pilots_split_strong_users() {
        let mut ls = DMatrix::zeros(2, 4);
        // users 0 and 1 share BS 0, users 2 and 3 share BS 1
        ls[(0, 0)] = -60.0;
        ls[(0, 1)] = -62.0;
        ls[(1, 2)] = -61.0;
        ls[(1, 3)] = -63.0;
        ls[(1, 0)] = -110.0;
        ls[(1, 1)] = -110.0;
        ls[(0, 2)] = -110.0;
        ls[(0, 3)] = -110.0;
        let pc = PilotConfig::assign_greedy(2, &ls).unwrap();
        assert_ne!(pc.assignment[0], pc.assignment[1]);
        assert_ne!(pc.assignment[2], pc.assignment[3]);
    }

    #[test]
    fn study_smoke_mmse_beats_cellular() {
        let mut cfg = CfStudyConfig::umi_default(CfMix::UavOnly);
        cfg.n_bs = 12;
        cfg.n_drops = 6;
        cfg.n_realizations = 12;
        let r = run_cf_study(&cfg).unwrap();
        let gain =
            r.cf_mmse.perfect.median().unwrap() - r.cellular.perfect.median().unwrap();
        assert!(gain > 10.0, "median MMSE gain {gain} dB");
        assert!(r.cf_mf.srs.len() > 0 && r.srs_overhead > 0.0);
    }

    #[test]
    fn study_deterministic() {
        let mut cfg = CfStudyConfig::umi_default(CfMix::Mixed7Pct);
        cfg.n_bs = 9;
        cfg.n_drops = 3;
        cfg.n_realizations = 5;
        let a = run_cf_study(&cfg).unwrap();
        let b = run_cf_study(&cfg).unwrap();
        assert_eq!(a.cf_mmse.srs.samples(), b.cf_mmse.srs.samples());
        assert_eq!(a.cellular.perfect.samples(), b.cellular.perfect.samples());
    }
}
