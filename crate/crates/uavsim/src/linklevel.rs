//! RSRP computation, strongest-cell association, per-PRB SINR assembly, and
//! rate mapping for conventional cellular operation.

use rand::Rng;
use serde::Serialize;

use crate::channel::{
    composite_bs_gain_dbi, direction_to_local, element_gain_dbi, sample_large_scale,
    AntennaConfig, LinkKind,
};
use crate::error::SimError;
use crate::scenario::{Cell, Environment, NetworkLayout, Position};

pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;
/// One NR numerology-0 PRB: 12 subcarriers x 15 kHz.
pub const PRB_BANDWIDTH_HZ: f64 = 180e3;

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Thermal noise power over a bandwidth, dBm.
pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LinkDirection {
    Ul,
    Dl,
    U2u,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SinrSample {
    pub direction: LinkDirection,
    pub signal_dbm: f64,
    pub interference_dbm: f64,
    pub noise_dbm: f64,
    pub sinr_db: f64,
}

/// Link-budget RSRP: tx power minus losses plus gains, dBm.
pub fn rsrp_dbm(
    tx_power_dbm: f64,
    pathloss_db: f64,
    shadowing_db: f64,
    tx_gain_dbi: f64,
    rx_gain_dbi: f64,
) -> f64 {
    tx_power_dbm - pathloss_db - shadowing_db + tx_gain_dbi + rx_gain_dbi
}

#[derive(Debug, Clone)]
pub struct RsrpReport {
    pub ue_id: usize,
    pub per_cell_rsrp_dbm: Vec<f64>,
    pub serving_cell: usize,
}

/// Strongest-RSRP association; ties break toward the lowest cell index.
pub fn associate(ue_id: usize, per_cell_rsrp_dbm: Vec<f64>) -> Result<RsrpReport, SimError> {
    if per_cell_rsrp_dbm.is_empty() {
        return Err(SimError::Config("associate: empty cell list".into()));
    }
    let mut best = 0;
    for (i, &r) in per_cell_rsrp_dbm.iter().enumerate() {
        if r > per_cell_rsrp_dbm[best] {
            best = i;
        }
    }
    Ok(RsrpReport {
        ue_id,
        per_cell_rsrp_dbm,
        serving_cell: best,
    })
}

/// Combines one serving signal with a list of interferers and noise into a
/// per-PRB SINR sample. Interference is summed in the linear domain.
pub fn assemble_sinr(
    direction: LinkDirection,
    signal_dbm: f64,
    interferers_dbm: &[f64],
    noise_dbm: f64,
) -> SinrSample {
    let interference_lin: f64 = interferers_dbm.iter().map(|&i| db_to_lin(i)).sum();
    let interference_dbm = if interference_lin > 0.0 {
        lin_to_db(interference_lin)
    } else {
        f64::NEG_INFINITY
    };
    let denom = interference_lin + db_to_lin(noise_dbm);
    SinrSample {
        direction,
        signal_dbm,
        interference_dbm,
        noise_dbm,
        sinr_db: signal_dbm - lin_to_db(denom),
    }
}

/// SNR from RSRP over a bandwidth: rsrp - (-174 + 10 log10(BW) + NF).
pub fn snr_from_rsrp(rsrp_dbm: f64, bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    rsrp_dbm - noise_power_dbm(bandwidth_hz, noise_figure_db)
}

/// Large-scale state of one BS-to-user link, including the local angles the
/// BS array sees toward the user's minimum-image position.
#[derive(Debug, Clone, Copy)]
pub struct LinkCoupling {
    pub los: bool,
    pub pathloss_db: f64,
    pub shadowing_db: f64,
    pub d2d_m: f64,
    pub d3d_m: f64,
    /// Zenith/azimuth at the BS array toward the user (degrees, array frame).
    pub theta_bs_deg: f64,
    pub phi_bs_deg: f64,
    /// Global direction components from the user toward the BS image.
    pub user_to_bs: [f64; 3],
}

impl LinkCoupling {
    /// Overall large-scale loss (Eq.-style xi): pathloss plus shadowing,
    /// antenna gains excluded.
    pub fn xi_db(&self) -> f64 {
        self.pathloss_db + self.shadowing_db
    }

    pub fn element_gain_dbi(&self, cfg: &AntennaConfig) -> f64 {
        element_gain_dbi(self.theta_bs_deg, self.phi_bs_deg, cfg)
    }

    /// Gain of the fixed downtilted beam (element plus array factor).
    pub fn fixed_beam_gain_dbi(&self, cfg: &AntennaConfig) -> f64 {
        composite_bs_gain_dbi(cfg, self.theta_bs_deg, self.phi_bs_deg)
    }
}

/// Samples the large-scale link between a sectorized BS and a user, using
/// minimum-image geometry. The RNG drives the LoS draw and shadowing.
pub fn bs_user_coupling(
    layout: &NetworkLayout,
    cell: &Cell,
    user: Position,
    kind: LinkKind,
    fc_hz: f64,
    env: Environment,
    rng: &mut impl Rng,
) -> Result<LinkCoupling, SimError> {
    let (d2d, d3d, bearing_deg) = layout.wrap_distance(cell.position, user);
    let b = bearing_deg.to_radians();
    let dx = d2d * b.cos();
    let dy = d2d * b.sin();
    let dz = user.z - cell.position.z;
    let (theta, phi) = direction_to_local(dx, dy, dz, cell.azimuth_deg);
    let (los, pl, sh) = sample_large_scale(kind, d2d, d3d, user.z, fc_hz, env, rng)?;
    Ok(LinkCoupling {
        los,
        pathloss_db: pl,
        shadowing_db: sh,
        d2d_m: d2d,
        d3d_m: d3d.max(1.0),
        theta_bs_deg: theta,
        phi_bs_deg: phi,
        user_to_bs: [-dx, -dy, -dz],
    })
}

/// Shannon rate with a spectral-efficiency cap, bit/s.
pub fn rate_bps(sinr_db: f64, bandwidth_hz: f64, se_cap_bps_hz: f64) -> f64 {
    let se = (1.0 + db_to_lin(sinr_db)).log2().min(se_cap_bps_hz);
    bandwidth_hz * se
}
