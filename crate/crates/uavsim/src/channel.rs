//! Large-scale channel state (LoS probability, pathloss, shadowing) per
//! TR 36.777 Table B-1 (UMa-AV / UMi-AV) and TR 38.901 section 7.4, plus
//! small-scale Ricean/Rayleigh fading and 38.901-style element and array
//! radiation patterns.
//!
//! Cross-polarized panels are modeled as a single-polarization array with
//! the same element count per polarization; the 3 dB power split between
//! polarizations cancels in every SINR ratio reported here.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::SimError;
use crate::scenario::Environment;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default Ricean K-factor for LoS links, dB.
pub const DEFAULT_K_FACTOR_DB: f64 = 15.0;

/// Which endpoints a link connects; selects the propagation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    BsUav,
    BsGue,
    UavUav,
    /// GUE transmitter to UAV receiver (cross-tier interference).
    GueUav,
}

/// Per-link large-scale state plus the small-scale vector.
#[derive(Debug, Clone)]
pub struct LinkState {
    pub los: bool,
    pub pathloss_db: f64,
    pub shadowing_db: f64,
    pub k_factor_db: Option<f64>,
    pub small_scale: DVector<Complex64>,
}

/// Free-space pathloss, dB (Friis).
pub fn fspl_db(d_m: f64, fc_hz: f64) -> f64 {
    20.0 * d_m.log10() + 20.0 * fc_hz.log10() - 147.55
}

fn fc_ghz(fc_hz: f64) -> f64 {
    fc_hz / 1e9
}

/// Aerial height range where TR 36.777 applies its own models.
const AERIAL_H_MIN: f64 = 22.5;
const UMA_AV_ALWAYS_LOS_H: f64 = 100.0;
const UMI_AV_ALWAYS_LOS_H: f64 = 300.0;

fn los_prob_dual_slope(d2d: f64, d1: f64, p1: f64) -> f64 {
    if d2d <= d1 {
        1.0
    } else {
        d1 / d2d + (-d2d / p1).exp() * (1.0 - d1 / d2d)
    }
}

fn los_prob_uma_av(d2d: f64, h: f64) -> f64 {
    if h > UMA_AV_ALWAYS_LOS_H {
        return 1.0;
    }
    let p1 = 4300.0 * h.log10() - 3800.0;
    let d1 = (460.0 * h.log10() - 700.0).max(18.0);
    los_prob_dual_slope(d2d, d1, p1)
}

fn los_prob_umi_av(d2d: f64, h: f64) -> f64 {
    if h > UMI_AV_ALWAYS_LOS_H {
        return 1.0;
    }
    let p1 = 233.98 * h.log10() - 0.95;
    let d1 = (294.05 * h.log10() - 432.94).max(18.0);
    los_prob_dual_slope(d2d, d1, p1)
}

fn los_prob_uma_ground(d2d: f64, h: f64) -> f64 {
    if d2d <= 18.0 {
        return 1.0;
    }
    let base = 18.0 / d2d + (-d2d / 63.0).exp() * (1.0 - 18.0 / d2d);
    let c = if h <= 13.0 {
        0.0
    } else {
        (((h - 13.0) / 10.0).powf(1.5)).min(1.0)
    };
    (base * (1.0 + c * 1.25 * (d2d / 100.0).powi(3) * (-d2d / 150.0).exp())).min(1.0)
}

fn los_prob_umi_ground(d2d: f64) -> f64 {
    if d2d <= 18.0 {
        1.0
    } else {
        18.0 / d2d + (-d2d / 36.0).exp() * (1.0 - 18.0 / d2d)
    }
}

/// LoS probability for a link. `h_ut` is the user height (for UAV-UAV links,
/// the lower endpoint's height).
pub fn los_probability(
    kind: LinkKind,
    d2d: f64,
    h_ut: f64,
    env: Environment,
) -> Result<f64, SimError> {
    if d2d < 0.0 || h_ut < 0.0 {
        return Err(SimError::Domain(format!(
            "los_probability needs d2d >= 0, h_ut >= 0 (got {d2d}, {h_ut})"
        )));
    }
    let p = match (kind, env) {
        (LinkKind::BsGue, Environment::UMa) => los_prob_uma_ground(d2d, h_ut),
        (LinkKind::BsGue, Environment::UMi) => los_prob_umi_ground(d2d),
        (LinkKind::BsUav | LinkKind::GueUav, Environment::UMa) => {
            if h_ut <= AERIAL_H_MIN {
                los_prob_uma_ground(d2d, h_ut)
            } else {
                los_prob_uma_av(d2d, h_ut)
            }
        }
        (LinkKind::BsUav | LinkKind::GueUav, Environment::UMi) => {
            if h_ut <= AERIAL_H_MIN {
                los_prob_umi_ground(d2d)
            } else {
                los_prob_umi_av(d2d, h_ut)
            }
        }
        // Air-to-air: the macro aerial profile at the lower endpoint's
        // height, clamped to 1 (these links are mostly LoS).
        (LinkKind::UavUav, _) => {
            if h_ut <= AERIAL_H_MIN {
                los_prob_uma_ground(d2d, h_ut)
            } else {
                los_prob_uma_av(d2d, h_ut)
            }
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

fn breakpoint_distance(h_bs: f64, h_ut: f64, fc_hz: f64) -> f64 {
    // effective environment height 1 m
    4.0 * (h_bs - 1.0).max(0.0) * (h_ut - 1.0).max(0.0) * fc_hz / SPEED_OF_LIGHT
}

fn pl_uma_ground(d3d: f64, h_ut: f64, fc_hz: f64, los: bool) -> f64 {
    let h_bs = 25.0;
    let fc = fc_ghz(fc_hz);
    let dh = h_bs - h_ut;
    let d2d = (d3d * d3d - dh * dh).max(0.0).sqrt();
    let dbp = breakpoint_distance(h_bs, h_ut, fc_hz);
    let pl_los = if d2d <= dbp || dbp <= 0.0 {
        28.0 + 22.0 * d3d.log10() + 20.0 * fc.log10()
    } else {
        28.0 + 40.0 * d3d.log10() + 20.0 * fc.log10()
            - 9.0 * (dbp * dbp + dh * dh).log10()
    };
    if los {
        pl_los
    } else {
        let pl_nlos = 13.54 + 39.08 * d3d.log10() + 20.0 * fc.log10() - 0.6 * (h_ut - 1.5);
        pl_los.max(pl_nlos)
    }
}

fn pl_umi_ground(d3d: f64, h_ut: f64, fc_hz: f64, los: bool) -> f64 {
    let h_bs = 10.0;
    let fc = fc_ghz(fc_hz);
    let dh = h_bs - h_ut;
    let d2d = (d3d * d3d - dh * dh).max(0.0).sqrt();
    let dbp = breakpoint_distance(h_bs, h_ut, fc_hz);
    let pl_los = if d2d <= dbp || dbp <= 0.0 {
        32.4 + 21.0 * d3d.log10() + 20.0 * fc.log10()
    } else {
        32.4 + 40.0 * d3d.log10() + 20.0 * fc.log10()
            - 9.5 * (dbp * dbp + dh * dh).log10()
    };
    if los {
        pl_los
    } else {
        let pl_nlos = 35.3 * d3d.log10() + 22.4 + 21.3 * fc.log10() - 0.3 * (h_ut - 1.5);
        pl_los.max(pl_nlos)
    }
}

fn pl_uma_av(d3d: f64, h_ut: f64, fc_hz: f64, los: bool) -> f64 {
    let fc = fc_ghz(fc_hz);
    let pl_los = 28.0 + 22.0 * d3d.log10() + 20.0 * fc.log10();
    if los {
        pl_los
    } else {
        let pl_nlos = -17.5
            + (46.0 - 7.0 * h_ut.log10()) * d3d.log10()
            + 20.0 * (40.0 * std::f64::consts::PI * fc / 3.0).log10();
        pl_los.max(pl_nlos)
    }
}

fn pl_umi_av(d3d: f64, h_ut: f64, fc_hz: f64, los: bool) -> f64 {
    let fc = fc_ghz(fc_hz);
    let pl_los = 30.9 + (22.25 - 0.5 * h_ut.log10()) * d3d.log10() + 20.0 * fc.log10();
    if los {
        pl_los
    } else {
        let pl_nlos = 32.4 + (43.2 - 7.6 * h_ut.log10()) * d3d.log10() + 20.0 * fc.log10();
        pl_los.max(pl_nlos)
    }
}

/// Pathloss in dB, floored at free space. `h_ut` as in [`los_probability`].
pub fn pathloss_db(
    kind: LinkKind,
    d3d: f64,
    h_ut: f64,
    fc_hz: f64,
    los: bool,
    env: Environment,
) -> Result<f64, SimError> {
    if d3d <= 0.0 {
        return Err(SimError::Domain(format!("d3d must be > 0, got {d3d}")));
    }
    let pl = match (kind, env) {
        (LinkKind::BsGue, Environment::UMa) => pl_uma_ground(d3d, h_ut, fc_hz, los),
        (LinkKind::BsGue, Environment::UMi) => pl_umi_ground(d3d, h_ut, fc_hz, los),
        (LinkKind::BsUav | LinkKind::GueUav, Environment::UMa) => {
            if h_ut <= AERIAL_H_MIN {
                pl_uma_ground(d3d, h_ut, fc_hz, los)
            } else {
                pl_uma_av(d3d, h_ut, fc_hz, los)
            }
        }
        (LinkKind::BsUav | LinkKind::GueUav, Environment::UMi) => {
            if h_ut <= AERIAL_H_MIN {
                pl_umi_ground(d3d, h_ut, fc_hz, los)
            } else {
                pl_umi_av(d3d, h_ut, fc_hz, los)
            }
        }
        (LinkKind::UavUav, _) => {
            if los {
                fspl_db(d3d, fc_hz)
            } else {
                pl_uma_av(d3d, h_ut.max(AERIAL_H_MIN + 0.1), fc_hz, false)
            }
        }
    };
    Ok(pl.max(fspl_db(d3d, fc_hz)))
}

/// Log-normal shadowing standard deviation, dB, per TR tables.
pub fn shadowing_sigma_db(kind: LinkKind, h_ut: f64, los: bool, env: Environment) -> f64 {
    match (kind, env) {
        (LinkKind::BsGue, Environment::UMa) => {
            if los {
                4.0
            } else {
                6.0
            }
        }
        (LinkKind::BsGue, Environment::UMi) => {
            if los {
                4.0
            } else {
                7.82
            }
        }
        (LinkKind::BsUav | LinkKind::GueUav | LinkKind::UavUav, Environment::UMa) => {
            if h_ut <= AERIAL_H_MIN {
                if los {
                    4.0
                } else {
                    6.0
                }
            } else if los {
                4.64 * (-0.0066 * h_ut).exp()
            } else {
                6.0
            }
        }
        (LinkKind::BsUav | LinkKind::GueUav | LinkKind::UavUav, Environment::UMi) => {
            if h_ut <= AERIAL_H_MIN {
                if los {
                    4.0
                } else {
                    7.82
                }
            } else if los {
                (5.0 * (-0.01 * h_ut).exp()).max(2.0)
            } else {
                8.0
            }
        }
    }
}

/// Samples the large-scale part of a link: LoS flag, pathloss, shadowing.
pub fn sample_large_scale(
    kind: LinkKind,
    d2d: f64,
    d3d: f64,
    h_ut: f64,
    fc_hz: f64,
    env: Environment,
    rng: &mut impl Rng,
) -> Result<(bool, f64, f64), SimError> {
    let p = los_probability(kind, d2d, h_ut, env)?;
    let los = rng.gen::<f64>() < p;
    let pl = pathloss_db(kind, d3d.max(1.0), h_ut, fc_hz, los, env)?;
    let sigma = shadowing_sigma_db(kind, h_ut, los, env);
    let sh: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
    Ok((los, pl, sh))
}

// ---------------------------------------------------------------------------
// Antenna patterns and array responses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    Single,
    Cross,
}

#[derive(Debug, Clone, Copy)]
pub struct AntennaConfig {
    /// Vertically stacked element count.
    pub rows: usize,
    /// Horizontal element count.
    pub cols: usize,
    /// Element spacing in wavelengths (both axes).
    pub spacing_wl: f64,
    /// Electrical downtilt, degrees below horizon.
    pub downtilt_deg: f64,
    pub max_element_gain_dbi: f64,
    pub front_to_back_db: f64,
    pub polarization: Polarization,
}

impl AntennaConfig {
    /// 8x1 vertical macro array, 12 degree downtilt (single-port sector).
    pub fn sector_8v() -> Self {
        Self {
            rows: 8,
            cols: 1,
            spacing_wl: 0.5,
            downtilt_deg: 12.0,
            max_element_gain_dbi: 8.0,
            front_to_back_db: 30.0,
            polarization: Polarization::Cross,
        }
    }

    /// 8x8 planar massive MIMO panel, 12 degree downtilt.
    pub fn panel_8x8() -> Self {
        Self {
            rows: 8,
            cols: 8,
            spacing_wl: 0.5,
            downtilt_deg: 12.0,
            max_element_gain_dbi: 8.0,
            front_to_back_db: 30.0,
            polarization: Polarization::Cross,
        }
    }

    /// 2x2 UE panel with isotropic elements (aaUAV terminal).
    pub fn ue_2x2() -> Self {
        Self {
            rows: 2,
            cols: 2,
            spacing_wl: 0.5,
            downtilt_deg: 0.0,
            max_element_gain_dbi: 0.0,
            front_to_back_db: 0.0,
            polarization: Polarization::Single,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.rows * self.cols
    }

    /// Isotropic elements (no angular selectivity).
    pub fn is_isotropic(&self) -> bool {
        self.max_element_gain_dbi == 0.0 && self.front_to_back_db == 0.0
    }
}

/// 38.901 element gain, dBi. `theta` is the zenith angle in [0, 180] (90 =
/// horizon), `phi` the azimuth off boresight in (-180, 180].
pub fn element_gain_dbi(theta_deg: f64, phi_deg: f64, cfg: &AntennaConfig) -> f64 {
    if cfg.is_isotropic() {
        return 0.0;
    }
    const SLA_V: f64 = 30.0;
    let a_v = -(12.0 * ((theta_deg - 90.0) / 65.0).powi(2)).min(SLA_V);
    let a_h = -(12.0 * (phi_deg / 65.0).powi(2)).min(cfg.front_to_back_db);
    cfg.max_element_gain_dbi - (-(a_v + a_h)).min(cfg.front_to_back_db)
}

/// Raw steering vector: one unit-magnitude entry per element.
/// Row-major over (row, col); rows stack vertically.
pub fn steering_raw(cfg: &AntennaConfig, theta_deg: f64, phi_deg: f64) -> DVector<Complex64> {
    let th = theta_deg.to_radians();
    let ph = phi_deg.to_radians();
    let cos_t = th.cos();
    let sin_t_sin_p = th.sin() * ph.sin();
    let k = 2.0 * std::f64::consts::PI * cfg.spacing_wl;
    DVector::from_iterator(
        cfg.n_elements(),
        (0..cfg.rows).flat_map(move |m| {
            (0..cfg.cols).map(move |n| {
                let phase = k * (m as f64 * cos_t + n as f64 * sin_t_sin_p);
                Complex64::from_polar(1.0, phase)
            })
        }),
    )
}

/// Unit-norm array response vector.
pub fn array_response(cfg: &AntennaConfig, theta_deg: f64, phi_deg: f64) -> DVector<Complex64> {
    let mut a = steering_raw(cfg, theta_deg, phi_deg);
    a /= Complex64::new((cfg.n_elements() as f64).sqrt(), 0.0);
    a
}

/// Converts a global unit direction (from the array toward the target) into
/// the (theta, phi) pair of a sector whose boresight azimuth is
/// `azimuth_deg` (degrees counterclockwise from +x, horizontal boresight).
pub fn direction_to_local(
    dx: f64,
    dy: f64,
    dz: f64,
    azimuth_deg: f64,
) -> (f64, f64) {
    let n = (dx * dx + dy * dy + dz * dz).sqrt().max(1e-30);
    let (ux, uy, uz) = (dx / n, dy / n, dz / n);
    let az = azimuth_deg.to_radians();
    let xl = az.cos() * ux + az.sin() * uy;
    let yl = -az.sin() * ux + az.cos() * uy;
    let theta = uz.clamp(-1.0, 1.0).acos().to_degrees();
    let phi = yl.atan2(xl).to_degrees();
    (theta, phi)
}

/// Element gain plus array-factor gain of the fixed beam electrically
/// steered to the configured downtilt at phi = 0.
pub fn composite_bs_gain_dbi(cfg: &AntennaConfig, theta_deg: f64, phi_deg: f64) -> f64 {
    let w = steering_raw(cfg, 90.0 + cfg.downtilt_deg, 0.0);
    let a = steering_raw(cfg, theta_deg, phi_deg);
    let n = cfg.n_elements() as f64;
    let af = (w.dotc(&a).norm_sqr() / n).max(1e-30);
    element_gain_dbi(theta_deg, phi_deg, cfg) + 10.0 * af.log10()
}

/// One complex CN(0,1) sample.
pub fn cn01(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Small-scale fading vector with unit per-element average power.
///
/// LoS: Ricean, deterministic part = unit-magnitude steering entries toward
/// `(theta, phi)` scaled by sqrt(K/(K+1)), diffuse part CN(0, 1/(K+1)).
/// NLoS: i.i.d. CN(0,1); the direction is ignored.
pub fn small_scale(
    cfg: &AntennaConfig,
    los: bool,
    k_factor_db: f64,
    theta_deg: f64,
    phi_deg: f64,
    rng: &mut impl Rng,
) -> DVector<Complex64> {
    let n = cfg.n_elements();
    if !los {
        return DVector::from_fn(n, |_, _| cn01(rng));
    }
    let k = 10f64.powf(k_factor_db / 10.0);
    let det_scale = (k / (k + 1.0)).sqrt();
    let diff_scale = (1.0 / (k + 1.0)).sqrt();
    let steer = steering_raw(cfg, theta_deg, phi_deg);
    DVector::from_fn(n, |i, _| steer[i] * det_scale + cn01(rng) * diff_scale)
}
