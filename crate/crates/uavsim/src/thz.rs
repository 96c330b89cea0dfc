//! Free-space LoS MIMO with exact spherical wavefronts and
//! information-theoretic bit-rate sweeps at mmWave and sub-THz bands.
//!
//! No fading, no randomness: the channel matrix follows from array geometry
//! alone, and the rank available at short range comes entirely from wavefront
//! curvature over the array apertures.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::SPEED_OF_LIGHT;
use crate::error::SimError;

/// Square-grid planar array, broadside along the link axis.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlanarArraySpec {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths (both axes).
    pub spacing_wl: f64,
}

impl PlanarArraySpec {
    pub fn new(rows: usize, cols: usize, spacing_wl: f64) -> Result<Self, SimError> {
        if rows == 0 || cols == 0 {
            return Err(SimError::Config("array needs at least one element".into()));
        }
        if spacing_wl <= 0.0 {
            return Err(SimError::Config(format!(
                "spacing must be > 0 wavelengths (got {spacing_wl})"
            )));
        }
        Ok(Self { rows, cols, spacing_wl })
    }

    /// Largest square grid whose aperture fits in `side_m` at the given
    /// spacing. This is how the element counts follow from a fixed physical
    /// real estate when the carrier moves up in frequency.
    pub fn from_aperture(side_m: f64, spacing_wl: f64, fc_hz: f64) -> Result<Self, SimError> {
        if side_m <= 0.0 || fc_hz <= 0.0 {
            return Err(SimError::Config("aperture side and fc must be > 0".into()));
        }
        let step = spacing_wl * SPEED_OF_LIGHT / fc_hz;
        let per_side = (side_m / step).round() as usize + 1;
        Self::new(per_side, per_side, spacing_wl)
    }

    pub fn n_antennas(&self) -> usize {
        self.rows * self.cols
    }

    /// Element coordinates in the array plane, centered on the boresight
    /// axis, in meters.
    fn positions_m(&self, fc_hz: f64) -> Vec<(f64, f64)> {
        let step = self.spacing_wl * SPEED_OF_LIGHT / fc_hz;
        let x0 = (self.cols as f64 - 1.0) / 2.0;
        let y0 = (self.rows as f64 - 1.0) / 2.0;
        let mut pos = Vec::with_capacity(self.n_antennas());
        for r in 0..self.rows {
            for c in 0..self.cols {
                pos.push(((c as f64 - x0) * step, (r as f64 - y0) * step));
            }
        }
        pos
    }
}

/// Deterministic free-space channel between two facing planar arrays.
#[derive(Debug, Clone)]
pub struct LosMimoChannel {
    /// rx_antennas x tx_antennas.
    pub h: DMatrix<Complex64>,
    pub fc_hz: f64,
    pub distance_m: f64,
}

/// Spherical-wavefront channel: each entry carries the exact Friis amplitude
/// and phase for its element pair, with no planar approximation.
pub fn los_mimo_channel(
    tx: &PlanarArraySpec,
    rx: &PlanarArraySpec,
    d_m: f64,
    fc_hz: f64,
) -> Result<LosMimoChannel, SimError> {
    if d_m <= 0.0 {
        return Err(SimError::Config(format!("distance must be > 0 (got {d_m})")));
    }
    if fc_hz <= 0.0 {
        return Err(SimError::Config("fc must be > 0".into()));
    }
    let lambda = SPEED_OF_LIGHT / fc_hz;
    let tx_pos = tx.positions_m(fc_hz);
    let rx_pos = rx.positions_m(fc_hz);
    let h = DMatrix::from_fn(rx_pos.len(), tx_pos.len(), |m, n| {
        let dx = rx_pos[m].0 - tx_pos[n].0;
        let dy = rx_pos[m].1 - tx_pos[n].1;
        let dist = (d_m * d_m + dx * dx + dy * dy).sqrt();
        let amp = lambda / (4.0 * std::f64::consts::PI * dist);
        Complex64::from_polar(amp, -2.0 * std::f64::consts::PI * dist / lambda)
    });
    Ok(LosMimoChannel { h, fc_hz, distance_m: d_m })
}

impl LosMimoChannel {
    /// Squared singular values of H, descending. Computed from the Gram
    /// matrix on the smaller side, which is much cheaper than a full SVD of
    /// a tall sub-THz channel.
    pub fn singular_gains(&self) -> Vec<f64> {
        let gram = if self.h.nrows() >= self.h.ncols() {
            self.h.adjoint() * &self.h
        } else {
            &self.h * self.h.adjoint()
        };
        let eig = SymmetricEigen::new(gram);
        let mut gains: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        gains.sort_by(|a, b| b.partial_cmp(a).unwrap());
        gains
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TxMode {
    /// Single stream on the dominant singular vector.
    Beamforming,
    /// Waterfilling over all singular values.
    Waterfilling,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Capacity {
    pub rate_bps: f64,
    /// Streams that carry positive power.
    pub streams: usize,
}

/// Waterfilling powers for stream gains sorted descending: fill the largest
/// k inverse-gains to a common level, choosing the largest feasible k.
fn waterfill(gains: &[f64], p_total: f64, noise: f64) -> Vec<f64> {
    let inv: Vec<f64> = gains
        .iter()
        .map(|&g| if g > 0.0 { noise / g } else { f64::INFINITY })
        .collect();
    let mut prefix = 0.0;
    let mut best = vec![0.0; gains.len()];
    for k in 1..=gains.len() {
        if !inv[k - 1].is_finite() {
            break;
        }
        prefix += inv[k - 1];
        let level = (p_total + prefix) / k as f64;
        if level > inv[k - 1] {
            for i in 0..k {
                best[i] = level - inv[i];
            }
            best[k..].iter_mut().for_each(|p| *p = 0.0);
        }
    }
    best
}

/// Bit rate of the link under the given budget. Per-stream spectral
/// efficiency is capped to avoid artifact rates from implausibly large
/// constellations; the cap is applied after power allocation.
pub fn capacity_bps(
    ch: &LosMimoChannel,
    tx_power_dbm: f64,
    noise_figure_db: f64,
    bandwidth_hz: f64,
    se_cap: f64,
    mode: TxMode,
) -> Result<Capacity, SimError> {
    if bandwidth_hz <= 0.0 || se_cap <= 0.0 {
        return Err(SimError::Config("bandwidth and se_cap must be > 0".into()));
    }
    capacity_from_gains(
        &ch.singular_gains(),
        tx_power_dbm,
        noise_figure_db,
        bandwidth_hz,
        se_cap,
        mode,
    )
}

fn capacity_from_gains(
    gains: &[f64],
    tx_power_dbm: f64,
    noise_figure_db: f64,
    bandwidth_hz: f64,
    se_cap: f64,
    mode: TxMode,
) -> Result<Capacity, SimError> {
    let p_mw = 10f64.powf(tx_power_dbm / 10.0);
    let noise_mw = 10f64.powf((-174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db) / 10.0);
    let (rate_se, streams) = match mode {
        TxMode::Beamforming => {
            let se = (1.0 + p_mw * gains[0] / noise_mw).log2();
            (se.min(se_cap), 1)
        }
        TxMode::Waterfilling => {
            let powers = waterfill(gains, p_mw, noise_mw);
            let mut se_sum = 0.0;
            let mut active = 0;
            for (&p, &g) in powers.iter().zip(gains) {
                if p > 0.0 {
                    active += 1;
                    se_sum += (1.0 + p * g / noise_mw).log2().min(se_cap);
                }
            }
            (se_sum, active)
        }
    };
    Ok(Capacity { rate_bps: rate_se * bandwidth_hz, streams })
}

/// One carrier's link budget and physical array real estate. Element counts
/// are derived from the apertures, so moving the same real estate up in
/// frequency packs in more antennas.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BandConfig {
    pub fc_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_side_m: f64,
    pub rx_side_m: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub se_cap: f64,
}

impl BandConfig {
    /// 400 MHz at 28 GHz: 16 tx / 64 rx at half-wavelength spacing.
    pub fn mmwave_28() -> Self {
        Self {
            fc_hz: 28.0e9,
            bandwidth_hz: 400.0e6,
            tx_side_m: 0.016,
            rx_side_m: 0.0375,
            tx_power_dbm: 23.0,
            noise_figure_db: 7.0,
            se_cap: 4.8,
        }
    }

    /// 1.6 GHz at 140 GHz in the same real estate: 256 tx / 1296 rx at
    /// half-wavelength spacing, 3 dB worse noise figure.
    pub fn subthz_140() -> Self {
        Self {
            fc_hz: 140.0e9,
            bandwidth_hz: 1.6e9,
            noise_figure_db: 10.0,
            ..Self::mmwave_28()
        }
    }

    pub fn array_pair(&self, spacing_wl: f64) -> Result<(PlanarArraySpec, PlanarArraySpec), SimError> {
        Ok((
            PlanarArraySpec::from_aperture(self.tx_side_m, spacing_wl, self.fc_hz)?,
            PlanarArraySpec::from_aperture(self.rx_side_m, spacing_wl, self.fc_hz)?,
        ))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThzSweepRow {
    pub fc_ghz: f64,
    pub mode: &'static str,
    pub spacing_wl: f64,
    pub d_m: f64,
    pub rate_bps: f64,
    pub rank_effective: usize,
}

/// The three curves drawn per band: beamforming and LoS MIMO at compact
/// spacing, and LoS MIMO with the spacing relaxed to 5 wavelengths (a larger
/// physical aperture at the same element count).
const CURVES: [(&str, f64, TxMode); 3] = [
    ("beamforming", 0.5, TxMode::Beamforming),
    ("losmimo", 0.5, TxMode::Waterfilling),
    ("losmimo", 5.0, TxMode::Waterfilling),
];

/// Bit rate vs distance for both bands and all three transmission modes.
/// Row order is (band, curve, distance); points are independent and computed
/// in parallel.
pub fn rate_vs_distance_sweep(
    bands: &[BandConfig],
    d_grid: &[f64],
) -> Result<Vec<ThzSweepRow>, SimError> {
    if d_grid.iter().any(|&d| d <= 0.0) {
        return Err(SimError::Config("distances must be > 0".into()));
    }
    let mut jobs = Vec::new();
    for band in bands {
        // relaxed spacing keeps the element counts of the compact array
        let (tx, rx) = band.array_pair(0.5)?;
        for spacing in [0.5, 5.0] {
            let tx = PlanarArraySpec { spacing_wl: spacing, ..tx };
            let rx = PlanarArraySpec { spacing_wl: spacing, ..rx };
            for &d in d_grid {
                jobs.push((*band, spacing, tx, rx, d));
            }
        }
    }
    // one channel per (band, spacing, distance), shared across modes
    let per_channel: Vec<Vec<ThzSweepRow>> = jobs
        .into_par_iter()
        .map(|(band, spacing, tx, rx, d)| {
            let gains = los_mimo_channel(&tx, &rx, d, band.fc_hz)?.singular_gains();
            CURVES
                .iter()
                .filter(|&&(_, s, _)| s == spacing)
                .map(|&(mode_name, _, mode)| {
                    let cap = capacity_from_gains(
                        &gains,
                        band.tx_power_dbm,
                        band.noise_figure_db,
                        band.bandwidth_hz,
                        band.se_cap,
                        mode,
                    )?;
                    Ok(ThzSweepRow {
                        fc_ghz: band.fc_hz / 1.0e9,
                        mode: mode_name,
                        spacing_wl: spacing,
                        d_m: d,
                        rate_bps: cap.rate_bps,
                        rank_effective: cap.streams,
                    })
                })
                .collect()
        })
        .collect::<Result<_, SimError>>()?;
    Ok(per_channel.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn scalar_channel_matches_friis() {
        let a = PlanarArraySpec::new(1, 1, 0.5).unwrap();
        let ch = los_mimo_channel(&a, &a, 200.0, 28.0e9).unwrap();
        let lambda = SPEED_OF_LIGHT / 28.0e9;
        assert_relative_eq!(
            ch.h[(0, 0)].norm(),
            lambda / (4.0 * std::f64::consts::PI * 200.0),
            max_relative = 1e-15
        );
    }

    #[test]
    fn frobenius_energy_matches_geometry() {
        let tx = PlanarArraySpec::new(3, 2, 0.5).unwrap();
        let rx = PlanarArraySpec::new(4, 4, 5.0).unwrap();
        let fc = 60.0e9;
        let ch = los_mimo_channel(&tx, &rx, 40.0, fc).unwrap();
        let lambda = SPEED_OF_LIGHT / fc;
        let mut expect = 0.0;
        for (txx, txy) in tx.positions_m(fc) {
            for (rxx, rxy) in rx.positions_m(fc) {
                let d = (40.0f64.powi(2) + (rxx - txx).powi(2) + (rxy - txy).powi(2)).sqrt();
                expect += (lambda / (4.0 * std::f64::consts::PI * d)).powi(2);
            }
        }
        assert_relative_eq!(ch.h.norm_squared(), expect, max_relative = 1e-12);
    }

    #[test]
    fn far_field_collapses_to_rank_one() {
        let a = PlanarArraySpec::new(4, 4, 0.5).unwrap();
        let ch = los_mimo_channel(&a, &a, 1.0e7, 28.0e9).unwrap();
        let gains = ch.singular_gains();
        assert!((gains[1] / gains[0]).sqrt() < 1e-3);
    }

    #[test]
    fn rayleigh_spacing_equalizes_singular_values() {
        let fc = 28.0e9;
        let d = 100.0;
        let lambda = SPEED_OF_LIGHT / fc;
        // orthogonality spacing for facing N_side x N_side grids
        let s_wl = (lambda * d / 4.0).sqrt() / lambda;
        let a = PlanarArraySpec::new(4, 4, s_wl).unwrap();
        let ch = los_mimo_channel(&a, &a, d, fc).unwrap();
        let gains = ch.singular_gains();
        let sv: Vec<f64> = gains.iter().map(|g| g.sqrt()).collect();
        assert!(sv[15] / sv[0] > 0.95, "spread {:.4}", sv[15] / sv[0]);
    }

    #[test]
    fn capped_beamforming_rate_is_exact() {
        let (tx, rx) = BandConfig::mmwave_28().array_pair(0.5).unwrap();
        let ch = los_mimo_channel(&tx, &rx, 50.0, 28.0e9).unwrap();
        let cap = capacity_bps(&ch, 23.0, 7.0, 400.0e6, 4.8, TxMode::Beamforming).unwrap();
        assert_eq!(cap.rate_bps, 400.0e6 * 4.8);
        assert_eq!(cap.streams, 1);
    }

    #[test]
    fn capped_bands_show_fourfold_ratio() {
        let rates: Vec<f64> = [BandConfig::mmwave_28(), BandConfig::subthz_140()]
            .iter()
            .map(|b| {
                let (tx, rx) = b.array_pair(0.5).unwrap();
                let ch = los_mimo_channel(&tx, &rx, 100.0, b.fc_hz).unwrap();
                capacity_bps(&ch, b.tx_power_dbm, b.noise_figure_db, b.bandwidth_hz, b.se_cap, TxMode::Beamforming)
                    .unwrap()
                    .rate_bps
            })
            .collect();
        assert_eq!(rates[1] / rates[0], 4.0);
    }

    #[test]
    fn waterfilling_degenerate_gain_gets_no_power() {
        let powers = waterfill(&[1.0, 0.0], 2.0, 0.1);
        assert_eq!(powers, vec![2.0, 0.0]);
    }

    #[test]
    fn waterfilling_level_is_consistent() {
        let gains = vec![3.0, 1.0, 0.3, 0.05];
        let noise = 0.2;
        let powers = waterfill(&gains, 1.5, noise);
        assert_abs_diff_eq!(powers.iter().sum::<f64>(), 1.5, epsilon = 1e-12);
        let levels: Vec<f64> = powers
            .iter()
            .zip(&gains)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &g)| p + noise / g)
            .collect();
        assert!(levels.len() >= 2);
        for w in levels.windows(2) {
            assert_abs_diff_eq!(w[0], w[1], epsilon = 1e-9);
        }
        // inactive streams sit above the water level
        for (&p, &g) in powers.iter().zip(&gains) {
            if p == 0.0 {
                assert!(noise / g >= levels[0]);
            }
        }
    }

    #[test]
    fn waterfilling_beats_beamforming_and_ignores_global_phase() {
        let tx = PlanarArraySpec::new(2, 2, 5.0).unwrap();
        let rx = PlanarArraySpec::new(3, 3, 5.0).unwrap();
        let ch = los_mimo_channel(&tx, &rx, 30.0, 140.0e9).unwrap();
        let bf = capacity_bps(&ch, 23.0, 10.0, 1.6e9, 30.0, TxMode::Beamforming).unwrap();
        let wf = capacity_bps(&ch, 23.0, 10.0, 1.6e9, 30.0, TxMode::Waterfilling).unwrap();
        assert!(wf.rate_bps >= bf.rate_bps && bf.rate_bps > 0.0);

        let rotated = LosMimoChannel {
            h: &ch.h * Complex64::from_polar(1.0, 1.234),
            ..ch.clone()
        };
        let wf2 = capacity_bps(&rotated, 23.0, 10.0, 1.6e9, 30.0, TxMode::Waterfilling).unwrap();
        assert_relative_eq!(wf.rate_bps, wf2.rate_bps, max_relative = 1e-9);
    }

    #[test]
    fn element_counts_follow_from_shared_real_estate() {
        let b28 = BandConfig::mmwave_28();
        let (t, r) = b28.array_pair(0.5).unwrap();
        assert_eq!((t.n_antennas(), r.n_antennas()), (16, 64));
        let b140 = BandConfig::subthz_140();
        let (t, r) = b140.array_pair(0.5).unwrap();
        assert_eq!((t.n_antennas(), r.n_antennas()), (256, 1296));
    }

    #[test]
    fn sweep_reproduces_curve_shapes() {
        let grid = [10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 4000.0];
        let bands = [BandConfig::mmwave_28(), BandConfig::subthz_140()];
        let rows = rate_vs_distance_sweep(&bands, &grid).unwrap();
        assert_eq!(rows.len(), 2 * 3 * grid.len());

        let curve = |fc: f64, mode: &str, sp: f64| -> Vec<f64> {
            rows.iter()
                .filter(|r| r.fc_ghz == fc && r.mode == mode && r.spacing_wl == sp)
                .map(|r| r.rate_bps)
                .collect()
        };
        for &fc in &[28.0, 140.0] {
            let bf = curve(fc, "beamforming", 0.5);
            // flat while capped, then monotone non-increasing
            let cap_rate = bf[0];
            let exit = bf.iter().position(|&r| r < cap_rate * 0.999).unwrap_or(bf.len());
            for &r in &bf[..exit] {
                assert_relative_eq!(r, cap_rate, max_relative = 1e-3);
            }
            for w in bf[exit.saturating_sub(1)..].windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
            // at 50 m: relaxed spacing >= compact LoS MIMO >= beamforming
            let at50 = |mode: &str, sp: f64| curve(fc, mode, sp)[2];
            assert!(at50("losmimo", 5.0) >= at50("losmimo", 0.5));
            assert!(at50("losmimo", 0.5) >= at50("beamforming", 0.5));
        }
    }
}
