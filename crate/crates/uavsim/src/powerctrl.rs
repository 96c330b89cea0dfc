//! Fractional open-loop uplink power control, shared by GUEs, UAVs, and
//! U2U transmitters.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerControlParams {
    pub p_max_dbm: f64,
    pub p_ref_dbm: f64,
    /// Fraction of the large-scale loss that is compensated, in [0, 1].
    pub epsilon: f64,
    pub n_prb: usize,
}

impl PowerControlParams {
    pub fn new(p_max_dbm: f64, p_ref_dbm: f64, epsilon: f64, n_prb: usize) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(SimError::Config(format!("epsilon {epsilon} not in [0,1]")));
        }
        if n_prb == 0 {
            return Err(SimError::Config("n_prb must be >= 1".into()));
        }
        Ok(Self { p_max_dbm, p_ref_dbm, epsilon, n_prb })
    }
}

/// Transmit power per PRB in dBm:
/// min(p_max - 10 log10(n_prb), p_ref + epsilon * xi).
///
/// `xi_db` is the overall large-scale loss (pathloss + shadowing, antenna
/// gains excluded).
pub fn tx_power_per_prb_dbm(params: &PowerControlParams, xi_db: f64) -> f64 {
    let cap = params.p_max_dbm - 10.0 * (params.n_prb as f64).log10();
    cap.min(params.p_ref_dbm + params.epsilon * xi_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(e: f64, n: usize) -> PowerControlParams {
        PowerControlParams::new(24.0, -58.0, e, n).unwrap()
    }

    #[test]
    fn epsilon_zero_is_loss_independent() {
        let params = p(0.0, 4);
        let cap = 24.0 - 10.0 * 4f64.log10();
        for xi in [0.0, 80.0, 140.0] {
            assert_relative_eq!(
                tx_power_per_prb_dbm(&params, xi),
                cap.min(-58.0),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn partial_compensation_hand_values() {
        // P_max = 24 dBm, n = 1, P_ref = -58 dBm, eps = 0.6
        let params = p(0.6, 1);
        assert_relative_eq!(tx_power_per_prb_dbm(&params, 100.0), 2.0, epsilon = 1e-12);
        assert_relative_eq!(tx_power_per_prb_dbm(&params, 140.0), 24.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(PowerControlParams::new(24.0, -58.0, 1.5, 1).is_err());
        assert!(PowerControlParams::new(24.0, -58.0, -0.1, 1).is_err());
        assert!(PowerControlParams::new(24.0, -58.0, 0.5, 0).is_err());
    }

    #[test]
    fn full_inversion_keeps_received_power_constant() {
        let params = p(1.0, 1);
        // below the clamp: tx - xi is the constant p_ref
        let a = tx_power_per_prb_dbm(&params, 60.0) - 60.0;
        let b = tx_power_per_prb_dbm(&params, 75.0) - 75.0;
        assert_relative_eq!(a, b, epsilon = 1e-12);
        assert_relative_eq!(a, -58.0, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_in_xi_and_capped(
                xi1 in 0.0f64..200.0,
                xi2 in 0.0f64..200.0,
                eps in 0.0f64..1.0,
                n in 1usize..100,
            ) {
                let params = PowerControlParams::new(24.0, -58.0, eps, n).unwrap();
                let (lo, hi) = if xi1 < xi2 { (xi1, xi2) } else { (xi2, xi1) };
                let plo = tx_power_per_prb_dbm(&params, lo);
                let phi = tx_power_per_prb_dbm(&params, hi);
                prop_assert!(plo <= phi + 1e-12);
                prop_assert!(phi + 10.0 * (n as f64).log10() <= 24.0 + 1e-12);
            }

            #[test]
            fn monotone_in_epsilon(
                xi in 1.0f64..200.0,
                e1 in 0.0f64..1.0,
                e2 in 0.0f64..1.0,
            ) {
                let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
                let a = tx_power_per_prb_dbm(&PowerControlParams::new(24.0, -58.0, lo, 1).unwrap(), xi);
                let b = tx_power_per_prb_dbm(&PowerControlParams::new(24.0, -58.0, hi, 1).unwrap(), xi);
                prop_assert!(a <= b + 1e-12);
            }
        }
    }
}
