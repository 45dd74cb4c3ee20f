use super::config::PowerCoefficients;
use crate::dvs::VfOperatingPoint;

/// Power of one microengine in watts.
pub fn dynamic_power(coeffs: &PowerCoefficients, point: VfOperatingPoint, busy: bool) -> f64 {
    let v = point.voltage();
    let activity = if busy { 1.0 } else { coeffs.alpha_idle };
    coeffs.k_dyn * v * v * point.frequency() * activity + coeffs.k_static * v
}

/// Adds `sum(powers) * dt` to a cumulative energy. Watts times
/// microseconds gives microjoules.
pub fn accrue_energy(energy_uj: f64, powers: impl IntoIterator<Item = f64>, dt_us: f64) -> f64 {
    debug_assert!(dt_us >= 0.0);
    if dt_us == 0.0 {
        return energy_uj;
    }
    energy_uj + powers.into_iter().sum::<f64>() * dt_us
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dvs::VfTable;

    #[test]
    fn busy_power_ratio_between_extreme_points() {
        let t = VfTable::default();
        let c = PowerCoefficients::default();
        let hi = dynamic_power(&c, t.point(0), true);
        let lo = dynamic_power(&c, t.point(4), true);
        let oracle = (400.0 * 1.1 * 1.1) / (600.0 * 1.3 * 1.3);
        assert!((lo / hi - oracle).abs() < 1e-12);
        assert!((oracle - 0.4773).abs() < 1e-4);
    }

    #[test]
    fn calibration_point_is_quarter_watt() {
        let p = dynamic_power(&PowerCoefficients::default(), VfTable::default().point(0), true);
        assert!((p - 0.25).abs() < 1e-12);
    }

    #[test]
    fn idle_with_zero_activity_draws_nothing() {
        let c = PowerCoefficients {
            alpha_idle: 0.0,
            k_static: 0.0,
            ..PowerCoefficients::default()
        };
        assert_eq!(dynamic_power(&c, VfTable::default().point(2), false), 0.0);
    }

    #[test]
    fn energy_accrual() {
        assert!((accrue_energy(0.0, [0.25; 6], 1.0) - 1.5).abs() < 1e-12);
        assert_eq!(accrue_energy(3.5, [0.25; 6], 0.0), 3.5);
    }
}
