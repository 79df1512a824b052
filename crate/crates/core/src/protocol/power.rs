/// Transmit power limits in mW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRange {
    pub min_mw: f64,
    pub max_mw: f64,
}

impl PowerRange {
    pub fn from_dbm(min_dbm: f64, max_dbm: f64) -> Self {
        PowerRange { min_mw: crate::channel::dbm_to_mw(min_dbm), max_mw: crate::channel::dbm_to_mw(max_dbm) }
    }

    pub fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.min_mw, self.max_mw)
    }
}

/// `P(t+1) = P(t) * target / achieved`, clamped. No measurable signal means
/// full power.
pub fn update_power(p_mw: f64, target_snr: f64, achieved_snr: f64, range: PowerRange) -> f64 {
    if achieved_snr.is_nan() || achieved_snr <= 0.0 {
        return range.max_mw;
    }
    range.clamp(p_mw * target_snr / achieved_snr)
}

#[cfg(test)]
mod tests {
    use super::*;

    const WIDE: PowerRange = PowerRange { min_mw: 0.01, max_mw: 100.0 };

    #[test]
    fn formula_examples() {
        assert_eq!(update_power(4.0, 8.0, 16.0, WIDE), 2.0);
        assert_eq!(update_power(4.0, 8.0, 8.0, WIDE), 4.0);
        assert_eq!(update_power(4.0, 8.0, 0.0, WIDE), 100.0);
        assert_eq!(update_power(4.0, 8.0, 1e-9, WIDE), 100.0);
        assert_eq!(update_power(4.0, 8.0, 1e9, WIDE), 0.01);
    }

    #[test]
    fn table_range_in_mw() {
        let r = PowerRange::from_dbm(-15.0, -5.0);
        assert!((r.min_mw - 0.031_622_776).abs() < 1e-8);
        assert!((r.max_mw - 0.316_227_766).abs() < 1e-8);
    }
}
