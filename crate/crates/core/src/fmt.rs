//! Text formatting shared by every file writer.

/// Formats a float with 17 significant digits, enough to round-trip any
/// `f64` exactly.
pub fn float17(value: f64) -> String {
    format!("{value:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_exactly() {
        for v in [0.1, 1.0 / 3.0, std::f64::consts::LN_2, -1.234e-300, 5e-324, 0.0, 1e308] {
            assert_eq!(float17(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(float17(0.5), "5.0000000000000000e-1");
    }
}
