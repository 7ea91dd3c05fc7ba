//! Small numeric helpers shared by the protocol modules.

/// Ceiling of log2 over the integers, for n >= 2.
pub(crate) fn ceil_log2(n: u32) -> u32 {
    debug_assert!(n >= 2);
    32 - (n - 1).leading_zeros()
}

/// Computes a counter bound of the form ceil(c * log2(n)).
pub(crate) fn ceil_scaled_log2(c: f64, n: u32) -> u32 {
    (c * f64::from(n).log2()).ceil() as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(4), 2);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(7), 3);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(256), 8);
        assert_eq!(ceil_log2(257), 9);
    }

    #[test]
    fn scaled_log2_values() {
        assert_eq!(ceil_scaled_log2(2.0, 256), 16);
        assert_eq!(ceil_scaled_log2(2.0, 8), 6);
        assert_eq!(ceil_scaled_log2(0.8, 5), 2);
        assert_eq!(ceil_scaled_log2(4.0, 1024), 40);
    }
}
