//! Sinusoidal encoding of relative times.

/// Angular rates for a `d`-dimensional encoding: component `j` oscillates
/// at `10000^(-⌊j/2⌋/d)`.
pub fn rates(d: usize) -> Vec<f64> {
    (0..d).map(|j| 10000f64.powf(-((j / 2) as f64) / d as f64)).collect()
}

/// `ρ(i)`: `sin(i·rate_j)` for even `j`, `cos(i·rate_j)` for odd `j`.
pub fn positional_row(i: f64, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    encode_into(i, &rates(d), &mut out);
    out
}

#[inline]
pub(crate) fn encode_into(i: f64, rates: &[f64], out: &mut [f64]) {
    for (j, (slot, rate)) in out.iter_mut().zip(rates).enumerate() {
        let x = i * rate;
        *slot = if j % 2 == 0 { x.sin() } else { x.cos() };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_alternates() {
        assert_eq!(positional_row(0.0, 6), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn first_pair_has_unit_rate() {
        let r = positional_row(2.5, 8);
        assert_eq!((r[0], r[1]), (2.5f64.sin(), 2.5f64.cos()));
        // Second pair: 10000^(-1/8).
        let rate = 10000f64.powf(-1.0 / 8.0);
        assert!((r[2] - (2.5 * rate).sin()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounded_by_one(i in -1e6f64..1e6, half in 0usize..40) {
            for x in positional_row(i, 2 * half) {
                prop_assert!(x.abs() <= 1.0);
            }
        }
    }
}
