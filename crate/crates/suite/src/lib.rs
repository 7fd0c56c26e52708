//! Support code for the `acceptance` test target: criterion bookkeeping and
//! a dense finite-element oracle.

pub mod oracle;
pub mod report;

pub use report::{Suite, Verdict};

/// Median of a nonempty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean of `values[range]`.
pub fn window_mean(values: &[f64], range: std::ops::Range<usize>) -> f64 {
    let w = &values[range];
    w.iter().sum::<f64>() / w.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
