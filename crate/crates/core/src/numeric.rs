//! Small numeric helpers: deterministic pairwise summation and moments.

/// Pairwise (cascade) summation. Deterministic for a fixed input order and
/// numerically stabler than a running sum for long vectors.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n if n <= 32 => xs.iter().sum(),
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Population variance (denominator n).
pub fn pop_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / xs.len() as f64
}

pub fn sd(xs: &[f64]) -> f64 {
    pop_variance(xs).max(0.0).sqrt()
}

/// Trapezoid rule on an evenly spaced grid.
pub fn trapezoid(values: &[f64], grid: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), grid.len());
    if grid.len() < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for k in 1..grid.len() {
        acc += 0.5 * (values[k] + values[k - 1]) * (grid[k] - grid[k - 1]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1001).map(|i| (i as f64) * 0.37 - 12.0).collect();
        let naive: f64 = xs.iter().sum();
        assert_abs_diff_eq!(pairwise_sum(&xs), naive, epsilon = 1e-9);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let grid: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let vals: Vec<f64> = grid.iter().map(|a| 2.0 * a + 1.0).collect();
        assert_abs_diff_eq!(trapezoid(&vals, &grid), 2.0, epsilon = 1e-12);
    }
}
