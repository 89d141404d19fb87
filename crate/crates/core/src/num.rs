//! Small numerical utilities shared across the crate: composite Simpson
//! quadrature on uniform grids, a fixed-order pairwise sum, and sample
//! statistics built on it.

/// Pairwise (tree) summation. Deterministic for a given slice regardless of
/// how the values were produced, and more accurate than a left fold.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 16;
    if xs.len() <= BASE {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean via pairwise summation.
pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Two-pass sample variance (unbiased) via pairwise summation.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// Composite Simpson rule over `n` uniform intervals of width `h`, where
/// `values[k]` holds the integrand at node `k`, 0 <= k <= n. An odd interval
/// count is handled with a Simpson 3/8 tail.
pub fn simpson_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    match n {
        0 => 0.0,
        1 => 0.5 * h * (values[0] + values[1]),
        2 => h / 3.0 * (values[0] + 4.0 * values[1] + values[2]),
        _ => {
            let (even_end, tail) = if n % 2 == 0 {
                (n, 0.0)
            } else {
                // Simpson 3/8 on the last three intervals.
                let t = 3.0 * h / 8.0
                    * (values[n - 3] + 3.0 * values[n - 2] + 3.0 * values[n - 1] + values[n]);
                (n - 3, t)
            };
            let mut odd = 0.0;
            let mut even = 0.0;
            for k in 1..even_end {
                if k % 2 == 1 {
                    odd += values[k];
                } else {
                    even += values[k];
                }
            }
            h / 3.0 * (values[0] + 4.0 * odd + 2.0 * even + values[even_end]) + tail
        }
    }
}

/// Trapezoid rule over a uniform grid.
pub fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.5 * (values[0] + values[n - 1]);
    for &v in &values[1..n - 1] {
        acc += v;
    }
    acc * h
}

/// Formats a float with 17 significant digits, enough to round-trip any
/// f64 exactly; used by every CSV surface.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Bisection on a bracketing interval [lo, hi] with f(lo) and f(hi) of
/// opposite signs. Runs until the relative width drops below `rel_tol`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let mut f_lo = f(lo);
    debug_assert!(
        f_lo * f(hi) <= 0.0,
        "bisect: endpoints do not bracket a root"
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= rel_tol * mid.abs().max(f64::MIN_POSITIVE) {
            return mid;
        }
        let f_mid = f(mid);
        if f_lo * f_mid <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    0.5 * (lo + hi)
}
