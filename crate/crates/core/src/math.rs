//! Scalar helpers. The crate is `no_std`, so transcendental functions come from `libm`.

/// Finite stand-in for `ln 0`; keeps max/log-sum-exp recursions total.
pub const LOG_ZERO: f64 = -1e30;

/// Anything at or below this is treated as `ln 0`.
const LOG_ZERO_CUTOFF: f64 = -1e29;

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// `ln p`, mapping `p <= 0` to [`LOG_ZERO`].
#[inline]
pub fn safe_ln(p: f64) -> f64 {
    if p > 0.0 {
        libm::log(p)
    } else {
        LOG_ZERO
    }
}

#[inline]
pub fn is_log_zero(x: f64) -> bool {
    x <= LOG_ZERO_CUTOFF
}

/// `x ln x` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * libm::log(x)
    } else {
        0.0
    }
}

/// `ln(exp(a) + exp(b))` in the sentinel convention.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if is_log_zero(a) {
        return if is_log_zero(b) { LOG_ZERO } else { b };
    }
    if is_log_zero(b) {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(LOG_ZERO, log_add)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x)`, stable for large |x|.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(libm::exp(-x))
    } else {
        x - libm::log1p(libm::exp(x))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// In-place softmax of `xs / temperature`.
pub fn softmax_in_place(xs: &mut [f64], temperature: f64) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in xs.iter_mut() {
        *x = libm::exp((*x - m) / temperature);
        z += *x;
    }
    for x in xs.iter_mut() {
        *x /= z;
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| libm::fabs(x - y))
        .fold(0.0, f64::max)
}

pub fn is_distribution(row: &[f64], tol: f64) -> bool {
    row.iter().all(|&p| p >= 0.0 && p.is_finite())
        && libm::fabs(row.iter().sum::<f64>() - 1.0) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_handles_sentinels() {
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        assert_eq!(log_add(LOG_ZERO, -2.0), -2.0);
        assert!((log_add(ln(0.25), ln(0.5)) - ln(0.75)).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_matches_direct_form() {
        for x in [-40.0, -3.0, 0.0, 2.5, 35.0] {
            assert!((log_sigmoid(x) - ln(sigmoid(x))).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
