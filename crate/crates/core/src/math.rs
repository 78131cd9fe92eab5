//! Numerically stable scalar helpers.

/// Logistic function, branching on sign so neither branch overflows.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `log σ(z)` without cancellation for large `|z|`.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -libm::log1p(libm::exp(-z))
    } else {
        z - libm::log1p(libm::exp(z))
    }
}

/// `log(1 + e^z) = -log σ(-z)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    -log_sigmoid(-z)
}

/// `σ(a) - σ(b)` with relative accuracy even when `a ≈ b`.
pub fn sigmoid_diff(a: f64, b: f64) -> f64 {
    if a.abs() < 700.0 && b.abs() < 700.0 {
        libm::sinh(0.5 * (a - b)) / (2.0 * libm::cosh(0.5 * a) * libm::cosh(0.5 * b))
    } else {
        sigmoid(a) - sigmoid(b)
    }
}

/// `softplus(p) - softplus(q)` accurate when `p ≈ q`.
pub fn softplus_diff(p: f64, q: f64) -> f64 {
    // log((1+e^p)/(1+e^q)) = log1p(σ(q)·expm1(p-q))
    let inner = sigmoid(q) * libm::expm1(p - q);
    if inner > -1.0 {
        libm::log1p(inner)
    } else {
        softplus(p) - softplus(q)
    }
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Pairwise (cascade) summation. The split points depend only on the
/// length, so the result is reproducible regardless of how callers chunk
/// the work.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// `log Σ exp(x_i)`; returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut s = 0.0;
    for &x in xs {
        s += libm::exp(x - m);
    }
    m + libm::log(s)
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in xs {
        s += x * x;
    }
    libm::sqrt(s)
}
