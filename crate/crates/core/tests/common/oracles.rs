//! Independent numerical oracles. Nothing here calls into the closed forms
//! under test.

#![allow(dead_code)]

pub fn log_sig(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Golden-section minimizer on `[lo, hi]` of a unimodal function given
/// through `diff(a, b) = f(a) - f(b)`, so flat minima resolve below `√ε`.
pub fn golden_section(diff: impl Fn(f64, f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        if diff(c, d) <= 0.0 {
            hi = d;
            d = c;
            c = hi - inv_phi * (hi - lo);
        } else {
            lo = c;
            c = d;
            d = lo + inv_phi * (hi - lo);
        }
    }
    0.5 * (lo + hi)
}

/// `log(1+e^p) - log(1+e^q)` without cancellation.
pub fn softplus_gap(p: f64, q: f64) -> f64 {
    if p < q {
        return -softplus_gap(q, p);
    }
    // log(1 + σ(q)(e^{p-q} - 1)), with e^{p-q} - 1 large handled directly.
    let sq = 1.0 / (1.0 + (-q).exp());
    let growth = (p - q).exp_m1();
    if growth.is_finite() && sq * growth < 1e300 {
        (sq * growth).ln_1p()
    } else {
        (p - q) + sq.ln()
    }
}

/// Numerical minimizer of `λ|v| - log σ(d + y v)`, searched over
/// `u = d + y v` so the sigmoid argument carries no rounding.
pub fn noise_by_search(d: f64, y: f64, lambda: f64) -> f64 {
    // f = λ|u - d| + log(1 + e^{-u}); on one side of the kink the |·| part
    // of a difference is exactly ±(a - b).
    let diff = |a: f64, b: f64| {
        let (sa, sb) = ((a - d).signum(), (b - d).signum());
        let abs_part = if sa == sb { sa * (a - b) } else { (a - d).abs() - (b - d).abs() };
        lambda * abs_part + softplus_gap(-a, -b)
    };
    let span = d.abs() + (1.0 / lambda).ln().abs() + 10.0;
    let u = golden_section(diff, -span, span, 1e-15);
    y * (u - d)
}

/// Row of `Σ_a π(a) s(a) - β KL(π ‖ ref)`.
pub fn row_value(pi: &[f64], s: &[f64], reference: &[f64], beta: f64) -> f64 {
    pi.iter()
        .zip(s)
        .zip(reference)
        .map(|((&p, &v), &q)| p * v - beta * p * (p / q).ln())
        .sum()
}

/// Exponentiated-gradient ascent on one simplex row of
/// `Σ_a π(a) s(a) - β KL(π ‖ ref)` with step `0.5/β`, from the uniform row.
pub fn mirror_ascent(s: &[f64], reference: &[f64], beta: f64, iters: usize) -> Vec<f64> {
    let k = s.len();
    let mut p = vec![1.0 / k as f64; k];
    let step = 0.5 / beta;
    for _ in 0..iters {
        let logits: Vec<f64> = (0..k)
            .map(|a| {
                let grad = s[a] - beta * ((p[a] / reference[a]).ln() + 1.0);
                p[a].ln() + step * grad
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        p = w.iter().map(|v| v / z).collect();
    }
    p
}

/// Central difference of `f` along coordinate `i`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[i] += h;
    b[i] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}
