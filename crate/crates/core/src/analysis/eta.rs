//! Pessimism and optimism weights suggested by the generalization bounds.

use crate::error::{Error, Result};
use crate::math::{self, ln, sqrt};

/// `log |N_ε(R)|` for `ε = 1/n`, using the crude `(R n)^{|X||A|}` covering
/// bound with unit constant. Clamped at zero for tiny `R n`, where the
/// cover has a single element.
pub fn log_cover_size(n: usize, reward_bound: f64, n_x: usize, n_a: usize) -> f64 {
    ((n_x * n_a) as f64 * ln(reward_bound * n as f64)).max(0.0)
}

fn check(n: usize, reward_bound: f64, xi_l1: f64, delta: f64, n_x: usize, n_a: usize) -> Result<()> {
    if n == 0 || n_x == 0 || n_a == 0 {
        return Err(Error::Invalid("sample count and instance sizes must be positive".into()));
    }
    if !(reward_bound > 0.0 && reward_bound.is_finite()) {
        return Err(Error::OutOfRange {
            what: "reward bound",
            value: reward_bound,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if !(xi_l1 >= 0.0 && xi_l1.is_finite()) {
        return Err(Error::OutOfRange {
            what: "noise l1 norm",
            value: xi_l1,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::OutOfRange {
            what: "delta",
            value: delta,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// `η = 2√(‖ξ*‖₁ + 5 log(|N|/δ)) / (√N (3 + e^R))`.
pub fn theorem_eta_offline(n: usize, reward_bound: f64, xi_l1: f64, delta: f64, n_x: usize, n_a: usize) -> Result<f64> {
    check(n, reward_bound, xi_l1, delta, n_x, n_a)?;
    let log_term = log_cover_size(n, reward_bound, n_x, n_a) + ln(1.0 / delta);
    Ok(2.0 * sqrt(xi_l1 + 5.0 * log_term) / (sqrt(n as f64) * (3.0 + math::exp(reward_bound))))
}

/// `η = √(log(4T|N|/δ) + ‖ξ*‖₁) / ((3 + e^R) √(T G_on))`.
pub fn theorem_eta_online(
    t: usize,
    reward_bound: f64,
    xi_l1: f64,
    delta: f64,
    g_on: f64,
    n_x: usize,
    n_a: usize,
) -> Result<f64> {
    check(t, reward_bound, xi_l1, delta, n_x, n_a)?;
    if !(g_on >= 1.0 && g_on.is_finite()) {
        return Err(Error::OutOfRange {
            what: "coverability coefficient",
            value: g_on,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    let log_term = ln(4.0 * t as f64 / delta) + log_cover_size(t, reward_bound, n_x, n_a);
    Ok(sqrt(log_term + xi_l1) / ((3.0 + math::exp(reward_bound)) * sqrt(t as f64 * g_on)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offline_substitution() {
        // 4·ln(1024) + ln(10), then 2√(5·that) / (32 (3+e))
        let eta = theorem_eta_offline(1024, 1.0, 0.0, 0.1, 2, 2).unwrap();
        assert!((eta - 0.133_93).abs() < 1e-5);
    }

    #[test]
    fn offline_shrinks_with_n() {
        let mut last = f64::INFINITY;
        for k in 4..24 {
            let eta = theorem_eta_offline(1 << k, 2.0, 3.0, 0.05, 3, 4).unwrap();
            assert!(eta > 0.0 && eta < last);
            last = eta;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn online_shrinks_with_t() {
        let mut last = f64::INFINITY;
        for k in 2..24 {
            let eta = theorem_eta_online(1 << k, 1.0, 0.0, 0.1, 2.0, 2, 2).unwrap();
            assert!(eta > 0.0 && eta < last);
            last = eta;
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(theorem_eta_offline(0, 1.0, 0.0, 0.1, 1, 2).is_err());
        assert!(theorem_eta_offline(10, 1.0, 0.0, 1.0, 1, 2).is_err());
        assert!(theorem_eta_online(10, 1.0, 0.0, 0.1, 0.5, 1, 2).is_err());
    }
}
