//! Moments of the loss-free prefix length `S` and of the straggler position `V`.
//!
//! `S` counts the systematic packets of a generation that arrive before its first
//! loss. Given that the generation decodes in its first round it is a geometric
//! prefix capped at `k`; given that it does not, it is a geometric variable
//! truncated to `0..k`.
//!
//! `V` is the distance, in generations, from the newest generation back to the
//! last-sent one among `N` concurrent generations that finished in the slowest
//! round `z`. Conditioned on `z` it is a truncated geometric variable on `0..N`
//! with ratio `rho = [P^{z-1}]_{k0} / [P^z]_{k0}`.
//!
//! The closed forms contain `1/eps^3` and `1/(1 - rho)` factors that cancel
//! catastrophically near their limits, so they are evaluated through
//! rearrangements built on `expm1`/`ln_1p` and short Taylor series.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::kernel::TransitionKernel;

/// `P(S = s | Y = 1)` when `first_round`, otherwise `P(S = s | Y != 1)`.
pub fn prefix_pmf(epsilon: f64, k: usize, first_round: bool, s: usize) -> f64 {
    let q = 1.0 - epsilon;
    match (first_round, s) {
        (_, s) if s > k => 0.0,
        (true, s) if s == k => q.powi(s as i32),
        (true, s) => epsilon * q.powi(s as i32),
        (false, s) if s == k => 0.0,
        (false, s) => {
            let all_through = -(k as f64 * (-epsilon).ln_1p()).exp_m1();
            epsilon * q.powi(s as i32) / all_through
        }
    }
}

/// Moment generating function of `S` given a first-round decode.
pub fn prefix_mgf(epsilon: f64, k: usize, t: f64) -> f64 {
    let q = 1.0 - epsilon;
    let kf = k as f64;
    let tail = (kf * t).exp() * q.powf(kf);
    epsilon * (1.0 - tail) / (1.0 - t.exp() + epsilon * t.exp()) + tail
}

/// First three moments of `S`, given a first-round decode and given at least one
/// retransmission round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixMoments {
    /// `E[S^i | Y = 1]` for `i = 1, 2, 3`.
    pub first_round: [f64; 3],
    /// `E[S^i | Y != 1]`; `None` on a lossless channel where `Y = 1` surely.
    pub retransmitted: Option<[f64; 3]>,
}

impl PrefixMoments {
    /// `E[S^i | Y = 1]`, `i` in `1..=3`.
    pub fn s1(&self, i: usize) -> f64 {
        self.first_round[i - 1]
    }

    /// `E[S^i | Y != 1]`, `i` in `1..=3`.
    pub fn s2(&self, i: usize) -> Result<f64> {
        self.retransmitted.map(|m| m[i - 1]).ok_or_else(|| {
            domain(
                "prefix moments",
                "a lossless channel never needs a retransmission round",
            )
        })
    }
}

/// `expm1(l) - l`.
fn expm1_minus_identity(l: f64) -> f64 {
    if l.abs() < 0.5 {
        let mut term = l * l / 2.0;
        let mut sum = 0.0;
        for n in 3..40 {
            sum += term;
            term *= l / n as f64;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        l.exp_m1() - l
    }
}

/// `-ln(1 - e) - e`.
fn neg_ln1m_minus_identity(e: f64) -> f64 {
    if e < 0.1 {
        let mut pow = e * e;
        let mut sum = 0.0;
        for n in 2..60 {
            let term = pow / n as f64;
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
            pow *= e;
        }
        sum
    } else {
        -(-e).ln_1p() - e
    }
}

/// Closed-form moments of `S`.
pub fn prefix_moments(epsilon: f64, k: usize) -> Result<PrefixMoments> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid("epsilon", format!("{epsilon} is not in [0, 1]")));
    }
    if k == 0 {
        return Err(invalid("k", "generation size must be at least 1"));
    }
    let kf = k as f64;
    if epsilon == 0.0 {
        return Ok(PrefixMoments {
            first_round: [kf, kf * kf, kf * kf * kf],
            retransmitted: None,
        });
    }
    if epsilon == 1.0 {
        return Ok(PrefixMoments {
            first_round: [0.0; 3],
            retransmitted: Some([0.0; 3]),
        });
    }

    let e = epsilon;
    let q = 1.0 - e;
    // (1 - e)^k in log space
    let l = kf * (-e).ln_1p();
    let qk = l.exp();
    let one_minus_qk = -l.exp_m1();
    // 1 - (k e + 1)(1 - e)^k, rearranged so that no O(1) terms cancel
    let x = -expm1_minus_identity(l) + kf * neg_ln1m_minus_identity(e) - kf * e * l.exp_m1();

    let m1 = q / e * one_minus_qk;
    let m2 = 2.0 * q / (e * e) * x - m1;
    let m3 = 6.0 * q.powi(3) / e.powi(3) * x + 3.0 * q * m2 - 3.0 * kf / e * (kf + 1.0) * qk * q
        + (4.0 - 3.0 * e) * m1;
    let first_round = [m1, m2, m3];

    // with k = 1 a failed first round means the only packet was lost
    let mut retransmitted = [0.0; 3];
    if k == 1 {
        return Ok(PrefixMoments {
            first_round,
            retransmitted: Some(retransmitted),
        });
    }
    let mut kpow = 1.0;
    for (i, slot) in retransmitted.iter_mut().enumerate() {
        kpow *= kf;
        *slot = (first_round[i] - kpow * qk) / one_minus_qk;
    }
    Ok(PrefixMoments {
        first_round,
        retransmitted: Some(retransmitted),
    })
}

/// `E[V | Z = z]` and `E[V^2 | Z = z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StragglerMoments {
    pub v1: f64,
    pub v2: f64,
}

/// `1/expm1(x) - 1/x`.
fn g(x: f64) -> f64 {
    if x < 0.05 {
        let x2 = x * x;
        -0.5 + x * (1.0 / 12.0 - x2 * (1.0 / 720.0 - x2 * (1.0 / 30240.0 - x2 / 1_209_600.0)))
    } else {
        1.0 / x.exp_m1() - 1.0 / x
    }
}

/// `(g(x) + 1/2) / x`.
fn q(x: f64) -> f64 {
    if x < 0.05 {
        let x2 = x * x;
        1.0 / 12.0 - x2 * (1.0 / 720.0 - x2 * (1.0 / 30240.0 - x2 / 1_209_600.0))
    } else {
        (g(x) + 0.5) / x
    }
}

/// Round statistics feeding the straggler distribution for a round `z`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RoundProfile {
    /// `[P^{z-1}]_{k0}`.
    pub prev_cdf: f64,
    /// `p_Y(z)`.
    pub p_y: f64,
}

impl RoundProfile {
    pub fn at(kernel: &TransitionKernel, z: usize) -> Self {
        Self {
            prev_cdf: kernel.absorption_cdf(z.saturating_sub(1)),
            p_y: kernel.p_y(z),
        }
    }

    /// `-ln(rho)`, or `None` when `rho = 0` (nothing can finish before round `z`).
    fn log_ratio(&self) -> Option<f64> {
        (self.prev_cdf > 0.0).then(|| (self.p_y / self.prev_cdf).ln_1p())
    }

    fn check(&self, n: usize, z: usize) -> Result<()> {
        if n == 0 {
            return Err(domain("straggler position", "at least one generation is required"));
        }
        if z == 0 || self.p_y <= 0.0 {
            return Err(domain(
                "straggler position",
                format!("no generation can finish in round {z}"),
            ));
        }
        Ok(())
    }

    pub fn pmf(&self, n: usize, z: usize, v: usize) -> Result<f64> {
        self.check(n, z)?;
        if v >= n {
            return Err(domain(
                "straggler position",
                format!("position {v} is outside 0..{n}"),
            ));
        }
        let Some(u) = self.log_ratio() else {
            return Ok(if v == 0 { 1.0 } else { 0.0 });
        };
        // beta rho^v / (1 - rho^N) with rho = exp(-u)
        Ok((-u).exp_m1() * (-(v as f64) * u).exp() / (-(n as f64) * u).exp_m1())
    }

    pub fn moments(&self, n: usize, z: usize) -> Result<StragglerMoments> {
        self.check(n, z)?;
        let Some(u) = self.log_ratio() else {
            return Ok(StragglerMoments { v1: 0.0, v2: 0.0 });
        };
        if n == 1 {
            return Ok(StragglerMoments { v1: 0.0, v2: 0.0 });
        }
        let nf = n as f64;
        let (gu, gn) = (g(u), g(nf * u));
        let d = q(u) - nf * nf * q(nf * u);
        let v1 = (nf - 1.0) / 2.0 + u * d;
        let v2 = 2.0 * d + gu + 2.0 * gu * gu - nf * nf * gn - 2.0 * nf * gu * gn;
        Ok(StragglerMoments { v1, v2 })
    }
}

/// Probability that the last of `n` generations to finish in round `z` sits `v`
/// generations before the newest one.
pub fn straggler_pmf(kernel: &TransitionKernel, n: usize, z: usize, v: usize) -> Result<f64> {
    RoundProfile::at(kernel, z).pmf(n, z, v)
}

/// Closed-form first and second moments of the straggler position.
pub fn straggler_moments(kernel: &TransitionKernel, n: usize, z: usize) -> Result<StragglerMoments> {
    RoundProfile::at(kernel, z).moments(n, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelOptions;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn direct(eps: f64, k: usize, first: bool, i: i32) -> f64 {
        (0..=k)
            .map(|s| (s as f64).powi(i) * prefix_pmf(eps, k, first, s))
            .sum()
    }

    #[test]
    fn pmf_examples() {
        assert_abs_diff_eq!(prefix_pmf(0.1, 4, true, 4), 0.6561, epsilon = 1e-15);
        assert_abs_diff_eq!(prefix_pmf(0.1, 4, true, 1), 0.09, epsilon = 1e-15);
        assert_eq!(prefix_pmf(0.1, 4, false, 4), 0.0);
        assert_eq!(prefix_pmf(0.1, 4, true, 5), 0.0);
    }

    #[test]
    fn pmf_normalises() {
        for &eps in &[0.001, 0.01, 0.1, 0.37, 0.5, 0.9] {
            for k in 1..=64 {
                for first in [true, false] {
                    let total: f64 = (0..=k).map(|s| prefix_pmf(eps, k, first, s)).sum();
                    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn spot_values() {
        let m = prefix_moments(0.1, 4).unwrap();
        assert_abs_diff_eq!(m.s1(1), 3.0951, epsilon = 1e-12);
        assert_abs_diff_eq!(m.s2(1).unwrap(), (3.0951 - 4.0 * 0.6561) / (1.0 - 0.6561), epsilon = 1e-12);
        assert_abs_diff_eq!(m.s2(1).unwrap(), 1.36871, epsilon = 1e-5);
    }

    #[test]
    fn limits() {
        let m = prefix_moments(0.0, 5).unwrap();
        assert_eq!(m.first_round, [5.0, 25.0, 125.0]);
        assert!(m.s2(1).is_err());
        let m = prefix_moments(1.0 - 1e-9, 7).unwrap();
        assert!(m.s1(1) < 1e-8);
        assert_eq!(prefix_moments(1.0, 7).unwrap().s1(1), 0.0);
    }

    #[test]
    fn closed_forms_match_direct_sums() {
        for i in 1..=50 {
            let eps = i as f64 / 100.0;
            for k in 1..=64 {
                let m = prefix_moments(eps, k).unwrap();
                for p in 1..=3 {
                    assert_relative_eq!(m.s1(p), direct(eps, k, true, p as i32), max_relative = 1e-9);
                    assert_relative_eq!(m.s2(p).unwrap(), direct(eps, k, false, p as i32), max_relative = 1e-9);
                }
            }
        }
    }

    #[test]
    fn large_generations_do_not_underflow() {
        let m = prefix_moments(0.3, 5000).unwrap();
        // (1 - e)^k underflows; S is then an untruncated geometric prefix
        let q: f64 = 0.7;
        assert_relative_eq!(m.s1(1), q / 0.3, max_relative = 1e-12);
        assert_relative_eq!(m.s2(1).unwrap(), q / 0.3, max_relative = 1e-12);
        assert!(m.s1(2) >= m.s1(1) * m.s1(1));
    }

    #[test]
    fn mgf_derivatives() {
        let h = 1e-5;
        for &(eps, k) in &[(0.1, 4), (0.05, 20), (0.3, 9)] {
            let m = prefix_moments(eps, k).unwrap();
            let f = |t: f64| prefix_mgf(eps, k, t);
            let d1 = (f(h) - f(-h)) / (2.0 * h);
            let d2 = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
            assert_relative_eq!(d1, m.s1(1), max_relative = 1e-5);
            assert_relative_eq!(d2, m.s1(2), max_relative = 1e-5);
        }
    }

    /// Literal pmf of the straggler position; p_Z from the binomial expansion
    /// so that it avoids the cancellation in `a^N - c^N`.
    fn literal_pmf(kn: &TransitionKernel, n: usize, z: usize) -> Vec<f64> {
        let a = kn.absorption_cdf(z);
        let c = kn.absorption_cdf(z - 1);
        let py = kn.p_y(z);
        let mut pz = 0.0;
        let mut choose = 1.0;
        for i in 1..=n {
            choose *= (n - i + 1) as f64 / i as f64;
            pz += choose * py.powi(i as i32) * c.powi((n - i) as i32);
        }
        (0..n)
            .map(|v| a.powi((n - v - 1) as i32) * c.powi(v as i32) * py / pz)
            .collect()
    }

    #[test]
    fn straggler_closed_forms_match_pmf_sums() {
        for &(eps, k, r) in &[(0.1, 2, 2.0), (0.05, 4, 1.25), (0.3, 6, 1.5), (0.3, 1, 1.0)] {
            let kn = TransitionKernel::from_parts(eps, k, r, &KernelOptions::default()).unwrap();
            for n in 1..=8 {
                for z in 1..=6 {
                    if kn.p_y(z) <= 0.0 {
                        continue;
                    }
                    let pmf = literal_pmf(&kn, n, z);
                    let m = straggler_moments(&kn, n, z).unwrap();
                    let v1: f64 = pmf.iter().enumerate().map(|(v, p)| v as f64 * p).sum();
                    let v2: f64 = pmf.iter().enumerate().map(|(v, p)| (v * v) as f64 * p).sum();
                    assert_abs_diff_eq!(m.v1, v1, epsilon = 1e-10);
                    assert_abs_diff_eq!(m.v2, v2, epsilon = 1e-10);
                    let lib: Vec<f64> = (0..n).map(|v| straggler_pmf(&kn, n, z, v).unwrap()).collect();
                    assert_abs_diff_eq!(lib.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                    for (x, y) in lib.iter().zip(&pmf) {
                        assert_abs_diff_eq!(x, y, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn single_generation_is_always_last() {
        let kn = TransitionKernel::from_parts(0.2, 3, 1.2, &KernelOptions::default()).unwrap();
        for z in 1..4 {
            assert_eq!(straggler_pmf(&kn, 1, z, 0).unwrap(), 1.0);
            assert_eq!(straggler_moments(&kn, 1, z).unwrap(), StragglerMoments { v1: 0.0, v2: 0.0 });
        }
        assert!(straggler_pmf(&kn, 3, 2, 3).is_err());
        assert!(straggler_moments(&kn, 0, 2).is_err());
    }
}
