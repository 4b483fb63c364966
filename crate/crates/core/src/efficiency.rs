//! Packets received per generation and the resulting efficiency.
//!
//! `M_i` counts every packet the sink receives while a generation that still needs
//! `i` degrees of freedom is being completed, including those that arrive after
//! decoding became possible in the final round.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::kernel::{binomial_pmf, TransitionKernel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    /// `E[M_k]`, packets.
    pub expected_received: f64,
    /// `k / E[M_k]`.
    pub eta: f64,
}

/// `E[M_ij]`: expected packets received on a round that moves state `i` to `j`.
pub fn received_on_transition(kernel: &TransitionKernel, i: usize, j: usize) -> Result<f64> {
    if i == 0 || i > kernel.k() || j > i {
        return Err(domain("received_on_transition", format!("no transition {i} -> {j}")));
    }
    let a = kernel.entry(i, j);
    if a <= 0.0 {
        return Err(domain(
            "received_on_transition",
            format!("transition {i} -> {j} has zero probability"),
        ));
    }
    if j > 0 {
        return Ok((i - j) as f64);
    }
    let q = 1.0 - kernel.epsilon();
    let mut weighted = 0.0;
    for (n, pn) in kernel.count_mix(i).support() {
        if n < i {
            continue;
        }
        let pmf = binomial_pmf(n, q);
        weighted += pn * (i..=n).map(|x| x as f64 * pmf[x]).sum::<f64>();
    }
    Ok(weighted / a)
}

/// `E[M_k]` from the recursion over states `1..=k`.
pub fn expected_received(kernel: &TransitionKernel) -> Result<f64> {
    let k = kernel.k();
    let mut m = vec![0.0; k + 1];
    for i in 1..=k {
        let stay = kernel.entry(i, i);
        if stay >= 1.0 {
            return Err(domain(
                "expected_received",
                format!("state {i} never makes progress"),
            ));
        }
        let mut acc = 0.0;
        for j in 0..i {
            let a = kernel.entry(i, j);
            if a > 0.0 {
                acc += (received_on_transition(kernel, i, j)? + m[j]) * a;
            }
        }
        m[i] = acc / (1.0 - stay);
    }
    Ok(m[k])
}

/// `η_k = k / E[M_k]`.
pub fn efficiency(kernel: &TransitionKernel, k: usize) -> Result<EfficiencyResult> {
    if k != kernel.k() {
        return Err(domain(
            "efficiency",
            format!("kernel was built for k = {}, not {k}", kernel.k()),
        ));
    }
    let expected_received = expected_received(kernel)?;
    Ok(EfficiencyResult {
        expected_received,
        eta: k as f64 / expected_received,
    })
}
