//! Mean and second moment of the in-order delivery delay.
//!
//! The delay of a packet is conditioned on `Y`, the rounds its own generation
//! needs, and `Z`, the rounds the slowest of the `b - 1` earlier in-flight
//! generations needs. Four regimes follow:
//!
//! | case | condition           | what holds packets back                          |
//! |------|---------------------|--------------------------------------------------|
//! | 1    | `y = 1, z = 1`      | the first-round coded packets                    |
//! | 2    | `y > 1, z = 1`      | the generation's own retransmission rounds       |
//! | 3    | `z > y, z > 1`      | an earlier generation that finished in round `z` |
//! | 4    | `y >= z, z > 1`     | both: prefix waits on the earlier generation, the rest on the decode |
//!
//! Case 1 replaces the number of coded packets needed to decode by one, so the
//! assembled mean is a lower bound. Retransmission rounds cost `2 t_p` each and no
//! transmission time.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::kernel::TransitionKernel;
use crate::model::{ChannelParams, CodingParams};
use crate::moments::{prefix_moments, PrefixMoments, RoundProfile, StragglerMoments};

/// Which of the four conditional regimes a `(y, z)` cell belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayCase {
    FirstRound,
    Retransmitted,
    BlockedByEarlier,
    Mixed,
}

impl DelayCase {
    pub fn classify(y: usize, z: usize) -> Option<Self> {
        match (y, z) {
            (0, _) | (_, 0) => None,
            (1, 1) => Some(Self::FirstRound),
            (_, 1) => Some(Self::Retransmitted),
            (y, z) if z > y => Some(Self::BlockedByEarlier),
            _ => Some(Self::Mixed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayOptions {
    /// Cells whose weight `p_Y(y) p_Z(z)` is below this are skipped.
    pub weight_threshold: f64,
}

impl Default for DelayOptions {
    fn default() -> Self {
        Self {
            weight_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayMoments {
    /// Lower bound on `E[D]`, seconds.
    pub mean: f64,
    /// `E[D^2]`, seconds squared.
    pub second_moment: f64,
    pub variance: f64,
    /// Probability weight of the skipped `(y, z)` cells.
    pub truncated_mass: f64,
    pub terms_evaluated: usize,
}

impl DelayMoments {
    pub fn std(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Everything needed to evaluate the conditional delay cells of one
/// configuration.
#[derive(Debug, Clone)]
pub struct DelayModel {
    channel: ChannelParams,
    coding: CodingParams,
    kernel: TransitionKernel,
    prefix: PrefixMoments,
}

impl DelayModel {
    pub fn new(channel: &ChannelParams, coding: &CodingParams) -> Result<Self> {
        let kernel = TransitionKernel::build(channel, coding)?;
        Self::with_kernel(channel, coding, kernel)
    }

    pub fn with_kernel(
        channel: &ChannelParams,
        coding: &CodingParams,
        kernel: TransitionKernel,
    ) -> Result<Self> {
        let prefix = prefix_moments(channel.epsilon, coding.k)?;
        Ok(Self {
            channel: *channel,
            coding: *coding,
            kernel,
            prefix,
        })
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn prefix(&self) -> &PrefixMoments {
        &self.prefix
    }

    fn straggler(&self, z: usize) -> Result<StragglerMoments> {
        let n = self.coding.blocking_generations();
        if n == 0 {
            return Err(domain(
                "conditional delay",
                "no earlier generation is in flight, so Z is always 1",
            ));
        }
        RoundProfile::at(&self.kernel, z).moments(n, z)
    }

    fn case(y: usize, z: usize) -> Result<DelayCase> {
        DelayCase::classify(y, z)
            .ok_or_else(|| domain("conditional delay", "rounds start at 1"))
    }

    /// `E[D | Y = y, Z = z]`.
    pub fn conditional_mean(&self, y: usize, z: usize) -> Result<f64> {
        let (ts, tp) = (self.channel.t_s, self.channel.t_p);
        let k = self.coding.k as f64;
        let nk = self.coding.n_k();
        let (yf, zf) = (y as f64, z as f64);
        Ok(match Self::case(y, z)? {
            DelayCase::FirstRound => {
                let p = &self.prefix;
                ts / (2.0 * k) * (p.s1(2) - (2.0 * k + 1.0) * p.s1(1) + k * (k + 3.0)) + tp
            }
            DelayCase::Retransmitted => {
                let (m1, m2) = (self.prefix.s2(1)?, self.prefix.s2(2)?);
                (m2 / (2.0 * k) - (2.0 * nk - 1.0) * m1 / (2.0 * k) + nk - k / 2.0 + 0.5) * ts
                    - (2.0 / k * (yf - 1.0) * m1 - 2.0 * yf + 1.0) * tp
            }
            DelayCase::BlockedByEarlier => {
                let v = self.straggler(z)?;
                (2.0 * zf - 1.0) * tp - (v.v1 * nk + (k - 1.0) / 2.0) * ts
            }
            DelayCase::Mixed => {
                let v = self.straggler(z)?;
                let m1 = self.prefix.s2(1)?;
                (2.0 * (zf - yf) / k * m1 + 2.0 * yf - 1.0) * tp
                    - (nk / k * (v.v1 + 1.0) * m1 - nk + k / 2.0 - 0.5) * ts
            }
        })
    }

    /// `E[D^2 | Y = y, Z = z]`.
    pub fn conditional_second_moment(&self, y: usize, z: usize) -> Result<f64> {
        let (ts, tp) = (self.channel.t_s, self.channel.t_p);
        let k = self.coding.k as f64;
        let nk = self.coding.n_k();
        let (yf, zf) = (y as f64, z as f64);
        let (ts2, tp2, tpts) = (ts * ts, tp * tp, tp * ts);
        Ok(match Self::case(y, z)? {
            DelayCase::FirstRound => {
                let p = &self.prefix;
                tp2 + (k + 3.0) * tpts + (2.0 * k * k + 9.0 * k + 13.0) / 6.0 * ts2
                    - ((k + 3.0 + 7.0 / (6.0 * k)) * ts2 + (2.0 * k + 1.0) / k * tpts) * p.s1(1)
                    + ((2.0 * k + 3.0) / (2.0 * k) * ts2 + tpts / k) * p.s1(2)
                    - ts2 / (3.0 * k) * p.s1(3)
            }
            DelayCase::Retransmitted => {
                let (m1, m2, m3) = (self.prefix.s2(1)?, self.prefix.s2(2)?, self.prefix.s2(3)?);
                let w = 2.0 * yf - 1.0;
                // The prefix of s packets contributes s (t_s + t_p)^2 / k.
                (nk * (nk - k + 1.0) + (2.0 * k.powi(3) - 3.0 * k * k + k) / (6.0 * k)) * ts2
                    + (2.0 * nk * w - 2.0 * yf * (k - 1.0) + k - 1.0) * tpts
                    + ((2.0 * nk + 1.0) * ts2 + 2.0 * w * tpts) / (2.0 * k) * m2
                    - ts2 / (3.0 * k) * m3
                    - ((nk * nk + nk + 1.0 / 6.0) * ts2 + w * (2.0 * nk + 1.0) * tpts + w * w * tp2
                        - (ts + tp) * (ts + tp))
                        / k
                        * m1
                    + w * w * tp2
            }
            DelayCase::BlockedByEarlier => {
                let v = self.straggler(z)?;
                let w = 2.0 * zf - 1.0;
                (nk * nk * v.v2 + (k - 1.0) * (nk * v.v1 + k / 3.0 - 1.0 / 6.0)) * ts2
                    - w * (2.0 * nk * v.v1 + k - 1.0) * tpts
                    + w * w * tp2
            }
            DelayCase::Mixed => {
                let v = self.straggler(z)?;
                let (m1, m2) = (self.prefix.s2(1)?, self.prefix.s2(2)?);
                let wy = 2.0 * yf - 1.0;
                let wz = 2.0 * zf - 1.0;
                wy * ((2.0 * nk - k + 1.0) * tpts + wy * tp2)
                    + (nk * (nk - k + 1.0) + (2.0 * k * k - 3.0 * k + 1.0) / 6.0) * ts2
                    + (nk * (v.v1 + 1.0) * ts2 + 2.0 * (yf - zf) * tpts) / k * m2
                    + (nk * (nk * (v.v2 - 1.0) - v.v1 - 1.0) * ts2
                        - 2.0 * (nk * (v.v1 * wz + wy) + yf - zf) * tpts
                        - 4.0 * (yf - zf) * (yf + zf - 1.0) * tp2)
                        / k
                        * m1
            }
        })
    }

    /// `p_{Z_{b-1}}(z)`; degenerate at `z = 1` when no earlier generation is in
    /// flight.
    pub fn p_blocking(&self, z: usize) -> Result<f64> {
        match self.coding.blocking_generations() {
            0 => Ok(if z == 1 { 1.0 } else { 0.0 }),
            n => self.kernel.p_z(n, z),
        }
    }

    pub fn expected(&self) -> Result<DelayMoments> {
        self.expected_with(&DelayOptions::default())
    }

    /// Sums the conditional cells weighted by `p_Y(y) p_Z(z)`, in increasing
    /// `(z, y)` order.
    pub fn expected_with(&self, opts: &DelayOptions) -> Result<DelayMoments> {
        // Beyond the kernel horizon p_Y < 1e-12 and p_Z < (b - 1) * 1e-12.
        let horizon = self.kernel.horizon();
        let z_max = if self.coding.blocking_generations() == 0 {
            1
        } else {
            horizon
        };
        let mut mean = 0.0;
        let mut second = 0.0;
        let mut included = 0.0;
        let mut terms = 0;
        for z in 1..=z_max {
            let pz = self.p_blocking(z)?;
            if pz < opts.weight_threshold {
                continue;
            }
            for y in 1..=horizon {
                let w = self.kernel.p_y(y) * pz;
                if w < opts.weight_threshold {
                    continue;
                }
                mean += w * self.conditional_mean(y, z)?;
                second += w * self.conditional_second_moment(y, z)?;
                included += w;
                terms += 1;
            }
        }
        let mut variance = second - mean * mean;
        if variance < 0.0 && variance > -1e-9 * second.max(1.0) {
            variance = 0.0;
        }
        Ok(DelayMoments {
            mean,
            second_moment: second,
            variance,
            truncated_mass: (1.0 - included).max(0.0),
            terms_evaluated: terms,
        })
    }
}

/// `E[D | Y = y, Z_{b-1} = z]` for an already built kernel and prefix moments.
pub fn conditional_mean(
    y: usize,
    z: usize,
    channel: &ChannelParams,
    coding: &CodingParams,
    kernel: &TransitionKernel,
    prefix: &PrefixMoments,
) -> Result<f64> {
    model_from(channel, coding, kernel, prefix).conditional_mean(y, z)
}

/// `E[D^2 | Y = y, Z_{b-1} = z]`.
pub fn conditional_second_moment(
    y: usize,
    z: usize,
    channel: &ChannelParams,
    coding: &CodingParams,
    kernel: &TransitionKernel,
    prefix: &PrefixMoments,
) -> Result<f64> {
    model_from(channel, coding, kernel, prefix).conditional_second_moment(y, z)
}

fn model_from(
    channel: &ChannelParams,
    coding: &CodingParams,
    kernel: &TransitionKernel,
    prefix: &PrefixMoments,
) -> DelayModel {
    DelayModel {
        channel: *channel,
        coding: *coding,
        kernel: kernel.clone(),
        prefix: *prefix,
    }
}

/// Lower bound on the mean in-order delay and the matching second moment.
pub fn expected_delay(channel: &ChannelParams, coding: &CodingParams) -> Result<DelayMoments> {
    DelayModel::new(channel, coding)?.expected()
}
