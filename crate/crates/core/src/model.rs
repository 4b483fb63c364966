//! Scenario parameters and the timing arithmetic shared by the analysis and the
//! simulator.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Rounds `x` to the nearest integer when it is within floating-point noise of
/// one, so that e.g. `1.1 / 0.9 * 9.0` counts as exactly 11.
fn snap(x: f64) -> Option<f64> {
    let r = x.round();
    ((x - r).abs() <= 1e-9 * r.abs().max(1.0)).then_some(r)
}

pub(crate) fn ceil_snapped(x: f64) -> f64 {
    snap(x).unwrap_or_else(|| x.ceil())
}

/// An i.i.d. erasure channel with a fixed slot time and propagation delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Packet erasure probability.
    pub epsilon: f64,
    pub rate_bps: f64,
    pub packet_bits: f64,
    /// Slot (packet transmission) time in seconds.
    pub t_s: f64,
    /// One-way propagation delay in seconds.
    pub t_p: f64,
    /// `t_s + 2 t_p`; acknowledgements are assumed to be negligibly small.
    pub rtt: f64,
    /// Bandwidth-delay product in packets.
    pub bdp: u64,
}

impl ChannelParams {
    /// Builds a channel from its one-way propagation delay.
    pub fn new(epsilon: f64, rate_bps: f64, packet_bits: f64, t_p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(invalid("epsilon", format!("{epsilon} is not in [0, 1)")));
        }
        if !(rate_bps > 0.0 && rate_bps.is_finite()) {
            return Err(invalid("rate_bps", format!("{rate_bps} must be positive")));
        }
        if !(packet_bits > 0.0 && packet_bits.is_finite()) {
            return Err(invalid("packet_bits", format!("{packet_bits} must be positive")));
        }
        if !(t_p >= 0.0 && t_p.is_finite()) {
            return Err(invalid("t_p", format!("{t_p} must be non-negative")));
        }
        let t_s = packet_bits / rate_bps;
        let rtt = t_s + 2.0 * t_p;
        let bdp = (ceil_snapped(rtt * rate_bps / packet_bits) as u64).max(1);
        Ok(Self {
            epsilon,
            rate_bps,
            packet_bits,
            t_s,
            t_p,
            rtt,
            bdp,
        })
    }

    /// Builds a channel from its round-trip time, `t_p = (rtt - t_s) / 2`.
    pub fn from_rtt(epsilon: f64, rate_bps: f64, packet_bits: f64, rtt: f64) -> Result<Self> {
        if !(rate_bps > 0.0 && packet_bits > 0.0) {
            return Self::new(epsilon, rate_bps, packet_bits, 0.0);
        }
        let t_s = packet_bits / rate_bps;
        if !(rtt >= t_s) {
            return Err(invalid(
                "rtt",
                format!("{rtt} s is shorter than one slot ({t_s} s)"),
            ));
        }
        Self::new(epsilon, rate_bps, packet_bits, (rtt - t_s) / 2.0)
    }

    /// The same channel with a different erasure rate.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(epsilon, self.rate_bps, self.packet_bits, self.t_p)
    }

    /// Delay of a packet that is delivered as soon as it arrives.
    pub fn lossless_delay(&self) -> f64 {
        self.t_s + self.t_p
    }
}

/// Free-function form of [`ChannelParams::new`].
pub fn derive_channel(
    epsilon: f64,
    rate_bps: f64,
    packet_bits: f64,
    t_p: f64,
) -> Result<ChannelParams> {
    ChannelParams::new(epsilon, rate_bps, packet_bits, t_p)
}

/// Redundancy that leaves a relative margin `x` above the erasure rate:
/// `R = (1 + x) / (1 - epsilon)`.
pub fn redundancy_from_margin(x: f64, epsilon: f64) -> Result<f64> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(invalid("margin", format!("{x} must be non-negative")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(invalid("epsilon", format!("{epsilon} is not in [0, 1)")));
    }
    Ok((1.0 + x) / (1.0 - epsilon))
}

/// Number of packets sent in a round that must deliver `i` degrees of freedom.
///
/// `R * i` is rarely an integer; the ceiling is used with probability
/// `R*i - floor(R*i)` and the floor otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountMix {
    pub low: usize,
    pub high: usize,
    /// Probability of sending `high` packets.
    pub p_high: f64,
}

impl CountMix {
    pub fn p_low(&self) -> f64 {
        1.0 - self.p_high
    }

    /// Support points with nonzero probability, in increasing order.
    pub fn support(&self) -> Vec<(usize, f64)> {
        if self.low == self.high {
            vec![(self.low, 1.0)]
        } else {
            vec![(self.low, self.p_low()), (self.high, self.p_high)]
        }
    }

    /// Picks a count from a uniform draw `u` in `[0, 1)`.
    pub fn pick(&self, u: f64) -> usize {
        if u < self.p_high {
            self.high
        } else {
            self.low
        }
    }

    pub fn mean(&self) -> f64 {
        self.low as f64 * self.p_low() + self.high as f64 * self.p_high
    }
}

/// Distribution of the per-round packet count for `i` missing degrees of freedom.
pub fn coded_count_distribution(redundancy: f64, i: usize) -> Result<CountMix> {
    if !(redundancy >= 1.0 && redundancy.is_finite()) {
        return Err(invalid("redundancy", format!("{redundancy} must be >= 1")));
    }
    if i == 0 {
        return Err(invalid("i", "at least one degree of freedom is required"));
    }
    let x = redundancy * i as f64;
    if let Some(r) = snap(x) {
        let n = r as usize;
        return Ok(CountMix {
            low: n,
            high: n,
            p_high: 0.0,
        });
    }
    let low = x.floor();
    Ok(CountMix {
        low: low as usize,
        high: low as usize + 1,
        p_high: x - low,
    })
}

/// Which packet count divides the BDP when counting in-flight generations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BDefinition {
    /// `b = ceil(BDP / (R k))`.
    #[default]
    NK,
    /// `b = ceil(BDP / k)`.
    K,
}

impl std::str::FromStr for BDefinition {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "n_k" | "nk" | "n-k" => Ok(Self::NK),
            "k" => Ok(Self::K),
            other => Err(invalid("b_definition", format!("unknown value `{other}`"))),
        }
    }
}

impl std::fmt::Display for BDefinition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NK => "n_k",
            Self::K => "k",
        })
    }
}

/// Generation size, redundancy and the derived in-flight generation count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingParams {
    pub k: usize,
    pub redundancy: f64,
    /// First-round packet count distribution for `R k`.
    pub first_round: CountMix,
    /// Generations in flight within one BDP.
    pub b: usize,
    pub b_definition: BDefinition,
    /// Set when `R k >= BDP`, which the delay model assumes never happens.
    pub exceeds_bdp: bool,
}

impl CodingParams {
    pub fn new(k: usize, redundancy: f64, channel: &ChannelParams) -> Result<Self> {
        Self::with_b_definition(k, redundancy, channel, BDefinition::default())
    }

    pub fn with_b_definition(
        k: usize,
        redundancy: f64,
        channel: &ChannelParams,
        b_definition: BDefinition,
    ) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k", "generation size must be at least 1"));
        }
        let first_round = coded_count_distribution(redundancy, k)?;
        let n_k = redundancy * k as f64;
        let divisor = match b_definition {
            BDefinition::NK => n_k,
            BDefinition::K => k as f64,
        };
        let b = (ceil_snapped(channel.bdp as f64 / divisor) as usize).max(1);
        let exceeds_bdp = n_k >= channel.bdp as f64;
        if exceeds_bdp {
            log::warn!(
                "R*k = {n_k} is not below the BDP of {} packets; the delay model assumes it is",
                channel.bdp
            );
        }
        Ok(Self {
            k,
            redundancy,
            first_round,
            b,
            b_definition,
            exceeds_bdp,
        })
    }

    /// `R k` as a real number.
    pub fn n_k(&self) -> f64 {
        self.redundancy * self.k as f64
    }

    pub fn n_k_low(&self) -> usize {
        self.first_round.low
    }

    pub fn n_k_high(&self) -> usize {
        self.first_round.high
    }

    /// Probability that the ceiling `n_k_high` is used.
    pub fn frac(&self) -> f64 {
        self.first_round.p_high
    }

    /// Earlier generations that can hold up delivery of the newest one.
    pub fn blocking_generations(&self) -> usize {
        self.b - 1
    }
}
