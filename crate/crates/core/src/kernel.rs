//! Degrees-of-freedom Markov chain for one generation.
//!
//! State `i` is the number of degrees of freedom the receiver still needs. Each
//! transition is one transmission round of `n_i` packets (the floor/ceil mixture
//! of `R i`), of which a binomial number survive the channel. State 0 absorbs.
//!
//! Only the distribution of the chain started in state `k` is ever needed, so the
//! kernel iterates that row vector (`e_k P^r`) instead of forming matrix powers.
//! All rounds up to the point where the unabsorbed mass drops below the tail
//! tolerance are computed eagerly, which keeps a built kernel immutable.

use statrs::function::factorial::ln_factorial;

use crate::error::{domain, invalid, Error, Result};
use crate::model::{coded_count_distribution, ChannelParams, CodingParams, CountMix};

/// How a fractional per-round packet count `R l` becomes an integer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CountRounding {
    /// Ceiling with probability equal to the fractional part, floor otherwise.
    #[default]
    Mixture,
    Ceil,
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    pub rounding: CountRounding,
    /// Largest generation size accepted.
    pub max_k: usize,
    /// Rounds are extended until `1 - [P^r]_{k0}` falls below this.
    pub tail_tolerance: f64,
    pub max_rounds: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            rounding: CountRounding::Mixture,
            max_k: 4096,
            tail_tolerance: 1e-12,
            max_rounds: 10_000,
        }
    }
}

/// `B(n, m, p)` for every `m` in `0..=n`.
pub(crate) fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if p >= 1.0 {
        out[n] = 1.0;
        return out;
    }
    if p <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let ln_n = ln_factorial(n as u64);
    for (m, slot) in out.iter_mut().enumerate() {
        let ln_choose = ln_n - ln_factorial(m as u64) - ln_factorial((n - m) as u64);
        *slot = (ln_choose + m as f64 * lp + (n - m) as f64 * lq).exp();
    }
    out
}

/// Row-stochastic transition matrix plus the absorption profile from state `k`.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    k: usize,
    epsilon: f64,
    redundancy: f64,
    rounding: CountRounding,
    /// `rows[i][j] = P_ij` for `j <= i`; entries above the diagonal are zero.
    rows: Vec<Vec<f64>>,
    mixes: Vec<CountMix>,
    /// `absorbed[r] = p_Y(r)`; index 0 is unused and zero.
    absorbed: Vec<f64>,
    /// `cdf[r] = [P^r]_{k0}` with `cdf[0] = 0`.
    cdf: Vec<f64>,
    /// `survival[r]` is the mass not yet absorbed after `r` rounds.
    survival: Vec<f64>,
    /// State distribution after the last cached round.
    last_state: Vec<f64>,
}

impl TransitionKernel {
    pub fn build(channel: &ChannelParams, coding: &CodingParams) -> Result<Self> {
        Self::build_with(channel, coding, &KernelOptions::default())
    }

    pub fn build_with(
        channel: &ChannelParams,
        coding: &CodingParams,
        opts: &KernelOptions,
    ) -> Result<Self> {
        Self::from_parts(channel.epsilon, coding.k, coding.redundancy, opts)
    }

    /// Builds the kernel directly from the erasure rate, generation size and
    /// redundancy.
    pub fn from_parts(
        epsilon: f64,
        k: usize,
        redundancy: f64,
        opts: &KernelOptions,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(invalid("epsilon", format!("{epsilon} is not in [0, 1)")));
        }
        if k == 0 {
            return Err(invalid("k", "generation size must be at least 1"));
        }
        if k > opts.max_k {
            return Err(Error::GenerationTooLarge { k, max: opts.max_k });
        }
        let mut mixes = Vec::with_capacity(k + 1);
        mixes.push(CountMix {
            low: 0,
            high: 0,
            p_high: 0.0,
        });
        for i in 1..=k {
            let m = coded_count_distribution(redundancy, i)?;
            mixes.push(match opts.rounding {
                CountRounding::Mixture => m,
                CountRounding::Ceil => CountMix {
                    low: m.high,
                    high: m.high,
                    p_high: 0.0,
                },
                CountRounding::Floor => CountMix {
                    low: m.low,
                    high: m.low,
                    p_high: 0.0,
                },
            });
        }

        let success = 1.0 - epsilon;
        let mut rows = Vec::with_capacity(k + 1);
        rows.push(vec![1.0]);
        for (i, mix) in mixes.iter().enumerate().skip(1) {
            let mut row = vec![0.0; i + 1];
            for (n, weight) in mix.support() {
                let pmf = binomial_pmf(n, success);
                // j >= 1: exactly i - j packets got through
                for j in 1..=i {
                    row[j] += weight * pmf[i - j];
                }
                row[0] += weight * pmf[i..].iter().sum::<f64>();
            }
            rows.push(row);
        }

        let mut kernel = Self {
            k,
            epsilon,
            redundancy,
            rounding: opts.rounding,
            rows,
            mixes,
            absorbed: vec![0.0],
            cdf: vec![0.0],
            survival: vec![1.0],
            last_state: Vec::new(),
        };
        let mut state = vec![0.0; k + 1];
        state[k] = 1.0;
        let mut rounds = 0;
        while *kernel.survival.last().unwrap() >= opts.tail_tolerance {
            if rounds == opts.max_rounds {
                return Err(Error::NonConvergence {
                    what: "generation absorption",
                    rounds,
                });
            }
            let (next, absorbed) = kernel.step(&state);
            let survival: f64 = next[1..].iter().sum();
            let cdf = kernel.cdf.last().unwrap() + absorbed;
            kernel.absorbed.push(absorbed);
            kernel.cdf.push(cdf.min(1.0));
            kernel.survival.push(survival);
            state = next;
            rounds += 1;
        }
        kernel.last_state = state;
        Ok(kernel)
    }

    /// One round of the chain; returns the new distribution over transient
    /// states (index 0 left at zero) and the mass absorbed during the round.
    fn step(&self, state: &[f64]) -> (Vec<f64>, f64) {
        let mut next = vec![0.0; self.k + 1];
        let mut absorbed = 0.0;
        for (i, &mass) in state.iter().enumerate().skip(1) {
            if mass == 0.0 {
                continue;
            }
            let row = &self.rows[i];
            absorbed += mass * row[0];
            for j in 1..=i {
                next[j] += mass * row[j];
            }
        }
        (next, absorbed)
    }

    /// Walks past the cached horizon; only reached for very deep tails.
    fn extended(&self, r: usize) -> (f64, f64, f64) {
        let mut state = self.last_state.clone();
        let mut cdf = *self.cdf.last().unwrap();
        let mut absorbed = 0.0;
        for _ in self.horizon()..r {
            let (next, a) = self.step(&state);
            absorbed = a;
            cdf = (cdf + a).min(1.0);
            state = next;
        }
        (cdf, absorbed, state[1..].iter().sum())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn redundancy(&self) -> f64 {
        self.redundancy
    }

    pub fn rounding(&self) -> CountRounding {
        self.rounding
    }

    /// Number of states, `k + 1`.
    pub fn size(&self) -> usize {
        self.k + 1
    }

    /// `P_ij`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if j > i || i > self.k {
            0.0
        } else {
            self.rows[i][j]
        }
    }

    /// Row `i` over `j = 0..=k`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut out = self.rows[i].clone();
        out.resize(self.k + 1, 0.0);
        out
    }

    /// Per-round packet count distribution in state `i`.
    pub fn count_mix(&self, i: usize) -> CountMix {
        self.mixes[i]
    }

    /// Last round for which the absorption profile is cached.
    pub fn horizon(&self) -> usize {
        self.cdf.len() - 1
    }

    /// `[P^r]_{k0}`: probability the generation is decodable within `r` rounds.
    pub fn absorption_cdf(&self, r: usize) -> f64 {
        match self.cdf.get(r) {
            Some(&v) => v,
            None => self.extended(r).0,
        }
    }

    /// Unabsorbed mass after `r` rounds, `1 - [P^r]_{k0}` without cancellation.
    pub fn survival(&self, r: usize) -> f64 {
        match self.survival.get(r) {
            Some(&v) => v,
            None => self.extended(r).2,
        }
    }

    /// Probability that a generation needs exactly `y` rounds.
    pub fn p_y(&self, y: usize) -> f64 {
        if y == 0 {
            return 0.0;
        }
        match self.absorbed.get(y) {
            Some(&v) => v,
            None => self.extended(y).1,
        }
    }

    /// Probability that the slowest of `i` independent generations needs exactly
    /// `z` rounds: `[P^z]_{k0}^i - [P^{z-1}]_{k0}^i`.
    pub fn p_z(&self, i: usize, z: usize) -> Result<f64> {
        if i == 0 {
            return Err(domain("p_z", "at least one generation is required"));
        }
        if z == 0 {
            return Ok(0.0);
        }
        let n = i as f64;
        let prev = self.absorption_cdf(z - 1);
        if prev == 0.0 {
            return Ok(self.absorption_cdf(z).powf(n));
        }
        // prev^n * ((cdf_z / prev)^n - 1), with cdf_z / prev = 1 + p_y / prev
        let ratio_ln = (self.p_y(z) / prev).ln_1p();
        Ok((n * (-self.survival(z - 1)).ln_1p()).exp() * (n * ratio_ln).exp_m1())
    }
}

/// Free-function form of [`TransitionKernel::build`].
pub fn build_kernel(channel: &ChannelParams, coding: &CodingParams) -> Result<TransitionKernel> {
    TransitionKernel::build(channel, coding)
}
