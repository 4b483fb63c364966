//! Sweeps over the generation size, the delay-minimizing `k*`, and rate-delay
//! trade-off curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delay::DelayModel;
use crate::efficiency::efficiency;
use crate::error::{invalid, Result};
use crate::model::{redundancy_from_margin, ChannelParams, CodingParams};
use crate::sim::{replicate_arq, SimConfig, SimMode};

/// One evaluated point. When the evaluation failed, `error` is set and the
/// numeric fields are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k: usize,
    pub redundancy: f64,
    pub epsilon: f64,
    pub bdp: u64,
    pub b: usize,
    pub mean: f64,
    pub std: f64,
    pub eta: f64,
    pub truncated_mass: f64,
    pub smoothed_mean: Option<f64>,
    pub error: Option<String>,
}

impl SweepRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// The smoothed mean when present, the raw mean otherwise.
    pub fn objective(&self) -> f64 {
        self.smoothed_mean.unwrap_or(self.mean)
    }
}

/// Mean, spread and efficiency of a single configuration.
pub fn evaluate(channel: &ChannelParams, redundancy: f64, k: usize) -> SweepRecord {
    let mut rec = SweepRecord {
        k,
        redundancy,
        epsilon: channel.epsilon,
        bdp: channel.bdp,
        b: 0,
        mean: f64::NAN,
        std: f64::NAN,
        eta: f64::NAN,
        truncated_mass: f64::NAN,
        smoothed_mean: None,
        error: None,
    };
    let run = |rec: &mut SweepRecord| -> Result<()> {
        let coding = CodingParams::new(k, redundancy, channel)?;
        rec.b = coding.b;
        let model = DelayModel::new(channel, &coding)?;
        let d = model.expected()?;
        let e = efficiency(model.kernel(), k)?;
        rec.mean = d.mean;
        rec.std = d.std();
        rec.truncated_mass = d.truncated_mass;
        rec.eta = e.eta;
        Ok(())
    };
    if let Err(e) = run(&mut rec) {
        rec.error = Some(e.to_string());
    }
    rec
}

/// Evaluates every `k` in parallel; records come back in `k_range` order.
pub fn sweep(channel: &ChannelParams, redundancy: f64, k_range: &[usize]) -> Result<Vec<SweepRecord>> {
    check_range(k_range)?;
    Ok(k_range
        .par_iter()
        .map(|&k| evaluate(channel, redundancy, k))
        .collect())
}

fn check_range(k_range: &[usize]) -> Result<()> {
    if k_range.is_empty() {
        return Err(invalid("k_range", "must not be empty"));
    }
    if k_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("k_range", "must be strictly ascending"));
    }
    if k_range[0] == 0 {
        return Err(invalid("k_range", "generation sizes start at 1"));
    }
    Ok(())
}

/// Removes the dips that follow drops in the raw curve.
///
/// Each point whose mean falls below the previous point's mean takes the
/// previous smoothed value instead, so a run of descending points is held at the
/// peak that preceded it. Drops happen where `b` decrements. Failed records are
/// skipped and break the envelope.
pub fn smooth_local_maxima(records: &mut [SweepRecord]) {
    let mut prev: Option<(f64, f64)> = None;
    for rec in records.iter_mut() {
        if !rec.is_ok() {
            rec.smoothed_mean = None;
            prev = None;
            continue;
        }
        let smoothed = match prev {
            Some((raw, held)) if rec.mean < raw => held.max(rec.mean),
            _ => rec.mean,
        };
        rec.smoothed_mean = Some(smoothed);
        prev = Some((rec.mean, smoothed));
    }
}

/// Smallest `k` attaining the minimum smoothed mean. Values within a relative
/// `1e-12` of the minimum tie.
pub fn k_star(channel: &ChannelParams, redundancy: f64, k_range: &[usize]) -> Result<(usize, SweepRecord)> {
    let mut records = sweep(channel, redundancy, k_range)?;
    smooth_local_maxima(&mut records);
    pick_k_star(records)
}

pub fn pick_k_star(records: Vec<SweepRecord>) -> Result<(usize, SweepRecord)> {
    let best = records
        .iter()
        .filter(|r| r.is_ok())
        .map(SweepRecord::objective)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        let why = records
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_else(|| "no finite delay".into());
        return Err(invalid("k_range", format!("no point could be evaluated: {why}")));
    }
    let rec = records
        .into_iter()
        .find(|r| r.is_ok() && r.objective() <= best * (1.0 + 1e-12))
        .expect("the minimum is attained");
    Ok((rec.k, rec))
}

/// Log-spaced integers from 2 to `min(bdp - 1, 1024)`.
pub fn default_k_range(bdp: u64, points: usize) -> Vec<usize> {
    let hi = (bdp.saturating_sub(1)).clamp(2, 1024) as f64;
    let lo = 2.0f64;
    let points = points.max(2);
    let mut out: Vec<usize> = (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            (lo * (hi / lo).powf(t)).round() as usize
        })
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub margin: f64,
    pub redundancy: f64,
    pub k_star: usize,
    pub eta: f64,
    pub mean: f64,
    pub std: f64,
}

/// Simulation settings for the ARQ reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArqReference {
    pub mode: SimMode,
    pub n_packets: u64,
    pub seed: u64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub points: Vec<TradeoffPoint>,
    /// Simulated selective-repeat ARQ, which has `eta = 1`.
    pub arq: Option<TradeoffPoint>,
}

/// For each margin `x`, the delay at `k*` for `R = (1 + x) / (1 - eps)` and the
/// efficiency there.
pub fn tradeoff_curve(
    channel: &ChannelParams,
    margins: &[f64],
    k_range: &[usize],
    arq: Option<&ArqReference>,
) -> Result<TradeoffCurve> {
    if margins.is_empty() {
        return Err(invalid("margins", "must not be empty"));
    }
    let mut points = Vec::with_capacity(margins.len());
    for &x in margins {
        let r = redundancy_from_margin(x, channel.epsilon)?;
        let (k, rec) = k_star(channel, r, k_range)?;
        points.push(TradeoffPoint {
            margin: x,
            redundancy: r,
            k_star: k,
            eta: rec.eta,
            mean: rec.mean,
            std: rec.std,
        });
    }
    let arq = match arq {
        None => None,
        Some(a) => {
            let coding = CodingParams::new(1, 1.0, channel)?;
            let cfg = SimConfig::new(*channel, coding, a.mode, a.n_packets, a.seed);
            let s = replicate_arq(&cfg, a.reps)?;
            Some(TradeoffPoint {
                margin: f64::NAN,
                redundancy: 1.0,
                k_star: 1,
                eta: 1.0,
                mean: s.mean_delay,
                std: s.std_delay,
            })
        }
    };
    Ok(TradeoffCurve { points, arq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::expected_delay;
    use crate::model::derive_channel;
    use approx::assert_relative_eq;

    fn channel(eps: f64) -> ChannelParams {
        derive_channel(eps, 10e6, 10_000.0, 0.0495).unwrap()
    }

    fn rec(k: usize, b: usize, mean: f64) -> SweepRecord {
        SweepRecord {
            k,
            redundancy: 1.0,
            epsilon: 0.1,
            bdp: 100,
            b,
            mean,
            std: 0.0,
            eta: 1.0,
            truncated_mass: 0.0,
            smoothed_mean: None,
            error: None,
        }
    }

    #[test]
    fn lossless_sweep_is_flat() {
        let c = channel(0.0);
        let ks: Vec<usize> = (1..=8).collect();
        for r in sweep(&c, 1.0, &ks).unwrap() {
            assert_relative_eq!(r.mean, c.t_s + c.t_p, max_relative = 1e-12);
        }
        assert_eq!(k_star(&c, 1.0, &[3, 5, 9]).unwrap().0, 3);
    }

    #[test]
    fn single_point_matches_expected_delay() {
        let c = channel(0.1);
        let r = redundancy_from_margin(0.1, 0.1).unwrap();
        let s = sweep(&c, r, &[16]).unwrap();
        let d = expected_delay(&c, &CodingParams::new(16, r, &c).unwrap()).unwrap();
        assert_eq!(s[0].mean, d.mean);
        assert_eq!(s[0].std, d.std());
    }

    #[test]
    fn bad_ranges_and_points() {
        let c = channel(0.1);
        assert!(sweep(&c, 1.2, &[]).is_err());
        assert!(sweep(&c, 1.2, &[4, 2]).is_err());
        let s = sweep(&c, 1.2, &[2, 5000]).unwrap();
        assert!(s[0].is_ok());
        assert!(s[1].error.is_some() && s[1].mean.is_nan());
    }

    #[test]
    fn smoothing() {
        let mut up = vec![rec(1, 5, 1.0), rec(2, 5, 2.0), rec(3, 4, 3.0)];
        smooth_local_maxima(&mut up);
        assert!(up.iter().all(|r| r.smoothed_mean == Some(r.mean)));

        let mut dip = vec![rec(10, 10, 0.12), rec(11, 9, 0.10), rec(12, 9, 0.11)];
        smooth_local_maxima(&mut dip);
        assert_eq!(dip[1].smoothed_mean, Some(0.12));
        assert_eq!(dip[1].mean, 0.10);
        assert_eq!(dip[2].smoothed_mean, Some(0.11));

        let mut one = vec![rec(4, 3, 0.5)];
        smooth_local_maxima(&mut one);
        assert_eq!(one[0].smoothed_mean, Some(0.5));
    }

    #[test]
    fn u_shaped_and_smoothed_above_raw() {
        let c = channel(0.1);
        let r = redundancy_from_margin(0.1, 0.1).unwrap();
        let ks = default_k_range(c.bdp, 40);
        assert_eq!(ks[0], 2);
        assert_eq!(*ks.last().unwrap(), 99);
        let mut recs = sweep(&c, r, &ks).unwrap();
        smooth_local_maxima(&mut recs);
        let min = recs.iter().map(|r| r.mean).fold(f64::INFINITY, f64::min);
        assert!(recs[0].mean > min && recs.last().unwrap().mean > min);
        for r in &recs {
            assert!(r.smoothed_mean.unwrap() >= r.mean);
            assert!(r.std >= 0.0);
        }
        let a = k_star(&c, r, &ks).unwrap();
        assert_eq!(a, k_star(&c, r, &ks).unwrap());
    }

    #[test]
    fn default_range_is_capped() {
        let ks = default_k_range(5000, 30);
        assert_eq!(*ks.last().unwrap(), 1024);
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(default_k_range(2, 10), vec![2]);
    }

    #[test]
    fn lossless_tradeoff() {
        let c = channel(0.0);
        let t = tradeoff_curve(&c, &[0.0], &[2, 4, 8], None).unwrap();
        assert_eq!(t.points.len(), 1);
        assert_relative_eq!(t.points[0].eta, 1.0, max_relative = 1e-12);
        assert_relative_eq!(t.points[0].mean, c.t_s + c.t_p, max_relative = 1e-12);
        assert!(tradeoff_curve(&c, &[], &[2], None).is_err());
    }
}
