//! Slot-level Monte-Carlo of systematic coded transport with per-generation
//! feedback.
//!
//! One packet fits in a slot of length `t_s`. A packet sent in slot `s` starts at
//! `s t_s` and, unless erased, reaches the receiver at `(s + 1) t_s + t_p`. The
//! receiver reports the missing degrees of freedom of a generation once the last
//! packet of a round has arrived (or was erased); the report takes `t_p` and uses
//! no channel capacity. The sender answers with a round of `R l` coded packets.
//!
//! In [`SimMode::Idealized`] a retransmission round occupies no slots: it reaches
//! the receiver `t_p` after the feedback reached the sender. In
//! [`SimMode::Relaxed`] retransmissions pre-empt new packets and cost a slot each.
//!
//! The random stream is ChaCha8 seeded with [`SeedableRng::seed_from_u64`];
//! replication `r` uses stream `r`, so the same seed gives the same trace on every
//! platform.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{CodedPacket, DecoderState, PacketKind};
use crate::error::{invalid, Error, Result};
use crate::model::{coded_count_distribution, ChannelParams, CodingParams, CountMix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Idealized,
    Relaxed,
}

impl std::str::FromStr for SimMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "idealized" | "ideal" => Ok(Self::Idealized),
            "relaxed" => Ok(Self::Relaxed),
            _ => Err(invalid("mode", format!("unknown simulation mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub channel: ChannelParams,
    pub coding: CodingParams,
    pub mode: SimMode,
    /// Source packets whose delay is measured.
    pub n_packets: u64,
    pub seed: u64,
    /// Decode over GF(2^8) instead of counting every coded packet as innovative.
    pub use_real_codec: bool,
    /// A generation waits only for this many predecessors; `None` keeps strict
    /// in-order delivery.
    pub hol_cap: Option<usize>,
    /// Keep a [`PacketRecord`] per measured packet.
    pub record_packets: bool,
}

impl SimConfig {
    /// Idealized mode caps head-of-line blocking at `b - 1` generations, relaxed
    /// mode does not cap it.
    pub fn new(channel: ChannelParams, coding: CodingParams, mode: SimMode, n_packets: u64, seed: u64) -> Self {
        let hol_cap = match mode {
            SimMode::Idealized => Some(coding.blocking_generations()),
            SimMode::Relaxed => None,
        };
        Self {
            channel,
            coding,
            mode,
            n_packets,
            seed,
            use_real_codec: false,
            hol_cap,
            record_packets: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_packets < self.coding.k as u64 {
            return Err(invalid(
                "n_packets",
                format!("{} is smaller than k = {}", self.n_packets, self.coding.k),
            ));
        }
        if !(0.0..1.0).contains(&self.channel.epsilon) {
            return Err(invalid("epsilon", "must be in [0, 1)"));
        }
        if self.coding.redundancy < 1.0 {
            return Err(invalid("redundancy", "must be at least 1"));
        }
        Ok(())
    }

    /// Generations before and after the measured ones.
    fn margin_generations(&self) -> u64 {
        5 * self.coding.b as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub packet_id: u64,
    pub generation_id: u64,
    pub first_tx_slot: u64,
    pub delivered_slot: u64,
    /// Seconds from the start of the first transmission to in-order delivery.
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub mean_delay: f64,
    pub std_delay: f64,
    /// Standard error of `mean_delay`: across replications when there are several,
    /// otherwise from the packet-level spread.
    pub std_error: f64,
    pub max_delay: f64,
    /// `k * generations / packets received`.
    pub mean_efficiency: f64,
    pub mean_received: f64,
    pub received_std_error: f64,
    pub packets: u64,
    pub generations: u64,
    pub replications: usize,
    /// `round_counts[y]` generations needed exactly `y` rounds.
    pub round_counts: Vec<u64>,
    /// Received coded packets that did not raise the rank of an undecoded
    /// generation.
    pub innovation_failures: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<PacketRecord>>,
}

impl SimStats {
    /// Empirical `P(Y = y)`.
    pub fn round_frequency(&self, y: usize) -> f64 {
        self.round_counts.get(y).copied().unwrap_or(0) as f64 / self.generations.max(1) as f64
    }
}

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
    max: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
        self.max = self.max.max(x);
    }

    fn merge(self, o: Self) -> Self {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Self {
            n,
            mean: self.mean + d * o.n as f64 / n as f64,
            m2: self.m2 + o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64,
            max: self.max.max(o.max),
        }
    }

    fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }

    fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std() / (self.n as f64).sqrt()
        }
    }
}

/// Degrees of freedom collected by one generation.
enum Receiver {
    Counting { rank: usize, k: usize },
    Codec(DecoderState),
}

impl Receiver {
    fn new(k: usize, real: bool, id: u64) -> Self {
        if real {
            Self::Codec(DecoderState::new(id as u32, k))
        } else {
            Self::Counting { rank: 0, k }
        }
    }

    fn missing(&self) -> usize {
        match self {
            Self::Counting { rank, k } => k - rank,
            Self::Codec(d) => d.missing(),
        }
    }

    /// Returns whether the packet was innovative.
    fn receive(&mut self, id: u64, systematic: Option<usize>, rng: &mut ChaCha8Rng) -> bool {
        match self {
            Self::Counting { rank, k } => {
                let innovative = *rank < *k;
                if innovative {
                    *rank += 1;
                }
                innovative
            }
            Self::Codec(d) => {
                let k = d.k();
                let kind = match systematic {
                    Some(i) => PacketKind::Systematic(i),
                    None => {
                        let mut c = vec![0u8; k];
                        while c.iter().all(|&x| x == 0) {
                            rng.fill(c.as_mut_slice());
                        }
                        PacketKind::Coded(c)
                    }
                };
                let pkt = CodedPacket {
                    generation_id: id as u32,
                    kind,
                    payload: Vec::new(),
                };
                d.ingest(&pkt).expect("packet matches its generation")
            }
        }
    }
}

/// Progress of one generation.
struct GenRun {
    id: u64,
    first_slots: Vec<u64>,
    /// Arrival time of each systematic packet, infinite when erased.
    arrivals: Vec<f64>,
    decode_time: Option<f64>,
    rounds: u32,
    received: u32,
    failures: u64,
    /// Packets of the current round still to be sent.
    in_round: bool,
    rx: Receiver,
}

impl GenRun {
    fn new(id: u64, k: usize, real: bool) -> Self {
        Self {
            id,
            first_slots: Vec::with_capacity(k),
            arrivals: vec![f64::INFINITY; k],
            decode_time: None,
            rounds: 0,
            received: 0,
            failures: 0,
            in_round: false,
            rx: Receiver::new(k, real, id),
        }
    }

    /// Pushes one transmission through the channel.
    fn transmit(&mut self, systematic: Option<usize>, arrival: f64, eps: f64, rng: &mut ChaCha8Rng) {
        if rng.gen::<f64>() < eps {
            return;
        }
        self.received += 1;
        let was_open = self.decode_time.is_none();
        let innovative = self.rx.receive(self.id, systematic, rng);
        if let Some(i) = systematic {
            self.arrivals[i] = arrival;
        }
        if was_open && !innovative && systematic.is_none() {
            self.failures += 1;
        }
        if was_open && self.rx.missing() == 0 {
            self.decode_time = Some(arrival);
        }
    }
}

struct Collector<'a> {
    cfg: &'a SimConfig,
    first_measured: u64,
    end_measured: u64,
    delays: Welford,
    received: Welford,
    round_counts: Vec<u64>,
    failures: u64,
    /// Own completion time of recent generations, newest last.
    recent: VecDeque<f64>,
    last_delivery: f64,
    records: Option<Vec<PacketRecord>>,
}

impl<'a> Collector<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let first_measured = cfg.margin_generations();
        let measured = cfg.n_packets.div_ceil(cfg.coding.k as u64);
        Self {
            cfg,
            first_measured,
            end_measured: first_measured + measured,
            delays: Welford::default(),
            received: Welford::default(),
            round_counts: Vec::new(),
            failures: 0,
            recent: VecDeque::new(),
            last_delivery: 0.0,
            records: cfg.record_packets.then(Vec::new),
        }
    }

    /// Delivers a decoded generation; generations must arrive in order.
    fn finalize(&mut self, g: &GenRun) {
        let ts = self.cfg.channel.t_s;
        let decode = g.decode_time.expect("finalized generations are decoded");
        let mut chain = match self.cfg.hol_cap {
            None => self.last_delivery,
            Some(cap) => self
                .recent
                .iter()
                .rev()
                .take(cap)
                .fold(0.0f64, |a, &b| a.max(b)),
        };
        let measured = (self.first_measured..self.end_measured).contains(&g.id);
        let k = g.arrivals.len();
        let mut own = 0.0f64;
        for (i, &arr) in g.arrivals.iter().enumerate() {
            let avail = arr.min(decode);
            own = own.max(avail);
            chain = chain.max(avail);
            if measured {
                let start = g.first_slots[i] as f64 * ts;
                let delay = chain - start;
                self.delays.push(delay);
                if let Some(r) = self.records.as_mut() {
                    r.push(PacketRecord {
                        packet_id: g.id * k as u64 + i as u64,
                        generation_id: g.id,
                        first_tx_slot: g.first_slots[i],
                        delivered_slot: ((chain / ts) * (1.0 + 1e-12)).floor() as u64,
                        delay,
                    });
                }
            }
        }
        self.last_delivery = chain;
        self.recent.push_back(own);
        if self.recent.len() > self.cfg.coding.b {
            self.recent.pop_front();
        }
        if measured {
            self.received.push(g.received as f64);
            let y = g.rounds as usize;
            if self.round_counts.len() <= y {
                self.round_counts.resize(y + 1, 0);
            }
            self.round_counts[y] += 1;
            self.failures += g.failures;
        }
    }

    fn finish(self) -> SimStats {
        let k = self.cfg.coding.k as f64;
        SimStats {
            mean_delay: self.delays.mean,
            std_delay: self.delays.std(),
            std_error: self.delays.std_error(),
            max_delay: self.delays.max,
            mean_efficiency: k / self.received.mean,
            mean_received: self.received.mean,
            received_std_error: self.received.std_error(),
            packets: self.delays.n,
            generations: self.received.n,
            replications: 1,
            round_counts: self.round_counts,
            innovation_failures: self.failures,
            records: self.records,
        }
    }
}

/// Per-round packet counts `R l`, cached per `l`.
struct Counts {
    mixes: Vec<CountMix>,
}

impl Counts {
    fn new(redundancy: f64, k: usize) -> Result<Self> {
        let mut mixes = vec![CountMix {
            low: 0,
            high: 0,
            p_high: 0.0,
        }];
        for l in 1..=k {
            mixes.push(coded_count_distribution(redundancy, l)?);
        }
        Ok(Self { mixes })
    }

    fn draw(&self, l: usize, rng: &mut ChaCha8Rng) -> usize {
        self.mixes[l].pick(rng.gen())
    }
}

fn run_stream(cfg: &SimConfig, stream: u64) -> Result<SimStats> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    match cfg.mode {
        SimMode::Idealized => run_idealized(cfg, &mut rng),
        SimMode::Relaxed => run_relaxed(cfg, &mut rng),
    }
}

fn run_idealized(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<SimStats> {
    let (ts, tp, eps) = (cfg.channel.t_s, cfg.channel.t_p, cfg.channel.epsilon);
    let k = cfg.coding.k;
    let counts = Counts::new(cfg.coding.redundancy, k)?;
    let mut out = Collector::new(cfg);
    let mut slot = 0u64;
    for id in 0..out.end_measured {
        let mut g = GenRun::new(id, k, cfg.use_real_codec);
        let n = counts.draw(k, rng);
        for m in 0..n {
            let systematic = (m < k).then_some(m);
            if m < k {
                g.first_slots.push(slot);
            }
            g.transmit(systematic, (slot + 1) as f64 * ts + tp, eps, rng);
            slot += 1;
        }
        g.rounds = 1;
        let mut eval = slot as f64 * ts + tp;
        while g.rx.missing() > 0 {
            if g.rounds >= 100_000 {
                return Err(Error::HorizonExceeded { slots: slot });
            }
            eval += 2.0 * tp;
            for _ in 0..counts.draw(g.rx.missing(), rng) {
                g.transmit(None, eval, eps, rng);
            }
            g.rounds += 1;
        }
        out.finalize(&g);
    }
    Ok(out.finish())
}

/// A queued retransmission.
#[derive(Debug, Clone, Copy)]
struct Retx {
    gen: u64,
    last: bool,
}

fn run_relaxed(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<SimStats> {
    let (ts, tp, eps) = (cfg.channel.t_s, cfg.channel.t_p, cfg.channel.epsilon);
    let k = cfg.coding.k;
    let counts = Counts::new(cfg.coding.redundancy, k)?;
    let mut out = Collector::new(cfg);
    let total = out.end_measured + cfg.margin_generations();
    let max_slots = 1_000 * total * cfg.coding.n_k_high() as u64 + 10_000_000;

    // Generations from `base` onward that are not yet delivered.
    let mut live: VecDeque<GenRun> = VecDeque::new();
    let mut base = 0u64;
    let mut feedback: BinaryHeap<Reverse<(u64, u64)>> = BinaryHeap::new();
    let mut queue: VecDeque<Retx> = VecDeque::new();
    // Next new packet: (generation, index within first round, first-round size).
    let mut cursor: Option<(u64, usize, usize)> = None;
    let mut next_gen = 0u64;

    let mut slot = 0u64;
    while base < out.end_measured {
        if slot >= max_slots {
            return Err(Error::HorizonExceeded { slots: slot });
        }
        while let Some(&Reverse((due, gen))) = feedback.peek() {
            if due > slot {
                break;
            }
            feedback.pop();
            let g = &mut live[(gen - base) as usize];
            let n = counts.draw(g.rx.missing(), rng);
            g.in_round = true;
            for j in 0..n {
                queue.push_back(Retx {
                    gen,
                    last: j + 1 == n,
                });
            }
        }
        let arrival = (slot + 1) as f64 * ts + tp;
        let sent = if let Some(r) = queue.pop_front() {
            let g = &mut live[(r.gen - base) as usize];
            g.transmit(None, arrival, eps, rng);
            r.last.then_some(r.gen)
        } else {
            if cursor.is_none() && next_gen < total {
                let mut g = GenRun::new(next_gen, k, cfg.use_real_codec);
                g.in_round = true;
                live.push_back(g);
                cursor = Some((next_gen, 0, counts.draw(k, rng)));
                next_gen += 1;
            }
            match cursor.as_mut() {
                Some((gen, m, n)) => {
                    let gen_id = *gen;
                    let g = &mut live[(gen_id - base) as usize];
                    let systematic = (*m < k).then_some(*m);
                    if *m < k {
                        g.first_slots.push(slot);
                    }
                    g.transmit(systematic, arrival, eps, rng);
                    *m += 1;
                    let done = *m == *n;
                    if done {
                        cursor = None;
                    }
                    done.then_some(gen_id)
                }
                None => None,
            }
        };
        if let Some(gen) = sent {
            let g = &mut live[(gen - base) as usize];
            g.rounds += 1;
            g.in_round = false;
            if g.rx.missing() > 0 {
                let due = ((arrival + tp) / ts * (1.0 - 1e-12)).ceil() as u64;
                feedback.push(Reverse((due.max(slot + 1), gen)));
            }
        }
        while live
            .front()
            .is_some_and(|g| g.decode_time.is_some() && !g.in_round)
        {
            let g = live.pop_front().expect("front exists");
            out.finalize(&g);
            base += 1;
        }
        slot += 1;
    }
    Ok(out.finish())
}

/// One run of the coded protocol on stream 0 of `config.seed`.
pub fn run_coded(config: &SimConfig) -> Result<SimStats> {
    run_stream(config, 0)
}

/// Selective-repeat ARQ: every packet is its own generation, sent once and
/// repeated after each loss report, with strict in-order delivery.
pub fn run_arq(config: &SimConfig) -> Result<SimStats> {
    run_coded(&arq_config(config)?)
}

fn arq_config(config: &SimConfig) -> Result<SimConfig> {
    let coding = CodingParams::with_b_definition(1, 1.0, &config.channel, config.coding.b_definition)?;
    Ok(SimConfig {
        coding,
        hol_cap: None,
        use_real_codec: false,
        ..*config
    })
}

/// Runs `reps` independent replications in parallel and pools them.
pub fn replicate(config: &SimConfig, reps: usize) -> Result<SimStats> {
    replicate_with(config, reps, run_stream)
}

/// [`replicate`] for the ARQ baseline.
pub fn replicate_arq(config: &SimConfig, reps: usize) -> Result<SimStats> {
    replicate_with(&arq_config(config)?, reps, run_stream)
}

fn replicate_with(
    config: &SimConfig,
    reps: usize,
    run: fn(&SimConfig, u64) -> Result<SimStats>,
) -> Result<SimStats> {
    if reps == 0 {
        return Err(invalid("reps", "at least one replication is required"));
    }
    let runs: Vec<SimStats> = (0..reps as u64)
        .into_par_iter()
        .map(|r| run(config, r))
        .collect::<Result<_>>()?;
    Ok(pool(runs))
}

fn pool(runs: Vec<SimStats>) -> SimStats {
    let reps = runs.len();
    let as_welford = |n: u64, mean: f64, std: f64, max: f64| Welford {
        n,
        mean,
        m2: if n > 1 { std * std * (n - 1) as f64 } else { 0.0 },
        max,
    };
    let mut delays = Welford::default();
    let mut received = Welford::default();
    let mut rep_means = Welford::default();
    let mut round_counts: Vec<u64> = Vec::new();
    let mut failures = 0;
    let mut records: Option<Vec<PacketRecord>> = None;
    for s in &runs {
        delays = delays.merge(as_welford(s.packets, s.mean_delay, s.std_delay, s.max_delay));
        let rstd = s.received_std_error * (s.generations as f64).sqrt();
        received = received.merge(as_welford(s.generations, s.mean_received, rstd, 0.0));
        rep_means.push(s.mean_delay);
        if round_counts.len() < s.round_counts.len() {
            round_counts.resize(s.round_counts.len(), 0);
        }
        for (a, b) in round_counts.iter_mut().zip(&s.round_counts) {
            *a += b;
        }
        failures += s.innovation_failures;
        if let Some(r) = &s.records {
            records.get_or_insert_with(Vec::new).extend_from_slice(r);
        }
    }
    if reps == 1 {
        return runs.into_iter().next().expect("one run");
    }
    let k_over = runs[0].mean_efficiency * runs[0].mean_received;
    SimStats {
        mean_delay: delays.mean,
        std_delay: delays.std(),
        std_error: rep_means.std_error(),
        max_delay: delays.max,
        mean_efficiency: k_over / received.mean,
        mean_received: received.mean,
        received_std_error: received.std_error(),
        packets: delays.n,
        generations: received.n,
        replications: reps,
        round_counts,
        innovation_failures: failures,
        records,
    }
}

/// Writes one CSV row per record after a `#`-prefixed JSON echo of the config.
pub fn write_trace<W: Write>(mut w: W, config: &SimConfig, records: &[PacketRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(e.to_string());
    let json = serde_json::to_string(config).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w, "# {json}").map_err(io)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["packet_id", "generation_id", "first_tx_slot", "delivered_slot", "delay_s"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for r in records {
        out.write_record([
            r.packet_id.to_string(),
            r.generation_id.to_string(),
            r.first_tx_slot.to_string(),
            r.delivered_slot.to_string(),
            format!("{:.9}", r.delay),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    out.flush().map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_channel, redundancy_from_margin};

    fn setup(eps: f64, k: usize, r: f64) -> (ChannelParams, CodingParams) {
        let c = derive_channel(eps, 10e6, 10_000.0, 0.0495).unwrap();
        let coding = CodingParams::new(k, r, &c).unwrap();
        (c, coding)
    }

    #[test]
    fn lossless_channel_has_constant_delay() {
        for mode in [SimMode::Idealized, SimMode::Relaxed] {
            for (k, r) in [(1, 1.0), (8, 1.0), (8, 1.25)] {
                let (c, coding) = setup(0.0, k, r);
                let mut cfg = SimConfig::new(c, coding, mode, 2_000, 1);
                cfg.record_packets = true;
                let s = run_coded(&cfg).unwrap();
                for rec in s.records.as_ref().unwrap() {
                    assert!((rec.delay - (c.t_s + c.t_p)).abs() < 1e-12, "{rec:?}");
                }
                let expected_eta = k as f64 / (r * k as f64).round();
                assert!((s.mean_efficiency - expected_eta).abs() < 1e-12);
                assert_eq!(s.round_counts, vec![0, s.generations]);
            }
        }
    }

    #[test]
    fn in_order_and_causal() {
        for mode in [SimMode::Idealized, SimMode::Relaxed] {
            let (c, coding) = setup(0.2, 6, 1.1);
            let mut cfg = SimConfig::new(c, coding, mode, 20_000, 3);
            cfg.hol_cap = None;
            cfg.record_packets = true;
            let s = run_coded(&cfg).unwrap();
            let recs = s.records.unwrap();
            assert_eq!(recs.len() as u64, s.packets);
            for w in recs.windows(2) {
                assert_eq!(w[1].packet_id, w[0].packet_id + 1);
                let t0 = w[0].delay + w[0].first_tx_slot as f64 * c.t_s;
                let t1 = w[1].delay + w[1].first_tx_slot as f64 * c.t_s;
                assert!(t1 >= t0 - 1e-12);
            }
            for r in &recs {
                assert!(r.delivered_slot >= r.first_tx_slot);
                assert!(r.delay >= c.t_s + c.t_p - 1e-12);
            }
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        let (c, coding) = setup(0.1, 8, 1.2);
        let mut cfg = SimConfig::new(c, coding, SimMode::Relaxed, 5_000, 42);
        cfg.record_packets = true;
        let a = run_coded(&cfg).unwrap();
        let b = run_coded(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 43;
        assert_ne!(a.mean_delay, run_coded(&cfg).unwrap().mean_delay);
        assert_eq!(replicate(&cfg, 1).unwrap(), run_coded(&cfg).unwrap());
        assert_eq!(replicate(&cfg, 4).unwrap(), replicate(&cfg, 4).unwrap());
    }

    #[test]
    fn arq_delay_grows_with_loss() {
        let mut prev = 0.0;
        for eps in [0.0, 0.05, 0.1, 0.2] {
            let (c, coding) = setup(eps, 1, 1.0);
            let cfg = SimConfig::new(c, coding, SimMode::Idealized, 20_000, 5);
            let s = run_arq(&cfg).unwrap();
            if eps == 0.0 {
                assert!((s.mean_delay - (c.t_s + c.t_p)).abs() < 1e-12);
                assert!(s.std_delay < 1e-12);
            } else {
                assert!(s.mean_delay > prev);
            }
            prev = s.mean_delay;
        }
    }

    #[test]
    fn relaxed_is_slower() {
        let r = redundancy_from_margin(0.1, 0.1).unwrap();
        let (c, coding) = setup(0.1, 16, r);
        let ideal = replicate(&SimConfig::new(c, coding, SimMode::Idealized, 50_000, 9), 4).unwrap();
        let relaxed = replicate(&SimConfig::new(c, coding, SimMode::Relaxed, 50_000, 9), 4).unwrap();
        assert!(relaxed.mean_delay >= ideal.mean_delay, "{relaxed:?} {ideal:?}");
    }

    #[test]
    fn real_codec_rarely_differs() {
        let (c, coding) = setup(0.1, 8, 1.25);
        let mut cfg = SimConfig::new(c, coding, SimMode::Idealized, 40_000, 11);
        let counting = run_coded(&cfg).unwrap();
        cfg.use_real_codec = true;
        let real = run_coded(&cfg).unwrap();
        assert_eq!(counting.innovation_failures, 0);
        let per_gen = real.innovation_failures as f64 / real.generations as f64;
        assert!(per_gen <= 8.0 / 256.0, "{per_gen}");
        assert!((real.mean_delay - counting.mean_delay).abs() < 0.05 * counting.mean_delay);
    }

    #[test]
    fn trace_format() {
        let (c, coding) = setup(0.1, 4, 1.5);
        let mut cfg = SimConfig::new(c, coding, SimMode::Idealized, 8, 1);
        cfg.record_packets = true;
        let s = run_coded(&cfg).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &cfg, s.records.as_ref().unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# {"));
        assert_eq!(lines.next().unwrap(), "packet_id,generation_id,first_tx_slot,delivered_slot,delay_s");
        assert_eq!(lines.count(), 8);
    }

    #[test]
    fn rejects_bad_configs() {
        let (c, coding) = setup(0.1, 8, 1.25);
        assert!(run_coded(&SimConfig::new(c, coding, SimMode::Idealized, 4, 1)).is_err());
        assert!(replicate(&SimConfig::new(c, coding, SimMode::Idealized, 40, 1), 0).is_err());
        assert!("relaxed".parse::<SimMode>().is_ok());
        assert!("bogus".parse::<SimMode>().is_err());
    }
}
