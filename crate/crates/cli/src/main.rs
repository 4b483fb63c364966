//! `codedelay`: evaluate, sweep and simulate coded transport with delayed
//! feedback. Every command prints one plot-ready table.

mod table;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use codedelay::delay::DelayModel;
use codedelay::efficiency::efficiency;
use codedelay::model::{redundancy_from_margin, BDefinition, ChannelParams, CodingParams};
use codedelay::optimizer::{
    default_k_range, pick_k_star, smooth_local_maxima, sweep, tradeoff_curve, ArqReference,
};
use codedelay::sim::{replicate, replicate_arq, write_trace, SimConfig, SimMode};
use codedelay::Error;

use table::{Cell, Format, OutputTable};

#[derive(Parser)]
#[command(name = "codedelay", version, about = "In-order delay of systematic coded transport with delayed feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean and standard deviation of the delay and the efficiency at one point.
    Analyze {
        #[command(flatten)]
        channel: ChannelArgs,
        #[command(flatten)]
        rate: RateArgs,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// One row per generation size.
    Sweep {
        #[command(flatten)]
        channel: ChannelArgs,
        #[command(flatten)]
        rate: RateArgs,
        #[command(flatten)]
        ks: KRangeArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// The generation size with the smallest smoothed mean delay.
    Kstar {
        #[command(flatten)]
        channel: ChannelArgs,
        #[command(flatten)]
        rate: RateArgs,
        #[command(flatten)]
        ks: KRangeArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Delay at k* against efficiency for several margins, plus simulated ARQ
    /// when --seed is given.
    Tradeoff {
        #[command(flatten)]
        channel: ChannelArgs,
        /// Comma-separated margins x, with R = (1 + x) / (1 - epsilon).
        #[arg(long, value_delimiter = ',', required = true)]
        margins: Vec<f64>,
        #[command(flatten)]
        ks: KRangeArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100_000)]
        packets: u64,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value = "idealized")]
        mode: SimMode,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Monte-Carlo run of the coded protocol.
    Simulate {
        #[command(flatten)]
        channel: ChannelArgs,
        #[command(flatten)]
        rate: RateArgs,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        sim: SimArgs,
        /// Per-packet trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Coded protocol and selective-repeat ARQ on the same channel.
    CompareArq {
        #[command(flatten)]
        channel: ChannelArgs,
        #[command(flatten)]
        rate: RateArgs,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Args)]
struct ChannelArgs {
    /// Erasure probability in [0, 1).
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    rate_bps: f64,
    #[arg(long)]
    packet_bits: f64,
    /// One-way propagation delay.
    #[arg(long, required_unless_present = "rtt_s", conflicts_with = "rtt_s")]
    tp_s: Option<f64>,
    /// Round-trip time including one slot.
    #[arg(long)]
    rtt_s: Option<f64>,
    /// Divisor of the BDP when counting generations in flight: n_k or k.
    #[arg(long, default_value = "n_k")]
    b_definition: BDefinition,
}

impl ChannelArgs {
    fn build(&self) -> Result<ChannelParams, Error> {
        match (self.tp_s, self.rtt_s) {
            (Some(tp), _) => ChannelParams::new(self.epsilon, self.rate_bps, self.packet_bits, tp),
            (None, Some(rtt)) => ChannelParams::from_rtt(self.epsilon, self.rate_bps, self.packet_bits, rtt),
            (None, None) => unreachable!("clap requires one of --tp-s and --rtt-s"),
        }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct RateArgs {
    /// Packets sent per degree of freedom needed.
    #[arg(long)]
    redundancy: Option<f64>,
    /// Margin x with R = (1 + x) / (1 - epsilon).
    #[arg(long)]
    margin: Option<f64>,
}

impl RateArgs {
    fn redundancy(&self, epsilon: f64) -> Result<f64, Error> {
        match (self.redundancy, self.margin) {
            (Some(r), _) => Ok(r),
            (None, Some(x)) => redundancy_from_margin(x, epsilon),
            (None, None) => unreachable!("clap requires one of --redundancy and --margin"),
        }
    }
}

#[derive(Args)]
struct KRangeArgs {
    /// `A..B` (inclusive) or a comma-separated list; log-spaced up to the BDP by
    /// default.
    #[arg(long, value_parser = parse_k_range)]
    k_range: Option<KRange>,
    /// Points in the default log-spaced range.
    #[arg(long, default_value_t = 64)]
    k_points: usize,
}

#[derive(Clone)]
struct KRange(Vec<usize>);

fn parse_k_range(s: &str) -> Result<KRange, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
    let ks = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        (a..=b).collect::<Vec<_>>()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if ks.is_empty() {
        return Err("the range is empty".into());
    }
    Ok(KRange(ks))
}

impl KRangeArgs {
    fn resolve(&self, channel: &ChannelParams) -> Vec<usize> {
        match &self.k_range {
            Some(KRange(ks)) => ks.clone(),
            None => default_k_range(channel.bdp, self.k_points),
        }
    }
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value = "idealized")]
    mode: SimMode,
    /// Source packets measured per replication.
    #[arg(long, default_value_t = 100_000)]
    packets: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Decode over GF(2^8) instead of counting degrees of freedom.
    #[arg(long)]
    real_codec: bool,
    /// Earlier generations a generation may wait for: a count or `none`.
    /// Defaults to b - 1 in idealized mode and `none` in relaxed mode.
    #[arg(long, value_parser = parse_cap)]
    hol_cap: Option<Cap>,
}

#[derive(Clone, Copy)]
struct Cap(Option<usize>);

fn parse_cap(s: &str) -> Result<Cap, String> {
    if s.eq_ignore_ascii_case("none") {
        Ok(Cap(None))
    } else {
        s.parse().map(|n| Cap(Some(n))).map_err(|e| format!("'{s}': {e}"))
    }
}

impl SimArgs {
    fn config(&self, channel: ChannelParams, coding: CodingParams) -> SimConfig {
        let mut cfg = SimConfig::new(channel, coding, self.mode, self.packets, self.seed);
        cfg.use_real_codec = self.real_codec;
        if let Some(Cap(c)) = self.hol_cap {
            cfg.hol_cap = c;
        }
        cfg
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Flags(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::GenerationTooLarge { .. } => Failure::Flags(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Numeric(format!("i/o: {e}"))
    }
}

/// A finished table and whether any row records a failed point.
struct Outcome {
    table: OutputTable,
    partial_failure: bool,
}

impl From<OutputTable> for Outcome {
    fn from(table: OutputTable) -> Self {
        Self {
            table,
            partial_failure: false,
        }
    }
}

fn coding(channel: &ChannelParams, rate: &RateArgs, k: usize, b: BDefinition) -> Result<CodingParams, Error> {
    CodingParams::with_b_definition(k, rate.redundancy(channel.epsilon)?, channel, b)
}

fn analyze(channel: &ChannelArgs, rate: &RateArgs, k: usize) -> Result<Outcome, Failure> {
    let c = channel.build()?;
    let coding = coding(&c, rate, k, channel.b_definition)?;
    let model = DelayModel::new(&c, &coding)?;
    let d = model.expected()?;
    let e = efficiency(model.kernel(), k)?;
    let mut t = OutputTable::new(&[
        "epsilon", "k", "redundancy", "mean_s", "std_s", "eta", "b", "truncated_mass",
    ]);
    t.push(vec![
        c.epsilon.into(),
        k.into(),
        coding.redundancy.into(),
        d.mean.into(),
        d.std().into(),
        e.eta.into(),
        coding.b.into(),
        d.truncated_mass.into(),
    ]);
    Ok(t.into())
}

fn sweep_table(channel: &ChannelArgs, rate: &RateArgs, ks: &KRangeArgs) -> Result<Outcome, Failure> {
    let c = channel.build()?;
    reject_k_definition(channel)?;
    let r = rate.redundancy(c.epsilon)?;
    let mut recs = sweep(&c, r, &ks.resolve(&c))?;
    smooth_local_maxima(&mut recs);
    let mut t = OutputTable::new(&[
        "k",
        "redundancy",
        "epsilon",
        "bdp",
        "b",
        "mean_s",
        "smoothed_mean_s",
        "std_s",
        "eta",
        "truncated_mass",
        "error",
    ]);
    let partial_failure = recs.iter().any(|r| !r.is_ok());
    for r in recs {
        t.push(vec![
            r.k.into(),
            r.redundancy.into(),
            r.epsilon.into(),
            r.bdp.into(),
            r.b.into(),
            r.mean.into(),
            r.smoothed_mean.into(),
            r.std.into(),
            r.eta.into(),
            r.truncated_mass.into(),
            r.error.as_deref().into(),
        ]);
    }
    Ok(Outcome {
        table: t,
        partial_failure,
    })
}

/// The optimizer always counts generations in flight against `n_k`.
fn reject_k_definition(channel: &ChannelArgs) -> Result<(), Failure> {
    match channel.b_definition {
        BDefinition::NK => Ok(()),
        BDefinition::K => Err(Failure::Flags(
            "--b-definition k is only supported by analyze, simulate and compare-arq".into(),
        )),
    }
}

fn kstar(channel: &ChannelArgs, rate: &RateArgs, ks: &KRangeArgs) -> Result<Outcome, Failure> {
    let c = channel.build()?;
    reject_k_definition(channel)?;
    let r = rate.redundancy(c.epsilon)?;
    let mut recs = sweep(&c, r, &ks.resolve(&c))?;
    smooth_local_maxima(&mut recs);
    let (k, rec) = pick_k_star(recs)?;
    let mut t = OutputTable::new(&[
        "epsilon", "redundancy", "k_star", "b", "mean_s", "smoothed_mean_s", "std_s", "eta",
    ]);
    t.push(vec![
        c.epsilon.into(),
        r.into(),
        k.into(),
        rec.b.into(),
        rec.mean.into(),
        rec.smoothed_mean.into(),
        rec.std.into(),
        rec.eta.into(),
    ]);
    Ok(t.into())
}

#[allow(clippy::too_many_arguments)]
fn tradeoff(
    channel: &ChannelArgs,
    margins: &[f64],
    ks: &KRangeArgs,
    seed: Option<u64>,
    packets: u64,
    reps: usize,
    mode: SimMode,
) -> Result<Outcome, Failure> {
    let c = channel.build()?;
    reject_k_definition(channel)?;
    let arq = seed.map(|seed| ArqReference {
        mode,
        n_packets: packets,
        seed,
        reps,
    });
    let curve = tradeoff_curve(&c, margins, &ks.resolve(&c), arq.as_ref())?;
    let mut t = OutputTable::new(&["scheme", "margin", "redundancy", "k_star", "eta", "mean_s", "std_s"]);
    for p in &curve.points {
        t.push(vec![
            "coded".into(),
            p.margin.into(),
            p.redundancy.into(),
            p.k_star.into(),
            p.eta.into(),
            p.mean.into(),
            p.std.into(),
        ]);
    }
    if let Some(p) = curve.arq {
        t.push(vec![
            "arq".into(),
            Cell::Empty,
            p.redundancy.into(),
            p.k_star.into(),
            p.eta.into(),
            p.mean.into(),
            p.std.into(),
        ]);
    }
    Ok(t.into())
}

fn simulate(
    channel: &ChannelArgs,
    rate: &RateArgs,
    k: usize,
    sim: &SimArgs,
    trace: Option<&PathBuf>,
) -> Result<Outcome, Failure> {
    let c = channel.build()?;
    let coding = coding(&c, rate, k, channel.b_definition)?;
    let mut cfg = sim.config(c, coding);
    cfg.record_packets = trace.is_some();
    let s = replicate(&cfg, sim.reps)?;
    if let (Some(path), Some(records)) = (trace, s.records.as_ref()) {
        let f = BufWriter::new(File::create(path)?);
        write_trace(f, &cfg, records)?;
    }
    let mut t = OutputTable::new(&[
        "mode",
        "epsilon",
        "k",
        "redundancy",
        "seed",
        "replications",
        "packets",
        "generations",
        "mean_s",
        "std_s",
        "std_error_s",
        "max_s",
        "efficiency",
        "innovation_failures",
    ]);
    t.push(vec![
        mode_name(cfg.mode).into(),
        c.epsilon.into(),
        k.into(),
        coding.redundancy.into(),
        cfg.seed.into(),
        s.replications.into(),
        s.packets.into(),
        s.generations.into(),
        s.mean_delay.into(),
        s.std_delay.into(),
        s.std_error.into(),
        s.max_delay.into(),
        s.mean_efficiency.into(),
        s.innovation_failures.into(),
    ]);
    Ok(t.into())
}

fn mode_name(m: SimMode) -> &'static str {
    match m {
        SimMode::Idealized => "idealized",
        SimMode::Relaxed => "relaxed",
    }
}

fn compare_arq(channel: &ChannelArgs, rate: &RateArgs, k: usize, sim: &SimArgs) -> Result<Outcome, Failure> {
    let c = channel.build()?;
    let coding = coding(&c, rate, k, channel.b_definition)?;
    let cfg = sim.config(c, coding);
    let coded = replicate(&cfg, sim.reps)?;
    let arq = replicate_arq(&cfg, sim.reps)?;
    let analytic = DelayModel::new(&c, &coding)?.expected()?;
    let mut t = OutputTable::new(&[
        "mode",
        "epsilon",
        "k",
        "redundancy",
        "seed",
        "analytic_mean_s",
        "coded_mean_s",
        "coded_std_s",
        "coded_efficiency",
        "arq_mean_s",
        "arq_std_s",
    ]);
    t.push(vec![
        mode_name(cfg.mode).into(),
        c.epsilon.into(),
        k.into(),
        coding.redundancy.into(),
        cfg.seed.into(),
        analytic.mean.into(),
        coded.mean_delay.into(),
        coded.std_delay.into(),
        coded.mean_efficiency.into(),
        arq.mean_delay.into(),
        arq.std_delay.into(),
    ]);
    Ok(t.into())
}

fn run(cli: &Cli) -> Result<(Outcome, &OutputArgs), Failure> {
    Ok(match &cli.command {
        Command::Analyze { channel, rate, k, out } => (analyze(channel, rate, *k)?, out),
        Command::Sweep { channel, rate, ks, out } => (sweep_table(channel, rate, ks)?, out),
        Command::Kstar { channel, rate, ks, out } => (kstar(channel, rate, ks)?, out),
        Command::Tradeoff {
            channel,
            margins,
            ks,
            seed,
            packets,
            reps,
            mode,
            out,
        } => (tradeoff(channel, margins, ks, *seed, *packets, *reps, *mode)?, out),
        Command::Simulate {
            channel,
            rate,
            k,
            sim,
            trace,
            out,
        } => (simulate(channel, rate, *k, sim, trace.as_ref())?, out),
        Command::CompareArq {
            channel,
            rate,
            k,
            sim,
            out,
        } => (compare_arq(channel, rate, *k, sim)?, out),
    })
}

fn emit(table: &OutputTable, out: &OutputArgs) -> io::Result<()> {
    match &out.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            table.write(&mut f, out.format)?;
            f.flush()
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            table.write(&mut lock, out.format)?;
            lock.flush()
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("CODEDELAY_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Flags(format!("CODEDELAY_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Numeric(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(&cli)).and_then(|(outcome, out)| {
        emit(&outcome.table, out)?;
        Ok(outcome.partial_failure)
    });
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("codedelay: some points failed; see the error column");
            ExitCode::from(3)
        }
        Err(Failure::Flags(msg)) => {
            eprintln!("codedelay: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("codedelay: {msg}");
            ExitCode::from(3)
        }
    }
}
