use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_codedelay");
const CHANNEL: [&str; 6] = ["--rate-bps", "10e6", "--packet-bits", "10000", "--rtt-s", "0.1"];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn with_channel(cmd: &str, eps: &str, extra: &[&str]) -> Vec<String> {
    let mut v = vec![cmd.to_string(), "--epsilon".into(), eps.into()];
    v.extend(CHANNEL.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn ok(args: &[String]) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = run(&refs);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Column `name` of the first data row.
fn field(csv_text: &str, name: &str) -> String {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = r.headers().unwrap().iter().position(|h| h == name).expect("column exists");
    r.records().next().unwrap().unwrap()[idx].to_string()
}

#[test]
fn lossless_analyze() {
    let out = ok(&with_channel("analyze", "0", &["--k", "8", "--redundancy", "1"]));
    let mean: f64 = field(&out, "mean_s").parse().unwrap();
    assert!((mean - 0.0505).abs() < 1e-12, "{mean}");
    assert_eq!(field(&out, "std_s").parse::<f64>().unwrap(), 0.0);
}

#[test]
fn identical_invocations_identical_bytes() {
    let args = with_channel("sweep", "0.1", &["--margin", "0.1", "--k-range", "2..12"]);
    assert_eq!(ok(&args), ok(&args));
    let sim = with_channel("simulate", "0.1", &["--k", "8", "--margin", "0.1", "--seed", "5", "--packets", "5000", "--mode", "relaxed"]);
    assert_eq!(ok(&sim), ok(&sim));
}

#[test]
fn margin_matches_redundancy() {
    let r = (1.1f64 / 0.9).to_string();
    let a = ok(&with_channel("analyze", "0.1", &["--k", "16", "--margin", "0.1"]));
    let b = ok(&with_channel("analyze", "0.1", &["--k", "16", "--redundancy", &r]));
    assert_eq!(a, b);
}

#[test]
fn kstar_ties_resolve_to_smallest() {
    let out = ok(&with_channel("kstar", "0", &["--redundancy", "1", "--k-range", "3..9"]));
    assert_eq!(field(&out, "k_star"), "3");
}

#[test]
fn coded_beats_arq() {
    let out = ok(&with_channel(
        "compare-arq",
        "0.1",
        &["--k", "32", "--margin", "0.1", "--seed", "11", "--packets", "50000"],
    ));
    let coded: f64 = field(&out, "coded_mean_s").parse().unwrap();
    let arq: f64 = field(&out, "arq_mean_s").parse().unwrap();
    assert!(coded < arq, "{coded} vs {arq}");
}

#[test]
fn csv_parses_back() {
    let out = ok(&with_channel("sweep", "0.05", &["--margin", "0.2", "--k-range", "2,4,8"]));
    let mut r = csv::Reader::from_reader(out.as_bytes());
    let width = r.headers().unwrap().len();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        assert_eq!(rec.len(), width);
        let mean: f64 = rec[5].parse().unwrap();
        assert_eq!(mean.to_string(), rec[5]);
        rows += 1;
    }
    assert_eq!(rows, 3);
}

#[test]
fn json_and_file_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    let p = path.to_str().unwrap();
    let stdout = ok(&with_channel("analyze", "0.1", &["--k", "4", "--margin", "0.1", "--format", "json", "--out", p]));
    assert!(stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v[0]["k"], 4);
    assert!(v[0]["mean_s"].as_f64().unwrap() > 0.05);
}

#[test]
fn trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let p = path.to_str().unwrap();
    ok(&with_channel("simulate", "0.1", &["--k", "4", "--margin", "0.1", "--seed", "1", "--packets", "40", "--trace", p]));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert_eq!(lines.next().unwrap(), "packet_id,generation_id,first_tx_slot,delivered_slot,delay_s");
    assert_eq!(lines.count(), 40);
}

#[test]
fn tradeoff_includes_arq_with_seed() {
    let out = ok(&with_channel(
        "tradeoff",
        "0.1",
        &["--margins", "0.05,0.2", "--k-points", "24", "--seed", "2", "--packets", "20000"],
    ));
    let schemes: Vec<String> = csv::Reader::from_reader(out.as_bytes())
        .records()
        .map(|r| r.unwrap()[0].to_string())
        .collect();
    assert_eq!(schemes, ["coded", "coded", "arq"]);
}

#[test]
fn exit_codes() {
    let missing = run(&["analyze", "--epsilon", "0.1"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = with_channel("analyze", "1.5", &["--k", "4", "--margin", "0.1"]);
    let refs: Vec<&str> = bad.iter().map(String::as_str).collect();
    assert_eq!(run(&refs).status.code(), Some(2));

    let both = with_channel("analyze", "0.1", &["--k", "4", "--margin", "0.1", "--redundancy", "1.2"]);
    let refs: Vec<&str> = both.iter().map(String::as_str).collect();
    assert_eq!(run(&refs).status.code(), Some(2));

    let no_seed = with_channel("simulate", "0.1", &["--k", "4", "--margin", "0.1"]);
    let refs: Vec<&str> = no_seed.iter().map(String::as_str).collect();
    assert_eq!(run(&refs).status.code(), Some(2));

    let partial = with_channel("sweep", "0.1", &["--redundancy", "1.2", "--k-range", "4,5000"]);
    let refs: Vec<&str> = partial.iter().map(String::as_str).collect();
    let out = run(&refs);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("exceeds"));
}

#[test]
fn thread_cap() {
    let args = with_channel("sweep", "0.1", &["--margin", "0.1", "--k-range", "2..6"]);
    let single = Command::new(BIN).args(&args).env("CODEDELAY_THREADS", "1").output().unwrap();
    assert!(single.status.success());
    assert_eq!(String::from_utf8(single.stdout).unwrap(), ok(&args));
    let bad = Command::new(BIN).args(&args).env("CODEDELAY_THREADS", "zero").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
