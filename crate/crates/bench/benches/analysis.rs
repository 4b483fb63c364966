use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use codedelay::delay::expected_delay;
use codedelay::efficiency::efficiency;
use codedelay::kernel::TransitionKernel;
use codedelay::model::{redundancy_from_margin, ChannelParams, CodingParams};
use codedelay::optimizer::{default_k_range, k_star};

fn channel() -> ChannelParams {
    ChannelParams::from_rtt(0.1, 10e6, 10_000.0, 0.1).unwrap()
}

fn kernel_and_delay(c: &mut Criterion) {
    let ch = channel();
    let r = redundancy_from_margin(0.1, 0.1).unwrap();
    let mut group = c.benchmark_group("point");
    for k in [8usize, 32, 128] {
        let coding = CodingParams::new(k, r, &ch).unwrap();
        group.bench_with_input(BenchmarkId::new("kernel", k), &coding, |b, coding| {
            b.iter(|| TransitionKernel::build(black_box(&ch), black_box(coding)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("expected_delay", k), &coding, |b, coding| {
            b.iter(|| expected_delay(black_box(&ch), black_box(coding)).unwrap())
        });
        let kernel = TransitionKernel::build(&ch, &coding).unwrap();
        group.bench_with_input(BenchmarkId::new("efficiency", k), &kernel, |b, kernel| {
            b.iter(|| efficiency(black_box(kernel), k).unwrap())
        });
    }
    group.finish();
}

fn optimizer(c: &mut Criterion) {
    let ch = channel();
    let r = redundancy_from_margin(0.1, 0.1).unwrap();
    let ks = default_k_range(ch.bdp, 64);
    c.bench_function("k_star/bdp100", |b| b.iter(|| k_star(black_box(&ch), r, &ks).unwrap()));
}

criterion_group!(benches, kernel_and_delay, optimizer);
criterion_main!(benches);
