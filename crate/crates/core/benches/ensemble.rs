//! Monte Carlo ensembles, sequential vs rayon-parallel.
//!
//! Build with `--no-default-features` to see the sequential fallback: both
//! modes then run on the calling thread.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use num_complex::Complex64;

use qsme::analysis::EnsembleAccumulator;
use qsme::channels::{discrete_step, qnd_channel, PartitionedChannel};
use qsme::diffusive::{qubit_zmeas_model, run_diffusive};
use qsme::ensemble::{for_each_trajectory, map_trajectories, ExecMode, DEFAULT_BATCH};
use qsme::jump::{qubit_decay_model, run_jump};
use qsme::record::{Observable, RecordOptions};
use qsme::rng::trajectory_rng;
use qsme::systems::{coherent, DensityOperator, FockSpace};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn diffusive(c: &mut Criterion) {
    let model = qubit_zmeas_model(1.0, 1.0).unwrap();
    let rho0 = DensityOperator::from_bloch(1.0, 0.0, 0.0).unwrap();
    let opts = RecordOptions::new(vec![Observable::BlochZ, Observable::Lyapunov(qsme::analysis::LyapunovKind::BlochZ)])
        .with_stride(50);
    let mut g = c.benchmark_group("diffusive_zmeas_1000_steps");
    for ntraj in [64u64, 512] {
        g.throughput(Throughput::Elements(ntraj));
        for (name, mode) in MODES {
            g.bench_with_input(BenchmarkId::new(name, ntraj), &ntraj, |b, &n| {
                b.iter(|| {
                    let mut acc = EnsembleAccumulator::new();
                    for_each_trajectory(
                        n,
                        mode,
                        DEFAULT_BATCH,
                        |k| run_diffusive(&model, &rho0, 1e-3, 1.0, &mut trajectory_rng(1, k), &opts),
                        |rec| acc.add(&rec),
                    )
                    .unwrap();
                    black_box(acc.finish().unwrap())
                })
            });
        }
    }
    g.finish();
}

fn jump(c: &mut Criterion) {
    let model = qubit_decay_model(0.0, 1.0).unwrap();
    let rho0 = DensityOperator::qubit_e();
    let opts = RecordOptions::new(vec![Observable::BlochZ]).with_stride(100);
    let mut g = c.benchmark_group("jump_decay_2000_steps");
    let ntraj = 256u64;
    g.throughput(Throughput::Elements(ntraj));
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                let recs = map_trajectories(ntraj, mode, |k| {
                    run_jump(&model, &rho0, 1e-3, 2.0, &mut trajectory_rng(2, k), &opts)
                })
                .unwrap();
                black_box(recs.iter().map(|r| r.total_counts()[0]).sum::<u32>())
            })
        });
    }
    g.finish();
}

fn qnd(c: &mut Criterion) {
    let space = FockSpace::new(15);
    let psi = coherent(Complex64::new(1.5, 0.0), space).unwrap();
    let rho0 = DensityOperator::from_ket(&psi.amplitudes).unwrap();
    let ch = PartitionedChannel::perfect(qnd_channel(0.61, space).unwrap());
    let mut g = c.benchmark_group("qnd_photon_200_probes");
    let ntraj = 128u64;
    g.throughput(Throughput::Elements(ntraj));
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                map_trajectories(ntraj, mode, |k| {
                    let mut rng = trajectory_rng(3, k);
                    let mut rho = rho0.clone();
                    for _ in 0..200 {
                        rho = discrete_step(&ch, &rho, &mut rng)?.1;
                    }
                    Ok(rho.population(0))
                })
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = diffusive, jump, qnd
}
criterion_main!(benches);
