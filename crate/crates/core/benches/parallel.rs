//! Rayon data-parallel path against the sequential fallback on the workloads that fan out:
//! the registration grid search and a seed benchmark over several circuits.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raceline_core::align::{centerline_reference, register_similarity, AlignmentTransform, RegistrationConfig};
use raceline_core::bench::{run_benchmark, BenchTrack, Strategy};
use raceline_core::geometry::{RacelineOffset, TrackModel, Vec2};
use raceline_core::par;
use raceline_core::seeds::{min_curvature_seed, solver_mc_margin};
use raceline_core::solver::{SolverConfig, VehicleParams};
use raceline_core::synth::{generate_track, TrackSpec};

fn small_track(seed: u64) -> TrackModel {
    generate_track(&TrackSpec {
        seed,
        corners: 6,
        segment_length_range: [60.0, 200.0],
        ..TrackSpec::default()
    })
    .unwrap()
}

fn registration(c: &mut Criterion) {
    let track = small_track(40);
    let reference = centerline_reference(&track, 0.5);
    let truth = AlignmentTransform {
        theta: 1.1,
        t: [12.0, -30.0],
        sigma: 1.04,
        loss: 0.0,
    };
    let inv = truth.inverse();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let telemetry: Vec<Vec2> = centerline_reference(&track, 2.0)
        .into_iter()
        .map(|p| inv.apply(p + Vec2::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2))))
        .collect();
    let config = RegistrationConfig::default();
    let run = || register_similarity(black_box(&telemetry), black_box(&reference), &config).unwrap();

    let mut g = c.benchmark_group("registration");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(run));
    g.bench_function("sequential", |b| b.iter(|| par::sequential(run)));
    g.finish();
}

fn seed_benchmark(c: &mut Criterion) {
    let params = VehicleParams::default();
    let tracks: Vec<TrackModel> = (41..44).map(small_track).collect();
    // the MC line stands in for the expert; only iteration counts matter here
    let experts: Vec<RacelineOffset> = tracks
        .iter()
        .map(|t| min_curvature_seed(t, solver_mc_margin(params.half_width)).unwrap())
        .collect();
    let ids: Vec<String> = (0..tracks.len()).map(|i| format!("bench_{i}")).collect();
    let bench_tracks: Vec<BenchTrack> = tracks
        .iter()
        .zip(&experts)
        .zip(&ids)
        .map(|((track, expert), id)| BenchTrack { id, track, expert })
        .collect();
    let strategies = [Strategy::CL, Strategy::MC, Strategy::GT];
    let config = SolverConfig::default();
    let run = || run_benchmark(black_box(&bench_tracks), None, &strategies, &params, &config).unwrap();

    let mut g = c.benchmark_group("seed_benchmark");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(run));
    g.bench_function("sequential", |b| b.iter(|| par::sequential(run)));
    g.finish();
}

criterion_group!(benches, registration, seed_benchmark);
criterion_main!(benches);
