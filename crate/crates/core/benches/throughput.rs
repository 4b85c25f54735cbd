use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hrmap::eval::{evaluate_log, map_score, noise_sweep, ApConfig, EvalConfig, SweepMetric};
use hrmap::raster::rasterize_local;
use hrmap::simulate::{generate_trajectory, generate_world, run_scenario, Scenario, TrajectoryKind, TrajectoryParams, WorldParams};
use hrmap::{Execution, GlobalMap, GridSpec, Pose2, RasterConfig, UpdateParams, VectorMap, WindowSpec};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn small_scenario() -> Scenario {
    let params = WorldParams { blocks_x: 1, blocks_y: 1, ..WorldParams::default() };
    let world = generate_world(1, &params).unwrap();
    let tp = TrajectoryParams { laps: 1, ..TrajectoryParams::default() };
    let traj = generate_trajectory(&world, 1, TrajectoryKind::Loop, &tp).unwrap();
    Scenario::new(world, vec![traj], 1)
}

fn engine(c: &mut Criterion) {
    let s = small_scenario();
    let log = run_scenario(&s).unwrap().log;
    let window = WindowSpec::default();
    let raster = RasterConfig::default();
    let masks: Vec<_> = log.iter().take(64).map(|r| rasterize_local(&r.gt, &window, &raster).unwrap()).collect();
    let poses: Vec<Pose2> = log.iter().take(64).map(|r| r.true_pose).collect();

    let mut g = c.benchmark_group("engine");
    g.throughput(Throughput::Elements(masks.len() as u64));
    g.bench_function("rasterize", |b| {
        b.iter(|| log.iter().take(64).map(|r| rasterize_local(&r.gt, &window, &raster).unwrap()).collect::<Vec<_>>())
    });
    g.bench_function("update", |b| {
        b.iter(|| {
            let mut map = GlobalMap::new(GridSpec::default(), UpdateParams::default()).unwrap();
            for (m, p) in masks.iter().zip(&poses) {
                map.update(m, p).unwrap();
            }
            map
        })
    });
    let mut map = GlobalMap::new(GridSpec::default(), UpdateParams::default()).unwrap();
    for (m, p) in masks.iter().zip(&poses) {
        map.update(m, p).unwrap();
    }
    g.bench_function("retrieve", |b| b.iter(|| poses.iter().map(|p| map.retrieve(p, &window).unwrap()).collect::<Vec<_>>()));
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let s = small_scenario();
    let log = run_scenario(&s).unwrap().log;
    let pairs: Vec<(&VectorMap, &VectorMap)> = log.iter().map(|r| (&r.prediction, &r.gt)).collect();
    let ap = ApConfig::default();
    let cfg = EvalConfig::default();

    let mut g = c.benchmark_group("evaluation");
    g.sample_size(10);
    g.throughput(Throughput::Elements(log.len() as u64));
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("map_score", name), &exec, |b, &exec| {
            b.iter(|| map_score(&pairs, &ap, exec).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("evaluate_log", name), &exec, |b, &exec| {
            b.iter(|| evaluate_log(&log, &cfg, None, exec).unwrap())
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let s = small_scenario();
    let cfg = EvalConfig::default();
    let mut g = c.benchmark_group("noise_sweep_2x2");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| noise_sweep(&s, &[0.0, 0.1], &[0.0, 0.01], SweepMetric::Miou, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, engine, evaluation, sweep);
criterion_main!(benches);
