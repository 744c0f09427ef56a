use aoi_sense::dqn::PredictionTable;
use aoi_sense::env::{self, ChannelParams, CodebookConfig, TrajectoryConfig};
use aoi_sense::exec::Execution;
use aoi_sense::predictor::{Predictor, PredictorConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_execution(c: &mut Criterion) {
    let traj = TrajectoryConfig {
        num_slots: 600,
        ..Default::default()
    };
    let data =
        env::generate_trajectory(&traj, &CodebookConfig::default(), &ChannelParams::default())
            .unwrap();
    let cfg = PredictorConfig {
        epochs: 1,
        age_limit: 5,
        ..Default::default()
    };
    let (predictor, _) = Predictor::train(&data, &cfg, 8, 1).unwrap();
    let items: Vec<_> = data.iter().map(|s| (s, 2u64, s.label)).collect();

    let mut group = c.benchmark_group("execution");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let name = format!("{exec:?}");
        group.bench_with_input(
            BenchmarkId::new("prediction_table", &name),
            &exec,
            |b, &e| b.iter(|| PredictionTable::build(&predictor, &data, e).unwrap()),
        );
        group.bench_with_input(BenchmarkId::new("topk_accuracy", &name), &exec, |b, &e| {
            b.iter(|| predictor.topk_accuracy(&items, 1, e).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_execution);
criterion_main!(benches);
