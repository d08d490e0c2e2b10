use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use diffnea_core::dynamics::{rnea, KinematicTree};
use diffnea_core::policy::{train_offline, PolicyDistribution, TrainConfig};
use diffnea_core::sysid::{jacobian, loss, ArmLoss, ArmSample, LossKind};
use diffnea_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [
    ("parallel", Execution::Parallel),
    ("sequential", Execution::Sequential),
];

fn samples(tree: &KinematicTree, n: usize, rng: &mut ChaCha8Rng) -> Vec<ArmSample> {
    let rt = tree.realize();
    let dof = tree.dof();
    (0..n)
        .map(|_| {
            let mut v = |s: f64| {
                (0..dof)
                    .map(|_| rng.random_range(-s..s))
                    .collect::<Vec<f64>>()
            };
            let (q, qd, qdd) = (v(3.0), v(2.0), v(2.0));
            let u = rnea(&rt, &q, &qd, &qdd).unwrap().torques;
            ArmSample { q, qd, qdd, u }
        })
        .collect()
}

fn arm_losses(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tree = KinematicTree::random(&mut rng, 4);
    let data = samples(&tree, 2000, &mut rng);
    let params = tree.params();
    let free: Vec<usize> = (0..params.len()).collect();
    let mut group = c.benchmark_group("arm_loss");
    group.sample_size(20);
    for kind in [LossKind::Inverse, LossKind::Forward] {
        let model = ArmLoss::new(&tree, &data, kind).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(
                BenchmarkId::new(format!("{kind:?}/value"), name),
                &exec,
                |b, &exec| b.iter(|| loss(&model, black_box(&params), exec).unwrap()),
            );
            group.bench_with_input(
                BenchmarkId::new(format!("{kind:?}/jacobian"), name),
                &exec,
                |b, &exec| b.iter(|| jacobian(&model, black_box(&params), &free, exec).unwrap()),
            );
        }
    }
    group.finish();
}

fn policy_search(c: &mut Criterion) {
    let target: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    // a reward with some per-sample cost, standing in for a model rollout
    let reward = |w: &[f64]| {
        let mut acc = 0.0;
        for k in 0..2000 {
            let s = (k as f64 * 1e-3).sin();
            acc += w
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b * s).powi(2))
                .sum::<f64>();
        }
        Ok(-acc * 1e-3)
    };
    let p0 = PolicyDistribution::isotropic(vec![0.0; 16], 0.25, 1e-6);
    let cfg = TrainConfig {
        n_iters: 5,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("policy_search");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| train_offline(reward, &p0, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, arm_losses, policy_search);
criterion_main!(benches);
