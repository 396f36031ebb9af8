use std::hint::black_box;

use ccem::checks::ToyLinearModel;
use ccem::config::ExperimentConfig;
use ccem::nn::{Matrix, Mlp, MlpSpec};
use ccem::planner::{plan, CemConfig, ToldSnapshot};
use ccem::trainer::Trainer;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mlp(c: &mut Criterion) {
    let (net, layout) = Mlp::standalone(MlpSpec::new(54, &[256, 256], 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = ccem::nn::ParamVector::zeros(layout);
    net.init_uniform(&mut p, &mut rng);
    let x = Matrix::from_vec(256, 54, vec![0.1; 256 * 54]).unwrap();
    c.bench_function("mlp forward 256x(54-256-256-1)", |b| b.iter(|| net.forward_batch(&p, black_box(&x)).unwrap()));
    c.bench_function("mlp forward+backward 256x(54-256-256-1)", |b| {
        b.iter(|| {
            let (y, cache) = net.forward_cached(&p, black_box(&x)).unwrap();
            let mut g = p.zeros_like();
            net.backward(&p, &cache, &y, Some(&mut g)).unwrap()
        })
    });
}

fn planner(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let toy = ToyLinearModel::random(&mut rng);
    let cfg = CemConfig::default();
    c.bench_function("cem default config on toy model", |b| {
        b.iter(|| plan(&toy, &cfg, black_box(&[0.2, -0.3]), None, 0.0, &mut rng).unwrap())
    });

    let text = include_str!("../../../configs/desk-pointmass.json");
    let exp = ExperimentConfig::resolve(Some(("desk-pointmass.json", text)), &[]).unwrap();
    let trainer = Trainer::new(&exp, 0).unwrap();
    let snap = ToldSnapshot {
        told: &trainer.model.told,
        params: &trainer.params,
    };
    c.bench_function("cem desk profile on TOLD model", |b| {
        b.iter(|| plan(&snap, &exp.cem, black_box(&[0.0; 4]), None, 0.1, &mut rng).unwrap())
    });
}

fn update(c: &mut Criterion) {
    let text = include_str!("../../../configs/desk-pointmass.json");
    let exp = ExperimentConfig::resolve(Some(("desk-pointmass.json", text)), &["train.seed_steps=400".into()]).unwrap();
    let mut trainer = Trainer::new(&exp, 0).unwrap();
    while trainer.buffer.len() < trainer.min_buffer() {
        trainer.collect_episode().unwrap();
    }
    c.bench_function("training update desk profile", |b| b.iter(|| trainer.update().unwrap()));
}

criterion_group!(benches, mlp, planner, update);
criterion_main!(benches);
