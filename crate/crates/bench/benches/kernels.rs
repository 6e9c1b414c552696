use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bracketlab::bracket::Formalism;
use bracketlab::harness::{RolloutGraph, TrainGraph};
use bracketlab::nn::{mlp_spec, NetParams};
use bracketlab::sim::couette::{sde_step, CouetteParams, CouetteSolver, DumbbellEnsemble};
use bracketlab::sim::pendulum::{self, PendulumGenConfig, PendulumParams};

const DIM: usize = 10;

fn net(f: Formalism) -> NetParams {
    NetParams::init_kaiming(&mlp_spec(DIM, 3, 64, f.head_len(DIM)), 7).unwrap()
}

fn state() -> Vec<f64> {
    PendulumGenConfig::default().initial_state(&mut ChaCha8Rng::seed_from_u64(1)).to_array().to_vec()
}

fn train_step(c: &mut Criterion) {
    let z = state();
    let target: Vec<f64> = z.iter().map(|x| x * 1.01).collect();
    for f in Formalism::ALL {
        let p = net(f);
        let mut g = TrainGraph::new(&p, f, 0.3, 100.0).unwrap();
        let mut acc: Vec<Vec<f64>> = p.blocks().map(|b| vec![0.0; b.len()]).collect();
        c.bench_function(&format!("train_snapshot/{f}"), |b| {
            b.iter(|| g.eval(black_box(&z), &target, Some(&mut acc)).unwrap())
        });
    }
}

fn rollout_step(c: &mut Criterion) {
    let z = state();
    for f in Formalism::ALL {
        let mut g = RolloutGraph::new(&net(f), f, 0.3).unwrap();
        c.bench_function(&format!("rollout_step/{f}"), |b| b.iter(|| g.step(black_box(&z)).unwrap().len()));
    }
}

fn pendulum_step(c: &mut Criterion) {
    let p = PendulumParams::default();
    let z = pendulum::PendulumState::from_slice(&state());
    c.bench_function("pendulum_substep", |b| b.iter(|| pendulum::step(black_box(&z), &p, 0.015).unwrap()));
}

fn couette(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ens = DumbbellEnsemble::equilibrium(10_000, &mut rng);
    c.bench_function("dumbbell_sde_10k", |b| b.iter(|| sde_step(&mut ens, black_box(0.5), 1.0, 1.0 / 150.0, &mut rng)));
    let params = CouetteParams { n_x: 20, k: 1000, ..CouetteParams::default() };
    let mut solver = CouetteSolver::new(params, 0).unwrap();
    c.bench_function("couette_snapshot_20x1k", |b| b.iter(|| solver.advance().unwrap()));
}

criterion_group!(benches, train_step, rollout_step, pendulum_step, couette);
criterion_main!(benches);
