use bracketlab::bracket::Formalism;
use bracketlab::dataset::{Dataset, Manifest, System};
use bracketlab::harness::{
    evaluate, metric_rows, rollout, run_experiment, sweep, teacher_forced_loss, train, train_from, EnergyFn,
    ExperimentConfig, HarnessError, SweepSpec, TrainConfig, TrainGraph,
};
use bracketlab::nn::{mlp_spec, NetParams};

const D: usize = 3;

/// Linear `z ↦ Wz + b` head with small deterministic entries.
fn linear_net(f: Formalism) -> NetParams {
    let mut p = NetParams::zeros(&mlp_spec(D, 0, 0, f.head_len(D))).unwrap();
    let layer = &mut p.layers_mut()[0];
    for (i, w) in layer.weight.iter_mut().enumerate() {
        *w = 0.3 * ((i as f64) * 1.37).sin();
    }
    for (i, b) in layer.bias.iter_mut().enumerate() {
        *b = 0.2 * ((i as f64) * 0.91).cos();
    }
    p
}

/// Euler step of the linear head, computed by hand.
fn hand_step(p: &NetParams, z: &[f64], dt: f64, f: Formalism) -> (Vec<f64>, f64) {
    let layer = &p.layers()[0];
    let out: Vec<f64> = (0..layer.bias.len())
        .map(|r| layer.bias[r] + (0..D).map(|c| layer.weight[r * D + c] * z[c]).sum::<f64>())
        .collect();
    let dd = D * D;
    let lmat = |i: usize, j: usize| out[i * D + j] - out[j * D + i];
    let mmat = |i: usize, j: usize| (0..D).map(|k| out[dd + i * D + k] * out[dd + j * D + k]).sum::<f64>();
    let row = |r: usize| -> Vec<f64> { layer.weight[r * D..(r + 1) * D].to_vec() };
    let mv = |a: &dyn Fn(usize, usize) -> f64, x: &[f64]| -> Vec<f64> {
        (0..D).map(|i| (0..D).map(|j| a(i, j) * x[j]).sum()).collect()
    };
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    match f {
        Formalism::SingleGenerator => {
            let gf = row(2 * dd);
            let (a, b) = (mv(&lmat, &gf), mv(&mmat, &gf));
            ((0..D).map(|i| z[i] + dt * (a[i] + b[i])).collect(), 0.0)
        }
        Formalism::Generic => {
            let (gh, gs) = (row(2 * dd), row(2 * dd + 1));
            let (a, b) = (mv(&lmat, &gh), mv(&mmat, &gs));
            let degen = sq(&mv(&lmat, &gs)) + sq(&mv(&mmat, &gh));
            ((0..D).map(|i| z[i] + dt * (a[i] + b[i])).collect(), degen)
        }
    }
}

fn toy_dataset() -> Dataset {
    let (n, t) = (4, 6);
    let mut data = Vec::new();
    for i in 0..n {
        for k in 0..t {
            let a = 0.4 * k as f64 + i as f64;
            data.extend([a.cos(), a.sin(), 0.1 * i as f64 - 0.05 * k as f64]);
        }
    }
    Dataset::new(data, (n, t, D), 0.1, System::Custom, Manifest::new()).unwrap()
}

fn cfg(f: Formalism) -> TrainConfig {
    TrainConfig { formalism: f, epochs: 6, hidden_layers: 2, hidden_width: 8, ..TrainConfig::default() }
}

#[test]
fn teacher_forced_loss_matches_hand_computation() {
    let ds = toy_dataset();
    for f in Formalism::ALL {
        let p = linear_net(f);
        let c = cfg(f);
        let mut data = 0.0;
        let mut degen = 0.0;
        for i in [0, 2] {
            for t in 0..ds.n_snapshots() - 1 {
                let (next, dg) = hand_step(&p, ds.state(i, t), ds.dt(), f);
                data += next.iter().zip(ds.state(i, t + 1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                degen += dg;
            }
        }
        let l = teacher_forced_loss(&p, &ds, &[0, 2], &c).unwrap();
        assert!((l.data - data).abs() < 1e-12 * data, "{f}: {} vs {data}", l.data);
        match f {
            Formalism::Generic => assert!((l.degen.unwrap() - degen).abs() < 1e-12 * degen),
            Formalism::SingleGenerator => assert_eq!(l.degen, None),
        }
        let reg: f64 = p.layers()[0].weight.iter().map(|w| w * w).sum();
        assert!((l.reg - reg).abs() < 1e-14 * reg);
    }
}

#[test]
fn rollout_first_step_equals_teacher_forced_prediction() {
    let ds = toy_dataset();
    for f in Formalism::ALL {
        let p = NetParams::init_kaiming(&cfg(f).layer_spec(D), 2).unwrap();
        let mut tg = TrainGraph::new(&p, f, ds.dt(), 100.0).unwrap();
        tg.load(&p).unwrap();
        tg.eval(ds.state(1, 0), ds.state(1, 1), None).unwrap();
        let r = rollout(&p, ds.state(1, 0), 1, ds.dt(), f).unwrap();
        assert_eq!(r.state(1), tg.prediction());
    }
}

#[test]
fn epoch_zero_loss_is_the_initial_loss() {
    let ds = toy_dataset();
    for f in Formalism::ALL {
        let c = TrainConfig { base_lr: 0.0, ..cfg(f) };
        let out = train(&ds, &[0, 1, 3], &c).unwrap();
        let init = NetParams::init_kaiming(&c.layer_spec(D), c.seed).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.initial, teacher_forced_loss(&init, &ds, &[0, 1, 3], &c).unwrap());
        assert_eq!(out.curves.data.len(), 6);
        assert!(out.curves.data.iter().all(|&v| v == out.curves.data[0]));
        assert!((out.curves.data[0] - out.initial.data).abs() <= 1e-12 * out.initial.data);
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let ds = toy_dataset();
    let c = TrainConfig { epochs: 0, ..cfg(Formalism::Generic) };
    let p0 = NetParams::init_kaiming(&c.layer_spec(D), 9).unwrap();
    let out = train_from(&ds, &[0], &c, p0.clone()).unwrap();
    assert_eq!(out.params, p0);
    assert!(out.curves.data.is_empty());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let ds = toy_dataset();
    for f in Formalism::ALL {
        let c = TrainConfig { epochs: 40, base_lr: 1e-2, ..cfg(f) };
        let a = train(&ds, &[0, 1], &c).unwrap();
        let b = train(&ds, &[0, 1], &c).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.curves, b.curves);
        assert!(a.final_loss.data < a.initial.data, "{f}");
        assert_eq!(a.milestones.iter().map(|m| m.0).collect::<Vec<_>>(), vec![13, 26]);
    }
}

#[test]
fn divergence_aborts_with_partial_curves() {
    let ds = toy_dataset();
    let c = TrainConfig { divergence_threshold: 1e-30, ..cfg(Formalism::Generic) };
    match train(&ds, &[0, 1], &c) {
        Err(e @ HarnessError::Diverged { epoch: 0, .. }) => {
            assert!(e.is_numerical());
            let HarnessError::Diverged { partial, .. } = e else { unreachable!() };
            assert_eq!(partial.data.len(), 1);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn evaluation_metrics_on_stubs() {
    // A zero network holds z0; truth is z0 then a unit offset on one variable.
    let n_t = 5;
    let z0 = [0.5, -1.0, 2.0];
    let mut data = Vec::new();
    for t in 0..n_t {
        let mut z = z0;
        if t > 0 {
            z[1] += 1.0;
        }
        data.extend(z);
    }
    data.extend(z0.repeat(n_t));
    let ds = Dataset::new(data, (2, n_t, D), 0.1, System::Custom, Manifest::new()).unwrap();
    let p = NetParams::zeros(&mlp_spec(D, 1, 4, Formalism::SingleGenerator.head_len(D))).unwrap();
    let ev = evaluate(&p, &ds, &[0, 1], Formalism::SingleGenerator, &EnergyFn::Component(1)).unwrap();
    let t0 = &ev.trajectories[0];
    assert_eq!(t0.mse, vec![0.0, (n_t - 1) as f64 / n_t as f64, 0.0]);
    assert_eq!(ev.trajectories[1].mse, vec![0.0; 3]);
    assert_eq!(t0.energy_error[0], Some(0.0));
    assert!(t0.energy_error[1..].iter().all(|e| *e == Some(1.0)));
    assert_eq!(ev.failures, 0);
    assert_eq!(ev.median_energy_error, Some(0.5));
    assert_eq!(ev.degeneracy, None);
    assert_eq!(ev.trivial_solution, None);
}

#[test]
fn pendulum_energy_error_uses_the_simulator() {
    let mut cfg = ExperimentConfig::desk();
    cfg.pendulum_gen.n_traj = 2;
    cfg.pendulum_gen.horizon = 0.9;
    cfg.truncate = None;
    let data = bracketlab::harness::prepare_data(&cfg).unwrap();
    let ds = &data.dataset;
    let p = NetParams::zeros(&mlp_spec(10, 1, 4, Formalism::Generic.head_len(10))).unwrap();
    let energy = EnergyFn::for_dataset(ds);
    let ev = evaluate(&p, ds, &[0], Formalism::Generic, &energy).unwrap();
    let e0 = bracketlab::sim::pendulum::total_energy(ds.state(0, 0), &cfg.pendulum).unwrap();
    for t in 0..3 {
        let et = bracketlab::sim::pendulum::total_energy(ds.state(0, t), &cfg.pendulum).unwrap();
        assert_eq!(ev.trajectories[0].energy_error[t], Some((e0 - et).abs()));
    }
}

fn tiny_experiment() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.pendulum_gen.n_traj = 5;
    c.pendulum_gen.horizon = 1.5;
    c.truncate = None;
    c.train.epochs = 3;
    c.train.hidden_layers = 1;
    c.train.hidden_width = 6;
    c
}

#[test]
fn one_cell_sweep_equals_a_single_run() {
    let base = tiny_experiment().to_map();
    let spec = SweepSpec { base: base.clone(), axes: vec![] };
    let cells = sweep(&spec, 1).unwrap();
    assert_eq!(cells.len(), 1);
    let (_, _, direct) = run_experiment(&ExperimentConfig::from_map(&base).unwrap()).unwrap();
    assert_eq!(cells[0].metrics.as_ref(), Some(&direct));
    assert_eq!(metric_rows("r", "cell-000", cells[0].metrics.as_ref().unwrap()), metric_rows("r", "cell-000", &direct));
}

#[test]
fn grid_sweep_runs_every_cell_in_parallel_deterministically() {
    let mut spec = SweepSpec { base: tiny_experiment().to_map(), axes: vec![] };
    spec.axes.push(("train.formalism".into(), vec!["generic".into(), "single".into()]));
    spec.axes.push(("train.hidden_width".into(), vec!["2".into(), "4".into(), "6".into()]));
    let a = sweep(&spec, 2).unwrap();
    let b = sweep(&spec, 1).unwrap();
    assert_eq!(a.len(), 6);
    assert_eq!(a, b);
    assert!(a.iter().all(|c| c.error.is_none()));
    assert_eq!(a[4].formalism, "single");
    assert_eq!(a[4].overrides["train.hidden_width"], "4");
}

#[test]
fn bad_cell_fails_the_sweep_up_front() {
    let mut spec = SweepSpec { base: tiny_experiment().to_map(), axes: vec![] };
    spec.axes.push(("train.hidden_width".into(), vec!["4".into(), "wide".into()]));
    assert!(matches!(sweep(&spec, 1), Err(HarnessError::Config(_))));
}
