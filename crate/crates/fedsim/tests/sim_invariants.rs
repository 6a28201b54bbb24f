use fedot_core::{Matrix, RngStream};
use fedsim::minimax::{stationarity_proxy_generic, QuadraticToy};
use fedsim::model::{load_checkpoint, save_checkpoint, Blocks};
use fedsim::objective::{all_indices, view_loss, ClientView};
use fedsim::shift::{affine_benchmark_task, make_federated_task};
use fedsim::sim::{evaluate, evaluate_client, run, run_from, run_single_sgda, stationarity_proxy, train_pooled_oracle, BatchSampler};
use fedsim::{AvgMode, BaseTaskSpec, ClassifierParams, FederatedTask, FederationConfig, Method, ModelSpec, Objective, ObjectiveSpec, PotentialKind, ShiftSpec, TransportKind, TransportParams};
use rand::Rng;
use rand_distr::StandardNormal;

fn no_shift_task(n: usize, m: usize, seed: u64) -> FederatedTask {
    let base = BaseTaskSpec::synthetic(10, 3, 2.0, 3.0, 0.6, m, 100, RngStream::new(seed, 0).named("base")).unwrap();
    make_federated_task(&base, &vec![ShiftSpec::identity_affine(10); n], RngStream::new(seed, 0).named("draw")).unwrap()
}

fn identical_clients(task: &FederatedTask, n: usize) -> FederatedTask {
    let mut out = task.clone();
    out.shifts = vec![task.shifts[0].clone(); n];
    for set in [&mut out.train, &mut out.test, &mut out.base_train, &mut out.base_test] {
        *set = vec![set[0].clone(); n];
    }
    out
}

fn small(n: usize, m: usize) -> FederationConfig {
    FederationConfig { n, m, batch: 10, total_iters: 60, tau: 1, eta1: 0.01, eta2: 0.01, max_steps_per_min_step: 3, keep_trajectory: true, ..Default::default() }
}

#[test]
fn single_client_matches_single_machine_sgda() {
    let task = affine_benchmark_task(1, 4, 3, 40, 10, 1).unwrap();
    for (transport, potential) in [(TransportKind::Affine, PotentialKind::Quadratic), (TransportKind::Relu, PotentialKind::Relu { hidden: 8 })] {
        let config = FederationConfig { transport, potential, ..small(1, 40) };
        let fed = run(&config, &task).unwrap();
        let reference = run_single_sgda(&config, &task.train[0]).unwrap();
        assert_eq!(fed.trajectory, reference);
    }
}

#[test]
fn identical_clients_make_literal_averaging_a_no_op() {
    let task = affine_benchmark_task(1, 4, 3, 40, 10, 2).unwrap();
    let n = 4;
    let config = FederationConfig { tau: 3, shared_client_streams: true, avg_mode: AvgMode::LiteralAll, ..small(n, 40) };
    let single = run(&FederationConfig { n: 1, ..config.clone() }, &task).unwrap();
    let fed = run(&config, &identical_clients(&task, n)).unwrap();
    assert_eq!(fed.trajectory.len(), single.trajectory.len());
    for (many, one) in fed.trajectory.iter().zip(&single.trajectory) {
        assert_eq!(many.w, one.w);
        assert_eq!(many.potential.trunk, one.potential.trunk);
        for i in 0..n {
            assert_eq!(many.theta[i], one.theta[0]);
            assert_eq!(many.potential.heads[i], one.potential.heads[0]);
        }
    }
}

#[test]
fn one_step_rounds_equal_centralised_sgda() {
    let n = 3;
    let task = affine_benchmark_task(n, 4, 3, 30, 10, 3).unwrap();
    let config = FederationConfig { avg_mode: AvgMode::LiteralAll, shared_client_streams: true, max_steps_per_min_step: 1, total_iters: 40, ..small(n, 30) };
    let fed = run(&config, &task).unwrap();

    let obj = config.fedot_objective();
    let mut p = config.model_spec(4, 3).init(config.init_stream()).unwrap();
    let mut samplers: Vec<BatchSampler> = (0..n).map(|i| BatchSampler::new(config.client_stream(i).named("descent"), 30, config.batch)).collect();
    for (t, synced) in fed.trajectory.iter().enumerate() {
        let grads: Vec<_> = (0..n)
            .map(|i| {
                let idx = samplers[i].next_batch();
                let view = ClientView { w: &p.w, theta: &p.theta[0], trunk: &p.potential.trunk, head: &p.potential.heads[0] };
                view_loss(&obj, view, &task.train[i], &idx, true).unwrap().1.unwrap()
            })
            .collect();
        let mut step = p.clone();
        for g in &grads {
            step.w.axpy_blocks(-config.eta1 / n as f64, &g.w);
            step.theta.iter_mut().for_each(|th| th.axpy_blocks(-config.eta1 / n as f64, &g.theta));
            step.potential.trunk.axpy_blocks(config.eta2 / n as f64, &g.trunk);
        }
        // Literal averaging leaves every head equal, so the zero-sum tie zeroes them.
        step.potential.heads.iter_mut().for_each(|h| h.axpy_blocks(-1.0, &h.clone()));
        let diff = step.flatten().iter().zip(synced.flatten()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-12, "iteration {t}: {diff:e}");
        p = step;
    }
}

#[test]
fn zero_lambda_fedot_equals_fedavg() {
    for seed in 0..3 {
        let task = no_shift_task(5, 50, seed);
        let base = FederationConfig { n: 5, m: 50, total_iters: 300, seed, ..Default::default() };
        let avg = run(&FederationConfig { method: Method::FedAvg, ..base.clone() }, &task).unwrap();
        for potential in [PotentialKind::Quadratic, PotentialKind::Relu { hidden: 20 }] {
            let ot = run(&FederationConfig { lambda: 0.0, train_transport: false, potential, ..base.clone() }, &task).unwrap();
            assert!((ot.final_accuracy() - avg.final_accuracy()).abs() <= 0.005);
            assert_eq!(ot.final_bundle.w, avg.final_bundle.w);
        }
    }
}

#[test]
fn histories_do_not_depend_on_worker_count() {
    let task = affine_benchmark_task(6, 5, 3, 40, 20, 4).unwrap();
    for method in Method::ALL {
        let base = FederationConfig { n: 6, m: 40, total_iters: 100, seed: 4, method, finetune_steps: 20, proxy_every: 5, potential: PotentialKind::Relu { hidden: 6 }, ..Default::default() };
        let a = run(&FederationConfig { threads: 1, ..base.clone() }, &task).unwrap();
        let b = run(&FederationConfig { threads: 4, ..base.clone() }, &task).unwrap();
        let c = run(&FederationConfig { threads: 4, ..base }, &task).unwrap();
        assert_eq!(format!("{:?}", a.rounds), format!("{:?}", b.rounds), "{method}");
        assert_eq!(format!("{:?}", b.rounds), format!("{:?}", c.rounds), "{method}");
        assert_eq!(a.final_bundle, b.final_bundle);
    }
}

#[test]
fn sync_rounds_keep_zero_sum_and_shared_blocks() {
    let task = affine_benchmark_task(8, 5, 3, 40, 10, 6).unwrap();
    for (objective, potential) in [("2-fedot", PotentialKind::Quadratic), ("1-fedot", PotentialKind::Relu { hidden: 10 }), ("1-fedot", PotentialKind::Quadratic)] {
        let config = FederationConfig { n: 8, m: 40, total_iters: 200, objective: objective.parse().unwrap(), potential, ..Default::default() };
        let h = run(&config, &task).unwrap();
        assert!(!h.diverged);
        assert_eq!(h.rounds.len(), 40);
        for r in &h.rounds {
            assert!(r.zero_sum_residual <= 1e-9, "round {}: {:e}", r.round, r.zero_sum_residual);
            assert!(r.shared_blocks_equal);
            let mean = r.per_client_acc.iter().sum::<f64>() / r.per_client_acc.len() as f64;
            assert!((mean - r.avg_test_acc).abs() <= 1e-12);
        }
    }
}

#[test]
fn fedavg_bundle_reproduces_reported_accuracy() {
    let task = no_shift_task(4, 50, 8);
    let h = run(&FederationConfig { n: 4, m: 50, total_iters: 100, method: Method::FedAvg, ..Default::default() }, &task).unwrap();
    assert_eq!(evaluate(&h.final_bundle, &task.test).unwrap(), h.rounds.last().unwrap().per_client_acc);
}

#[test]
fn random_classifiers_score_chance_on_average() {
    let base = BaseTaskSpec::synthetic(5, 4, 2.0, 0.0, 0.6, 10, 200, RngStream::new(10, 0)).unwrap();
    let task = make_federated_task(&base, &[ShiftSpec::identity_affine(5)], RngStream::new(10, 1)).unwrap();
    let mut rng = RngStream::new(10, 2).generator();
    let identity = TransportParams::identity(TransportKind::Affine, 5);
    let accs: Vec<f64> = (0..300)
        .map(|_| {
            let mut gauss = |r, c| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
            let w = ClassifierParams::Linear { w: gauss(4, 5), b: gauss(4, 1) };
            evaluate_client(&w, &identity, &task.test[0]).unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64;
    let se = (var / accs.len() as f64).sqrt();
    assert!((mean - 0.25).abs() <= 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn oracle_on_perfect_margin_task_is_exact() {
    let base = BaseTaskSpec::synthetic(4, 3, 10.0, 0.0, 0.1, 30, 50, RngStream::new(11, 0)).unwrap();
    let task = make_federated_task(&base, &vec![ShiftSpec::identity_affine(4); 3], RngStream::new(11, 1)).unwrap();
    let oracle = train_pooled_oracle(&FederationConfig { n: 3, m: 30, batch: 10, total_iters: 200, eta1: 0.05, ..Default::default() }, &task).unwrap();
    assert_eq!(oracle.avg_test_acc, 1.0);
}

#[test]
fn local_training_loses_to_pooling_on_small_data() {
    let mut gap = 0.0;
    for seed in 0..5 {
        let task = no_shift_task(20, 10, seed);
        let base = FederationConfig { m: 10, batch: 10, seed, total_iters: 1000, eta1: 0.01, ..Default::default() };
        let avg = run(&FederationConfig { method: Method::FedAvg, ..base.clone() }, &task).unwrap();
        let local = run(&FederationConfig { method: Method::LocalOnly, ..base }, &task).unwrap();
        gap += avg.final_accuracy() - local.final_accuracy();
    }
    assert!(gap / 5.0 >= 0.05, "mean gap {}", gap / 5.0);
}

#[test]
fn proxy_with_zero_lambda_is_erm_gradient_norm() {
    let task = affine_benchmark_task(3, 4, 3, 20, 5, 12).unwrap();
    let mut bundle = ModelSpec::affine(4, 3, 3).init(RngStream::new(12, 0)).unwrap();
    let mut rng = RngStream::new(12, 1).generator();
    bundle.w.blocks_mut().into_iter().for_each(|m| m.as_mut_slice().iter_mut().for_each(|v| *v = rng.sample(StandardNormal)));
    let obj = Objective::new(ObjectiveSpec::TwoFedOTReg { lambda: 0.0, gamma: 0.5 });
    let proxy = stationarity_proxy(&obj, &bundle, &task.train, 5, 0.1, false).unwrap();
    let mut mean = vec![0.0; bundle.w.num_params()];
    for (i, d) in task.train.iter().enumerate() {
        let g = view_loss(&obj, ClientView::of(&bundle, i), d, &all_indices(d), true).unwrap().1.unwrap();
        mean.iter_mut().zip(g.w.flatten()).for_each(|(m, v)| *m += v / 3.0);
    }
    let direct = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((proxy - direct).abs() <= 1e-12, "{proxy} vs {direct}");
}

#[test]
fn toy_saddle_has_vanishing_proxy() {
    let mut rng = RngStream::new(13, 0).generator();
    let b = Matrix::from_vec(3, 2, (0..6).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let toy = QuadraticToy::new(1.0, b, 2.0, vec![1.0, -0.5, 2.0]).unwrap();
    let (x, y) = toy.run_gda(&[0.0; 3], &[0.0; 2], 0.05, 0.2, 20_000);
    let (xs, ys) = toy.saddle().unwrap();
    assert!(x.iter().zip(&xs).chain(y.iter().zip(&ys)).all(|(a, b)| (a - b).abs() <= 1e-8));
    assert!(stationarity_proxy_generic(&toy, &x, &y, 10, 0.2).unwrap() <= 1e-6);
    assert!(stationarity_proxy_generic(&toy, &[0.0; 3], &[0.0; 2], 10, 0.2).unwrap() > 1e-2);
}

#[test]
fn checkpointed_final_bundle_round_trips() {
    let task = affine_benchmark_task(3, 4, 3, 20, 5, 14).unwrap();
    let h = run(&FederationConfig { n: 3, m: 20, total_iters: 20, potential: PotentialKind::Relu { hidden: 8 }, ..Default::default() }, &task).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("final.ckpt");
    save_checkpoint(&h.final_bundle, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, h.final_bundle);
    let resumed = run_from(&h.config, &task, loaded).unwrap();
    assert_eq!(resumed.rounds.len(), h.rounds.len());
    let wrong = ModelSpec::affine(4, 3, 2).zeros().unwrap();
    assert!(run_from(&h.config, &task, wrong).is_err());
}
