use std::collections::HashSet;

use fedot_core::numkit::check_gradient;
use fedot_core::{Matrix, RngStream};
use fedsim::gradcheck::{run_suite, Fault, GRADCHECK_TOL};
use fedsim::model::{argmax, load_checkpoint, save_checkpoint, Blocks};
use fedsim::objective::project_zero_sum_in_place;
use fedsim::shift::apply_affine;
use fedsim::{ClassifierKind, ClassifierParams, Head, ModelSpec, PotentialKind, PotentialParams, TransportKind, TransportParams, Trunk};
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn gradient_suite_passes_at_ten_points() {
    let report = run_suite(2024, 10, None).unwrap();
    assert!(report.passed(), "worst block {:?}", report.worst());
    assert!(report.blocks.iter().all(|b| b.points == 10));
    let names: HashSet<&str> = report.blocks.iter().map(|b| b.name.as_str()).collect();
    assert_eq!(names.len(), report.blocks.len(), "a block is listed twice");
    for family in ["classifier.linear", "classifier.mlp", "transport.affine", "transport.relu", "potential.quadratic", "potential.relu", "loss2.affine", "loss2.relu", "penalty"] {
        assert!(report.blocks.iter().any(|b| b.name.starts_with(family)), "no block from {family}");
    }
}

#[test]
fn gradient_suite_detects_corruption() {
    for block in ["classifier.mlp.W1", "transport.relu.Theta2", "loss2.affine.head.V", "penalty.head.v2"] {
        let fault = Fault { block: block.into(), delta: 1e-3 };
        let report = run_suite(5, 1, Some(&fault)).unwrap();
        let hit = report.blocks.iter().find(|b| b.name == block).unwrap();
        assert!(hit.max_rel_err > GRADCHECK_TOL, "{block} not flagged");
        assert!(!report.passed());
    }
}

#[test]
fn linear_classifier_identity_logits() {
    let w = ClassifierParams::Linear { w: Matrix::identity(3), b: Matrix::zeros(3, 1) };
    assert_eq!(w.logits(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
    let zero = ClassifierParams::Linear { w: Matrix::zeros(2, 3), b: Matrix::zeros(2, 1) };
    assert_eq!(zero.logits(&[4.0, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    assert_eq!(argmax(&[0.0, 0.0]), 0);
}

#[test]
fn fitted_inverse_undoes_the_client_shift() {
    let mut rng = RngStream::new(8, 0).generator();
    let d = 6;
    let s: Vec<f64> = (0..d).map(|_| 0.5 + rng.random::<f64>()).collect();
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let inverse = TransportParams::affine_inverse_of(&s, &z).unwrap();
    for _ in 0..1000 {
        let x: Vec<f64> = (0..d).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let back = inverse.apply(&apply_affine(&x, &s, &z).unwrap()).unwrap();
        let err = x.iter().zip(&back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-12, "composition error {err:e}");
    }
}

#[test]
fn identity_transports_leave_inputs_alone() {
    let x = [0.3, -2.0, 5.5];
    assert_eq!(TransportParams::identity(TransportKind::Affine, 3).apply(&x).unwrap(), x.to_vec());
    // The ReLU map starts as the identity on the nonnegative orthant.
    let pixel = [0.0, 0.25, 1.0];
    assert_eq!(TransportParams::identity(TransportKind::Relu, 3).apply(&pixel).unwrap(), pixel.to_vec());
}

#[test]
fn quadratic_potential_value_and_input_gradient() {
    let potential = PotentialParams { trunk: Trunk::Identity, heads: vec![Head::Quadratic { v: Matrix::identity(2), v1: Matrix::zeros(2, 1) }] };
    assert_eq!(potential.value(0, &[1.0, 1.0]).unwrap(), 1.0);

    let mut rng = RngStream::new(4, 0).generator();
    let v = gaussian_matrix(&mut rng, 4, 4).symmetrized();
    let v1 = gaussian_matrix(&mut rng, 4, 1);
    let potential = PotentialParams { trunk: Trunk::Identity, heads: vec![Head::Quadratic { v: v.clone(), v1: v1.clone() }] };
    let x: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let analytic = potential.input_gradient(0, &x).unwrap();
    let expected: Vec<f64> = v.matvec(&x).iter().zip(v1.as_slice()).map(|(a, b)| a + b).collect();
    for (a, e) in analytic.iter().zip(&expected) {
        assert!((a - e).abs() <= 1e-12);
    }
    let report = check_gradient(|p: &[f64]| potential.value(0, p).unwrap(), &x, &analytic, 1e-5).unwrap();
    assert!(report.max_rel_err <= 1e-6, "{}", report.max_rel_err);
}

#[test]
fn zero_sum_heads_cancel_at_every_point() {
    let mut rng = RngStream::new(6, 0).generator();
    for kind in [PotentialKind::Quadratic, PotentialKind::Relu { hidden: 6 }] {
        let spec = ModelSpec { potential: kind, ..ModelSpec::affine(3, 2, 5) };
        let mut bundle = spec.zeros().unwrap();
        bundle.potential.blocks_mut().into_iter().for_each(|m| {
            let (r, c) = m.shape();
            *m = gaussian_matrix(&mut rng, r, c);
        });
        project_zero_sum_in_place(&mut bundle.potential);
        assert!(bundle.potential.zero_sum_residual() <= 1e-12);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let total: f64 = (0..5).map(|i| bundle.potential.value(i, &x).unwrap()).sum();
            assert!(total.abs() <= 1e-9, "sum of potentials {total:e}");
        }
        // Exchanging mass between two heads keeps the tie.
        let delta = bundle.potential.heads[0].clone();
        bundle.potential.heads[1].axpy_blocks(0.7, &delta);
        bundle.potential.heads[3].axpy_blocks(-0.7, &delta);
        let x = [0.4, -1.1, 2.0];
        let total: f64 = (0..5).map(|i| bundle.potential.value(i, &x).unwrap()).sum();
        assert!(total.abs() <= 1e-9);
    }
}

#[test]
fn initialisation_matches_conventions() {
    let spec = ModelSpec { classifier: ClassifierKind::Mlp { hidden: 5 }, ..ModelSpec::relu(4, 3, 2) };
    let bundle = spec.init(RngStream::new(1, 0)).unwrap();
    for t in &bundle.theta {
        assert_eq!(*t, TransportParams::identity(TransportKind::Relu, 4));
    }
    assert!(bundle.potential.heads.iter().all(|h| h.norm_sq() == 0.0));
    assert!(bundle.w.blocks().iter().all(|b| b.max_abs() <= 0.01 && b.max_abs() > 0.0));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut rng = RngStream::new(12, 0).generator();
    let spec = ModelSpec { classifier: ClassifierKind::Mlp { hidden: 3 }, ..ModelSpec::relu(3, 4, 3) };
    let mut bundle = spec.init(RngStream::new(12, 1)).unwrap();
    bundle.blocks_mut().into_iter().for_each(|m| {
        let (r, c) = m.shape();
        *m = gaussian_matrix(&mut rng, r, c);
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.ckpt");
    save_checkpoint(&bundle, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), bundle);
}
