use fedot_core::RngStream;
use fedsim::shift::{affine_benchmark_task, apply_affine, gen_client_shifts, invert_affine, make_federated_task};
use fedsim::{BaseTaskSpec, ShiftKind, ShiftSpec};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn affine_round_trip_on_random_vectors() {
    let d = 10;
    let shifts = gen_client_shifts(1, ShiftKind::Affine, d, 1.0, RngStream::new(3, 0)).unwrap();
    let ShiftSpec::Affine { s, z } = &shifts[0] else { unreachable!() };
    let mut rng = RngStream::new(3, 1).generator();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..d).map(|_| 5.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let back = invert_affine(&apply_affine(&x, s, z).unwrap(), s, z).unwrap();
        worst = x.iter().zip(&back).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    assert!(worst <= 1e-12, "round trip error {worst:e}");
}

#[test]
fn every_client_inverts_to_its_base_draw() {
    let task = affine_benchmark_task(5, 4, 3, 50, 20, 11).unwrap();
    for (i, shift) in task.shifts.iter().enumerate() {
        let ShiftSpec::Affine { s, z } = shift else { unreachable!() };
        for (shifted, plain) in [(&task.train[i], &task.base_train[i]), (&task.test[i], &task.base_test[i])] {
            assert_eq!(shifted.labels, plain.labels);
            for j in 0..shifted.len() {
                let back = invert_affine(shifted.sample(j).0, s, z).unwrap();
                let err = back.iter().zip(plain.sample(j).0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                assert!(err <= 1e-12);
            }
        }
    }
}

#[test]
fn scale_entries_average_to_one() {
    let shifts = gen_client_shifts(100, ShiftKind::Affine, 10, 1.0, RngStream::new(0, 0).named("shifts")).unwrap();
    let all: Vec<f64> = shifts
        .iter()
        .flat_map(|sh| match sh {
            ShiftSpec::Affine { s, .. } => s.clone(),
            _ => unreachable!(),
        })
        .collect();
    assert!(all.iter().all(|v| (0.5..=1.5).contains(v)));
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    assert!((mean - 1.0).abs() <= 0.02, "mean scale {mean}");
}

#[test]
fn shift_generation_is_deterministic() {
    for kind in [ShiftKind::Affine, ShiftKind::Color] {
        let a = gen_client_shifts(7, kind, 3, 1.0, RngStream::new(9, 4)).unwrap();
        let b = gen_client_shifts(7, kind, 3, 1.0, RngStream::new(9, 4)).unwrap();
        assert_eq!(a, b);
    }
    let t1 = affine_benchmark_task(4, 3, 3, 30, 10, 5).unwrap();
    let t2 = affine_benchmark_task(4, 3, 3, 30, 10, 5).unwrap();
    assert_eq!(t1.train, t2.train);
    assert_eq!(t1.test, t2.test);
}

#[test]
fn label_marginals_do_not_depend_on_client() {
    let (n, k) = (20, 3);
    for seed in 0..5 {
        let task = affine_benchmark_task(n, 10, k, 100, 10, seed).unwrap();
        let table: Vec<Vec<f64>> = task.train.iter().map(|d| d.label_histogram().into_iter().map(|c| c as f64).collect()).collect();
        let total: f64 = table.iter().flatten().sum();
        let col: Vec<f64> = (0..k).map(|c| table.iter().map(|r| r[c]).sum()).collect();
        let mut stat = 0.0;
        for row in &table {
            let row_sum: f64 = row.iter().sum();
            for c in 0..k {
                let expected = row_sum * col[c] / total;
                stat += (row[c] - expected).powi(2) / expected;
            }
        }
        let df = ((n - 1) * (k - 1)) as f64;
        let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
        assert!(p > 0.01, "seed {seed}: chi-square {stat} on {df} dof, p = {p}");
    }
}

#[test]
fn separated_unshifted_task_is_nearly_bayes_perfect() {
    let base = BaseTaskSpec::synthetic(10, 3, 6.0, 0.0, 1.0, 100, 2000, RngStream::new(2, 0)).unwrap();
    let shifts = vec![ShiftSpec::identity_affine(10); 3];
    let task = make_federated_task(&base, &shifts, RngStream::new(2, 1)).unwrap();
    assert_eq!(task.train, task.base_train);
    let (mut hits, mut count) = (0usize, 0usize);
    for ds in &task.test {
        for j in 0..ds.len() {
            let (x, y) = ds.sample(j);
            hits += usize::from(base.bayes_predict(x) == y);
            count += 1;
        }
    }
    let acc = hits as f64 / count as f64;
    assert!(acc >= 0.99, "Bayes accuracy {acc}");
}

#[test]
fn color_tasks_expand_to_rgb_in_unit_range() {
    let base = BaseTaskSpec::synthetic(4, 2, 0.5, 0.5, 0.2, 20, 5, RngStream::new(1, 0)).unwrap();
    let shifts = gen_client_shifts(3, ShiftKind::Color, 4, 0.0, RngStream::new(1, 1)).unwrap();
    let task = make_federated_task(&base, &shifts, RngStream::new(1, 2)).unwrap();
    assert_eq!(task.feature_dim(), 12);
    for ds in task.train.iter().chain(&task.base_train) {
        assert!(ds.features.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
