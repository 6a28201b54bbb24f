//! Finite-difference audit of every analytic gradient in the model and
//! objective code.

use std::collections::BTreeMap;

use fedot_core::numkit::{check_gradient, DEFAULT_FD_STEP};
use fedot_core::{Matrix, RngStream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{Blocks, ClassifierKind, Head, ModelSpec, PotentialKind, TransportKind, TransportParams, Trunk};
use crate::objective::{penalty_head_gradient, project_zero_sum_in_place, view_loss, ClientParams, Objective, ObjectiveSpec};
use crate::shift::ClientDataset;
use crate::FedError;

/// Largest accepted relative error per block.
pub const GRADCHECK_TOL: f64 = 1e-5;
/// Points with a ReLU pre-activation closer to zero than this are redrawn;
/// a central difference with step `1e-5` must not cross a kink.
pub const KINK_MARGIN: f64 = 1e-4;

const DIM: usize = 3;
const CLASSES: usize = 3;
const CLIENTS: usize = 3;
const BATCH: usize = 20;

/// Worst agreement seen for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_coordinate: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub blocks: Vec<BlockCheck>,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&BlockCheck> {
        self.blocks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Adds `delta` to the first analytic coordinate of the named block, to
/// prove the suite notices a wrong gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub block: String,
    pub delta: f64,
}

struct Suite<'a> {
    results: BTreeMap<String, BlockCheck>,
    fault: Option<&'a Fault>,
}

impl Suite<'_> {
    fn record(&mut self, name: String, point: &[f64], mut analytic: Vec<f64>, f: impl FnMut(&[f64]) -> f64) -> Result<(), FedError> {
        if let Some(fault) = self.fault.filter(|f| f.block == name) {
            if let Some(first) = analytic.first_mut() {
                *first += fault.delta;
            }
        }
        let report = check_gradient(f, point, &analytic, DEFAULT_FD_STEP)?;
        let entry = self.results.entry(name.clone()).or_insert(BlockCheck { name, max_rel_err: 0.0, worst_coordinate: 0, points: 0 });
        entry.points += 1;
        if report.max_rel_err >= entry.max_rel_err {
            entry.max_rel_err = report.max_rel_err;
            entry.worst_coordinate = report.worst_coordinate;
        }
        Ok(())
    }

    /// Checks every block of `params` against `grad` for the scalar `f`.
    fn blocks<P: Blocks + Clone>(&mut self, prefix: &str, params: &P, grad: &P, f: impl Fn(&P) -> f64) -> Result<(), FedError> {
        let names = params.block_names();
        for (b, name) in names.iter().enumerate() {
            let point = params.blocks()[b].as_slice().to_vec();
            let analytic = grad.blocks()[b].as_slice().to_vec();
            let eval = |v: &[f64]| {
                let mut q = params.clone();
                q.blocks_mut()[b].as_mut_slice().copy_from_slice(v);
                f(&q)
            };
            self.record(format!("{prefix}.{name}"), &point, analytic, eval)?;
        }
        Ok(())
    }
}

/// Trunk and head of one client, checked together.
#[derive(Debug, Clone)]
struct PotentialPart {
    trunk: Trunk,
    head: Head,
}

impl Blocks for PotentialPart {
    fn blocks(&self) -> Vec<&Matrix> {
        let mut out = self.trunk.blocks();
        out.extend(self.head.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.trunk.blocks_mut();
        out.extend(self.head.blocks_mut());
        out
    }

    fn block_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.trunk.block_names().into_iter().map(|n| format!("U.{n}")).collect();
        out.extend(self.head.block_names().into_iter().map(|n| format!("head.{n}")));
        out
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).expect("shape matches")
}

fn random_batch(rng: &mut ChaCha8Rng) -> Result<ClientDataset, FedError> {
    let labels = (0..BATCH).map(|_| rng.random_range(0..CLASSES)).collect();
    ClientDataset::new(gaussian(rng, BATCH, DIM, 1.0), labels, CLASSES, 0)
}

/// Random client parameters of the given families: perturbed-identity
/// transport, zero-sum heads across `CLIENTS` clients (client 1 returned).
fn random_client(rng: &mut ChaCha8Rng, spec: ModelSpec) -> Result<ClientParams, FedError> {
    let mut b = spec.zeros()?;
    b.blocks_mut().into_iter().for_each(|m| {
        let (r, c) = m.shape();
        *m = gaussian(rng, r, c, 0.5);
    });
    for t in &mut b.theta {
        let first = t.blocks_mut().into_iter().next().expect("transport has a matrix block");
        *first = first.add(&Matrix::identity(DIM));
    }
    for h in &mut b.potential.heads {
        if let Head::Quadratic { v, .. } = h {
            *v = v.symmetrized();
        }
    }
    project_zero_sum_in_place(&mut b.potential);
    Ok(ClientParams::of(&b, 1))
}

fn min_preactivation(p: &ClientParams, data: &ClientDataset) -> f64 {
    (0..data.len())
        .map(|j| {
            let x = data.sample(j).0;
            let z = p.theta.forward(x);
            p.theta.min_abs_preactivation(x).min(p.w.min_abs_preactivation(&z)).min(p.trunk.min_abs_preactivation(&z))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Draws parameters and data until no ReLU sits within [`KINK_MARGIN`] of
/// its kink.
fn smooth_point(rng: &mut ChaCha8Rng, spec: ModelSpec) -> Result<(ClientParams, ClientDataset), FedError> {
    for _ in 0..1000 {
        let p = random_client(rng, spec)?;
        let data = random_batch(rng)?;
        if min_preactivation(&p, &data) >= KINK_MARGIN {
            return Ok((p, data));
        }
    }
    Err(FedError::InvalidArgument("could not draw a point away from ReLU kinks".into()))
}

fn loss_total(obj: &Objective, p: &ClientParams, data: &ClientDataset, idx: &[usize]) -> f64 {
    view_loss(obj, p.view(), data, idx, false).map_or(f64::NAN, |r| r.0.total)
}

/// Runs the suite at `points` random parameter points per block family.
pub fn run_suite(seed: u64, points: usize, fault: Option<&Fault>) -> Result<SuiteReport, FedError> {
    let mut suite = Suite { results: BTreeMap::new(), fault };
    let mut rng = RngStream::new(seed, 0).named("gradcheck").generator();
    let idx: Vec<usize> = (0..BATCH).collect();
    let ce = Objective::new(ObjectiveSpec::TwoFedOTReg { lambda: 0.0, gamma: 0.0 });
    let two = Objective::new(ObjectiveSpec::TwoFedOTReg { lambda: 1.3, gamma: 0.5 });
    let two_psi = Objective { keep_psi_norm: true, ..two };
    let one = Objective::new(ObjectiveSpec::OneFedOT { lambda: 0.7 });
    let linear = ModelSpec::affine(DIM, CLASSES, CLIENTS);
    let mlp = ModelSpec { classifier: ClassifierKind::Mlp { hidden: 4 }, ..linear };
    let relu = ModelSpec::relu(DIM, CLASSES, CLIENTS);

    for _ in 0..points {
        // Classifiers under cross-entropy.
        for (family, spec) in [("linear", linear), ("mlp", mlp)] {
            let (p, data) = smooth_point(&mut rng, spec)?;
            let g = view_loss(&ce, p.view(), &data, &idx, true)?.1.expect("gradient requested");
            suite.blocks(&format!("classifier.{family}"), &p.w, &g.w, |w| loss_total(&ce, &ClientParams { w: w.clone(), ..p.clone() }, &data, &idx))?;
        }

        // Transport maps under a random linear read-out `mean rⱼᵀψ(xⱼ)`.
        for (family, kind) in [("affine", TransportKind::Affine), ("relu", TransportKind::Relu)] {
            let spec = ModelSpec { transport: kind, ..linear };
            let (p, data) = smooth_point(&mut rng, spec)?;
            let readout = gaussian(&mut rng, BATCH, DIM, 1.0);
            let value = |t: &TransportParams| (0..BATCH).map(|j| t.forward(data.sample(j).0).iter().zip(readout.row(j)).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>() / BATCH as f64;
            let mut g = p.theta.zeroed();
            for j in 0..BATCH {
                let dz: Vec<f64> = readout.row(j).iter().map(|v| v / BATCH as f64).collect();
                p.theta.backward(data.sample(j).0, &dz, &mut g);
            }
            suite.blocks(&format!("transport.{family}"), &p.theta, &g, value)?;
        }

        // Potentials: parameters of `mean φᵢ(zⱼ)` and the input gradient.
        for (family, kind) in [("quadratic", PotentialKind::Quadratic), ("relu", PotentialKind::Relu { hidden: 2 * DIM })] {
            let spec = ModelSpec { potential: kind, ..linear };
            let (p, data) = smooth_point(&mut rng, spec)?;
            let part = PotentialPart { trunk: p.trunk.clone(), head: p.head.clone() };
            let value = |q: &PotentialPart| (0..BATCH).map(|j| q.head.eval(&q.trunk.forward(data.sample(j).0))).sum::<f64>() / BATCH as f64;
            let mut g = part.clone().zeroed();
            for j in 0..BATCH {
                let z = data.sample(j).0;
                let feats = part.trunk.forward(z);
                let PotentialPart { trunk: gt, head: gh } = &mut g;
                part.head.backward(&part.trunk, z, &feats, 1.0 / BATCH as f64, gh, gt);
            }
            suite.blocks(&format!("potential.{family}"), &part, &g, value)?;
            let x = data.sample(0).0.to_vec();
            let feats = part.trunk.forward(&x);
            let analytic = part.head.backward(&part.trunk, &x, &feats, 1.0, &mut part.head.zeroed(), &mut part.trunk.zeroed());
            suite.record(format!("potential.{family}.input"), &x, analytic, |v| part.head.eval(&part.trunk.forward(v)))?;
        }

        // Full client losses, every block of the local variable.
        for (name, obj, spec) in [("loss2.affine", two, linear), ("loss2.relu", two, relu), ("loss2psi.affine", two_psi, linear), ("loss1.relu", one, relu)] {
            let (p, data) = smooth_point(&mut rng, spec)?;
            let g = view_loss(&obj, p.view(), &data, &idx, true)?.1.expect("gradient requested");
            suite.blocks(name, &p, &g, |q| loss_total(&obj, q, &data, &idx))?;
        }

        // The penalty on its own.
        let (p, _) = smooth_point(&mut rng, relu)?;
        let part = PotentialPart { trunk: p.trunk.clone(), head: p.head.clone() };
        let coef = two.spec.penalty_coef();
        let mut g = part.clone().zeroed();
        g.head = penalty_head_gradient(&two.spec, &part.head);
        g.trunk.axpy_blocks(-2.0 * coef, &part.trunk);
        suite.blocks("penalty", &part, &g, |q| -coef * (q.head.norm_sq() + q.trunk.norm_sq()))?;
    }
    Ok(SuiteReport { blocks: suite.results.into_values().collect(), tolerance: GRADCHECK_TOL })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_catches_fault() {
        let report = run_suite(1, 2, None).unwrap();
        assert!(report.passed(), "{:?}", report.worst());
        let fault = Fault { block: "loss2.relu.U.V1".into(), delta: 1e-3 };
        let broken = run_suite(1, 1, Some(&fault)).unwrap();
        assert!(!broken.passed());
        assert_eq!(broken.worst().unwrap().name, fault.block);
    }
}
