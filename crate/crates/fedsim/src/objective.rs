//! FedOT client losses, their gradients, and the feasibility projections.

use fedot_core::numkit::linalg::spectral_norm;
use fedot_core::{Matrix, RngStream};
use log::info;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{Blocks, ClassifierCache, ClassifierParams, Head, ParamBundle, PotentialParams, TransportParams, Trunk};
use crate::shift::ClientDataset;
use crate::FedError;

/// Largest zero-sum residual accepted by [`client_loss`].
pub const ZERO_SUM_TOL: f64 = 1e-8;
/// Relative tolerance and iteration cap of the spectral-norm estimate.
pub const SPECTRAL_REL_TOL: f64 = 1e-8;
pub const SPECTRAL_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveSpec {
    /// `ℓ + λ vᵢᵀφ_U(ψ(x))` with the potentials kept 1-Lipschitz by projection.
    OneFedOT { lambda: f64 },
    /// `ℓ + λ vᵢᵀφ_U(ψ(x)) − λ/(1−γ)(‖vᵢ‖² + ‖U‖²)`
    TwoFedOTReg { lambda: f64, gamma: f64 },
}

impl ObjectiveSpec {
    pub fn lambda(&self) -> f64 {
        match *self {
            ObjectiveSpec::OneFedOT { lambda } | ObjectiveSpec::TwoFedOTReg { lambda, .. } => lambda,
        }
    }

    /// `λ/(1−γ)`, or 0 without the penalty.
    pub fn penalty_coef(&self) -> f64 {
        match *self {
            ObjectiveSpec::OneFedOT { .. } => 0.0,
            ObjectiveSpec::TwoFedOTReg { lambda, gamma } => lambda / (1.0 - gamma),
        }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        let lambda = self.lambda();
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(FedError::InvalidArgument(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        if let ObjectiveSpec::TwoFedOTReg { gamma, .. } = *self {
            if !(0.0..1.0).contains(&gamma) {
                return Err(FedError::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")));
            }
        }
        Ok(())
    }
}

/// Objective plus the switch that keeps the `½‖ψ(x)‖²` term the
/// regularised lower bound drops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub spec: ObjectiveSpec,
    pub keep_psi_norm: bool,
}

impl Objective {
    pub fn new(spec: ObjectiveSpec) -> Self {
        Self { spec, keep_psi_norm: false }
    }
}

/// Batch-mean decomposition `total = classification + λ·dual − reg`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClientLossReport {
    /// Mean cross-entropy.
    pub classification_term: f64,
    /// Mean `vᵢᵀφ_U(ψ(x))` (plus `½‖ψ(x)‖²` when kept), without the λ.
    pub transport_dual_term: f64,
    pub reg_term: f64,
    pub total: f64,
}

impl ClientLossReport {
    pub fn mean(reports: &[ClientLossReport]) -> ClientLossReport {
        let n = reports.len() as f64;
        let sum = |f: fn(&ClientLossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        ClientLossReport {
            classification_term: sum(|r| r.classification_term),
            transport_dual_term: sum(|r| r.transport_dual_term),
            reg_term: sum(|r| r.reg_term),
            total: sum(|r| r.total),
        }
    }
}

/// Client `i`'s local variable `(w, θᵢ, U, vᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientParams {
    pub w: ClassifierParams,
    pub theta: TransportParams,
    pub head: Head,
    pub trunk: Trunk,
}

/// Gradient of one client's total; same shapes as its local variable.
pub type ClientGrad = ClientParams;

impl ClientParams {
    pub fn of(bundle: &ParamBundle, i: usize) -> Self {
        Self { w: bundle.w.clone(), theta: bundle.theta[i].clone(), head: bundle.potential.heads[i].clone(), trunk: bundle.potential.trunk.clone() }
    }

    pub fn view(&self) -> ClientView<'_> {
        ClientView { w: &self.w, theta: &self.theta, trunk: &self.trunk, head: &self.head }
    }
}

impl Blocks for ClientParams {
    fn blocks(&self) -> Vec<&Matrix> {
        let mut out = self.w.blocks();
        out.extend(self.theta.blocks());
        out.extend(self.trunk.blocks());
        out.extend(self.head.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.w.blocks_mut();
        out.extend(self.theta.blocks_mut());
        out.extend(self.trunk.blocks_mut());
        out.extend(self.head.blocks_mut());
        out
    }

    fn block_names(&self) -> Vec<String> {
        let prefixed = |p: &str, names: Vec<String>| names.into_iter().map(|n| format!("{p}.{n}")).collect::<Vec<_>>();
        let mut out = prefixed("w", self.w.block_names());
        out.extend(prefixed("theta", self.theta.block_names()));
        out.extend(prefixed("U", self.trunk.block_names()));
        out.extend(prefixed("head", self.head.block_names()));
        out
    }
}

/// Borrowed view of the parameters client `i` uses.
#[derive(Debug, Clone, Copy)]
pub struct ClientView<'a> {
    pub w: &'a ClassifierParams,
    pub theta: &'a TransportParams,
    pub trunk: &'a Trunk,
    pub head: &'a Head,
}

impl<'a> ClientView<'a> {
    pub fn of(bundle: &'a ParamBundle, i: usize) -> Self {
        Self { w: &bundle.w, theta: &bundle.theta[i], trunk: &bundle.potential.trunk, head: &bundle.potential.heads[i] }
    }
}

/// `−log softmax(logits)_y` and `softmax − e_y`.
pub fn cross_entropy(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[y];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[y] -= 1.0;
    (loss, grad)
}

fn finite_or(layer: &str, values: &[f64]) -> Result<(), FedError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FedError::NonFinite { layer: layer.into() })
    }
}

/// Loss over the samples `indices` of `data`, with the gradient when
/// `with_grad`. No feasibility check: local iterates between
/// synchronisations are generally not zero-sum.
pub fn view_loss(obj: &Objective, p: ClientView<'_>, data: &ClientDataset, indices: &[usize], with_grad: bool) -> Result<(ClientLossReport, Option<ClientGrad>), FedError> {
    if indices.is_empty() {
        return Err(FedError::InvalidArgument("empty batch".into()));
    }
    if p.theta.dim() != data.dim() {
        return Err(FedError::InvalidArgument(format!("transport map expects dimension {}, data has {}", p.theta.dim(), data.dim())));
    }
    let lambda = obj.spec.lambda();
    let scale = 1.0 / indices.len() as f64;
    let mut grad = with_grad.then(|| ClientParams { w: p.w.zeroed(), theta: p.theta.zeroed(), head: p.head.zeroed(), trunk: p.trunk.zeroed() });
    let mut ce_sum = 0.0;
    let mut dual_sum = 0.0;
    let mut cache = ClassifierCache::default();
    for &j in indices {
        let (x, y) = data.sample(j);
        let z = p.theta.forward(x);
        finite_or("transport map", &z)?;
        let logits = p.w.forward(&z, &mut cache);
        finite_or("classifier", &logits)?;
        let (ce, dlogits) = cross_entropy(&logits, y);
        let feats = p.trunk.forward(&z);
        let mut dual = p.head.eval(&feats);
        if obj.keep_psi_norm {
            dual += 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        }
        if !dual.is_finite() {
            return Err(FedError::NonFinite { layer: "potential".into() });
        }
        ce_sum += ce;
        dual_sum += dual;
        if let Some(g) = grad.as_mut() {
            let dlogits: Vec<f64> = dlogits.iter().map(|v| v * scale).collect();
            let mut dz = p.w.backward(&z, &cache, &dlogits, &mut g.w);
            if lambda != 0.0 {
                let dz_phi = p.head.backward(p.trunk, &z, &feats, lambda * scale, &mut g.head, &mut g.trunk);
                dz.iter_mut().zip(&dz_phi).for_each(|(a, b)| *a += b);
                if obj.keep_psi_norm {
                    dz.iter_mut().zip(&z).for_each(|(a, zi)| *a += lambda * scale * zi);
                }
            }
            p.theta.backward(x, &dz, &mut g.theta);
        }
    }
    let pc = obj.spec.penalty_coef();
    let reg = pc * (p.head.norm_sq() + p.trunk.norm_sq());
    if let Some(g) = grad.as_mut() {
        if pc != 0.0 {
            g.head.axpy_blocks(-2.0 * pc, p.head);
            g.trunk.axpy_blocks(-2.0 * pc, p.trunk);
        }
        let finite = g.w.is_finite() && g.theta.is_finite() && g.head.is_finite() && g.trunk.is_finite();
        if !finite {
            return Err(FedError::NonFinite { layer: "gradient".into() });
        }
    }
    let classification_term = ce_sum * scale;
    let transport_dual_term = dual_sum * scale;
    let report = ClientLossReport { classification_term, transport_dual_term, reg_term: reg, total: classification_term + lambda * transport_dual_term - reg };
    Ok((report, grad))
}

fn check_feasible(bundle: &ParamBundle, i: usize) -> Result<(), FedError> {
    if i >= bundle.num_clients() {
        return Err(FedError::InvalidArgument(format!("client {i} out of range for {} clients", bundle.num_clients())));
    }
    let residual = bundle.potential.zero_sum_residual();
    if residual > ZERO_SUM_TOL {
        return Err(FedError::Constraint { residual });
    }
    Ok(())
}

/// Client `i`'s loss on the given samples of its data.
pub fn client_loss(obj: &Objective, bundle: &ParamBundle, i: usize, data: &ClientDataset, indices: &[usize]) -> Result<ClientLossReport, FedError> {
    check_feasible(bundle, i)?;
    Ok(view_loss(obj, ClientView::of(bundle, i), data, indices, false)?.0)
}

/// [`client_loss`] together with its gradient.
pub fn client_loss_grad(obj: &Objective, bundle: &ParamBundle, i: usize, data: &ClientDataset, indices: &[usize]) -> Result<(ClientLossReport, ClientGrad), FedError> {
    check_feasible(bundle, i)?;
    let (report, grad) = view_loss(obj, ClientView::of(bundle, i), data, indices, true)?;
    Ok((report, grad.expect("gradient requested")))
}

/// Gradient of `−λ/(1−γ)(‖vᵢ‖² + ‖U‖²)` with respect to the head.
pub fn penalty_head_gradient(spec: &ObjectiveSpec, head: &Head) -> Head {
    let mut g = head.zeroed();
    g.axpy_blocks(-2.0 * spec.penalty_coef(), head);
    g
}

pub fn all_indices(data: &ClientDataset) -> Vec<usize> {
    (0..data.len()).collect()
}

/// Per-client reports on each client's full training set.
pub fn global_reports(obj: &Objective, bundle: &ParamBundle, train: &[ClientDataset]) -> Result<Vec<ClientLossReport>, FedError> {
    if train.len() != bundle.num_clients() {
        return Err(FedError::InvalidArgument(format!("{} datasets for {} clients", train.len(), bundle.num_clients())));
    }
    train.iter().enumerate().map(|(i, d)| client_loss(obj, bundle, i, d, &all_indices(d))).collect()
}

/// `(1/n) Σᵢ` client totals over the full training sets.
pub fn global_objective(obj: &Objective, bundle: &ParamBundle, train: &[ClientDataset]) -> Result<f64, FedError> {
    Ok(ClientLossReport::mean(&global_reports(obj, bundle, train)?).total)
}

/// Subtracts the across-client mean from every head.
pub fn project_zero_sum(potential: &PotentialParams) -> PotentialParams {
    let mut out = potential.clone();
    project_zero_sum_in_place(&mut out);
    out
}

pub fn project_zero_sum_in_place(potential: &mut PotentialParams) {
    let Some(first) = potential.heads.first() else { return };
    let n = potential.heads.len() as f64;
    let mut mean = first.zeroed();
    for h in &potential.heads {
        mean.axpy_blocks(1.0 / n, h);
    }
    for h in &mut potential.heads {
        h.axpy_blocks(-1.0, &mean);
    }
}

fn spectral_factor(m: &Matrix, cap: f64) -> Result<f64, FedError> {
    let sigma = spectral_norm(m, SPECTRAL_REL_TOL, SPECTRAL_MAX_ITER)?;
    Ok(if sigma > cap { cap / sigma } else { 1.0 })
}

/// Rescales the ReLU trunk's `V₁`, or the quadratic heads' `Vᵢ`, so the
/// spectral norm is at most `cap`. The quadratic heads share one factor
/// (the smallest needed) so the zero-sum tie survives.
pub fn project_spectral(potential: &PotentialParams, cap: f64) -> Result<PotentialParams, FedError> {
    let mut out = potential.clone();
    project_spectral_in_place(&mut out, cap)?;
    Ok(out)
}

pub fn project_spectral_in_place(potential: &mut PotentialParams, cap: f64) -> Result<(), FedError> {
    if !(cap > 0.0) {
        return Err(FedError::InvalidArgument(format!("spectral cap must be positive, got {cap}")));
    }
    if let Trunk::Relu { v1, .. } = &mut potential.trunk {
        let f = spectral_factor(v1, cap)?;
        if f < 1.0 {
            v1.scale_mut(f);
        }
    }
    let mut factor = 1.0f64;
    for h in &potential.heads {
        if let Head::Quadratic { v, .. } = h {
            factor = factor.min(spectral_factor(v, cap)?);
        }
    }
    if factor < 1.0 {
        for h in &mut potential.heads {
            if let Head::Quadratic { v, .. } = h {
                v.scale_mut(factor);
            }
        }
    }
    Ok(())
}

/// Scales every head's linear part by one common factor so the largest has
/// norm at most 1.
pub fn cap_head_norms(potential: &mut PotentialParams) {
    let largest = potential.heads.iter_mut().map(|h| h.linear_part_mut().frobenius_norm()).fold(0.0, f64::max);
    if largest > 1.0 {
        potential.heads.iter_mut().for_each(|h| h.linear_part_mut().scale_mut(1.0 / largest));
    }
}

/// Server-side feasibility for the 1-Lipschitz objective: zero-sum, then the
/// spectral and unit-norm caps (both preserve zero-sum).
pub fn project_one_fedot(potential: &mut PotentialParams) -> Result<(), FedError> {
    project_zero_sum_in_place(potential);
    project_spectral_in_place(potential, 1.0)?;
    cap_head_norms(potential);
    Ok(())
}

/// Client-side caps after a local ascent step of the 1-Lipschitz objective.
pub(crate) fn project_local_one_fedot(trunk: &mut Trunk, head: &mut Head) -> Result<(), FedError> {
    if let Trunk::Relu { v1, .. } = trunk {
        let f = spectral_factor(v1, 1.0)?;
        if f < 1.0 {
            v1.scale_mut(f);
        }
    }
    if let Head::Quadratic { v, .. } = head {
        let f = spectral_factor(v, 1.0)?;
        if f < 1.0 {
            v.scale_mut(f);
        }
    }
    let lin = head.linear_part_mut();
    let norm = lin.frobenius_norm();
    if norm > 1.0 {
        lin.scale_mut(1.0 / norm);
    }
    Ok(())
}

/// Outcome of [`concavity_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConcavityReport {
    /// Whether the sufficient condition for concavity in `(v, U)` holds.
    pub premise_holds: bool,
    /// `max ‖(ψ(x), 1)‖` over the data (ReLU potentials; 0 for quadratic).
    pub feature_radius: f64,
    /// `2/(1−γ)`
    pub radius_bound: f64,
    pub directions_checked: usize,
    /// Largest second difference seen (should be ≤ tolerance).
    pub worst_second_diff: f64,
    pub passed: bool,
}

/// Second finite differences of the global objective along random
/// zero-sum directions in `(v, U)`, only when the objective is provably
/// concave there: always for quadratic potentials, and for ReLU potentials
/// when every transported point has `‖(ψ(x), 1)‖ ≤ 2/(1−γ)`. Directions
/// whose ReLU pattern changes within `±step` are redrawn. Otherwise the
/// check is skipped (logged, `passed` true, nothing checked).
pub fn concavity_check(obj: &Objective, bundle: &ParamBundle, train: &[ClientDataset], directions: usize, step: f64, tol: f64, stream: RngStream) -> Result<ConcavityReport, FedError> {
    let ObjectiveSpec::TwoFedOTReg { gamma, .. } = obj.spec else {
        return Err(FedError::InvalidArgument("concavity is only claimed for the regularised objective".into()));
    };
    let radius_bound = 2.0 / (1.0 - gamma);
    let transported: Vec<Vec<Vec<f64>>> = train
        .iter()
        .enumerate()
        .map(|(i, d)| (0..d.len()).map(|j| bundle.theta[i].forward(d.sample(j).0)).collect())
        .collect();
    let feature_radius = match bundle.potential.trunk {
        Trunk::Identity => 0.0,
        Trunk::Relu { .. } => transported.iter().flatten().map(|z| (1.0 + z.iter().map(|v| v * v).sum::<f64>()).sqrt()).fold(0.0, f64::max),
    };
    let premise_holds = feature_radius <= radius_bound;
    let mut report = ConcavityReport { premise_holds, feature_radius, radius_bound, directions_checked: 0, worst_second_diff: f64::NEG_INFINITY, passed: true };
    if !premise_holds {
        info!("concavity check skipped: feature radius {feature_radius:.4} exceeds 2/(1-gamma) = {radius_bound:.4}");
        return Ok(report);
    }
    let base = global_objective(obj, bundle, train)?;
    let mut rng = stream.generator();
    let mut draws = 0;
    while report.directions_checked < directions {
        draws += 1;
        if draws > 50 * directions.max(1) {
            info!("concavity check: only {} directions avoided ReLU kinks", report.directions_checked);
            break;
        }
        let mut dir = bundle.potential.zeroed();
        dir.blocks_mut().into_iter().for_each(|b| b.as_mut_slice().iter_mut().for_each(|v| *v = rng.sample(StandardNormal)));
        for h in &mut dir.heads {
            if let Head::Quadratic { v, .. } = h {
                *v = v.symmetrized();
            }
        }
        project_zero_sum_in_place(&mut dir);
        let norm = dir.norm_sq().sqrt();
        if norm == 0.0 {
            continue;
        }
        dir.blocks_mut().into_iter().for_each(|b| b.scale_mut(1.0 / norm));
        let mut plus = bundle.clone();
        plus.potential.axpy_blocks(step, &dir);
        let mut minus = bundle.clone();
        minus.potential.axpy_blocks(-step, &dir);
        let kink = transported.iter().flatten().any(|z| relu_pattern(&plus.potential.trunk, z) != relu_pattern(&minus.potential.trunk, z));
        if kink {
            continue;
        }
        let second = (global_objective(obj, &plus, train)? - 2.0 * base + global_objective(obj, &minus, train)?) / (step * step);
        report.worst_second_diff = report.worst_second_diff.max(second);
        report.directions_checked += 1;
    }
    report.passed = report.worst_second_diff <= tol;
    Ok(report)
}

fn relu_pattern(trunk: &Trunk, z: &[f64]) -> Vec<bool> {
    match trunk {
        Trunk::Identity => Vec::new(),
        Trunk::Relu { v1, v0 } => v1.matvec(z).iter().zip(v0.as_slice()).map(|(a, b)| a + b > 0.0).collect(),
    }
}
