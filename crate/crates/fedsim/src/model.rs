//! Classifier, transport-map and potential families with hand-written
//! forward and backward passes.
//!
//! Every parameter block is a [`Matrix`]; vectors are stored as `k x 1`
//! matrices so all blocks flatten, average and checkpoint the same way.
//! Gradient containers reuse the parameter types (same variant, same
//! shapes). The ReLU subgradient at 0 is 0 throughout.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use fedot_core::numkit::rng_draw_uniform;
use fedot_core::{Matrix, RngStream};

use crate::FedError;

/// Named parameter blocks in a fixed order.
pub trait Blocks {
    fn blocks(&self) -> Vec<&Matrix>;
    fn blocks_mut(&mut self) -> Vec<&mut Matrix>;
    fn block_names(&self) -> Vec<String>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.as_slice().iter().copied()).collect()
    }

    /// Overwrites every block from a flat vector produced by [`Blocks::flatten`].
    fn assign_flat(&mut self, values: &[f64]) -> Result<(), FedError> {
        if values.len() != self.num_params() {
            return Err(FedError::InvalidArgument(format!("expected {} parameters, got {}", self.num_params(), values.len())));
        }
        let mut offset = 0;
        for b in self.blocks_mut() {
            let len = b.len();
            b.as_mut_slice().copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// `self += alpha * other`, block by block.
    fn axpy_blocks(&mut self, alpha: f64, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.axpy(alpha, b);
        }
    }

    fn norm_sq(&self) -> f64 {
        self.blocks().iter().map(|b| b.frobenius_norm_sq()).sum()
    }

    fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.is_finite())
    }

    fn max_block_norm(&self) -> f64 {
        self.blocks().iter().map(|b| b.frobenius_norm()).fold(0.0, f64::max)
    }

    /// Same shapes, every entry zero.
    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.blocks_mut().into_iter().for_each(|b| b.as_mut_slice().fill(0.0));
        z
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `m += alpha * u vᵀ`
pub(crate) fn add_outer(m: &mut Matrix, alpha: f64, u: &[f64], v: &[f64]) {
    let cols = m.cols();
    for (row, &ui) in m.as_mut_slice().chunks_mut(cols).zip(u) {
        let s = alpha * ui;
        if s != 0.0 {
            row.iter_mut().zip(v).for_each(|(r, &vj)| *r += s * vj);
        }
    }
}

pub(crate) fn add_vec(m: &mut Matrix, alpha: f64, u: &[f64]) {
    m.as_mut_slice().iter_mut().zip(u).for_each(|(r, &ui)| *r += alpha * ui);
}

fn affine(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = w.matvec(x);
    out.iter_mut().zip(b.as_slice()).for_each(|(o, bi)| *o += bi);
    out
}

fn check_dim(what: &str, expected: usize, got: usize) -> Result<(), FedError> {
    if expected != got {
        return Err(FedError::InvalidArgument(format!("{what} expects a {expected}-vector, got {got}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Affine,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    Quadratic,
    Relu { hidden: usize },
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierKind::Linear => write!(f, "linear"),
            ClassifierKind::Mlp { hidden } => write!(f, "mlp:{hidden}"),
        }
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportKind::Affine => write!(f, "affine"),
            TransportKind::Relu => write!(f, "relu"),
        }
    }
}

impl fmt::Display for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialKind::Quadratic => write!(f, "quadratic"),
            PotentialKind::Relu { hidden } => write!(f, "relu:{hidden}"),
        }
    }
}

fn parse_hidden(text: &str, prefix: &str) -> Option<usize> {
    text.strip_prefix(prefix)?.strip_prefix(':')?.parse().ok().filter(|&h| h > 0)
}

impl std::str::FromStr for ClassifierKind {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self, FedError> {
        match s {
            "linear" => Ok(Self::Linear),
            _ => parse_hidden(s, "mlp").map(|hidden| Self::Mlp { hidden }).ok_or_else(|| FedError::InvalidArgument(format!("unknown classifier '{s}' (linear | mlp:<hidden>)"))),
        }
    }
}

impl std::str::FromStr for TransportKind {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self, FedError> {
        match s {
            "affine" => Ok(Self::Affine),
            "relu" => Ok(Self::Relu),
            _ => Err(FedError::InvalidArgument(format!("unknown transport '{s}' (affine | relu)"))),
        }
    }
}

impl std::str::FromStr for PotentialKind {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self, FedError> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            _ => parse_hidden(s, "relu").map(|hidden| Self::Relu { hidden }).ok_or_else(|| FedError::InvalidArgument(format!("unknown potential '{s}' (quadratic | relu:<hidden>)"))),
        }
    }
}

/// Shapes of a full parameter bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    /// Input (and transported) feature dimension.
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub classifier: ClassifierKind,
    pub transport: TransportKind,
    pub potential: PotentialKind,
}

impl ModelSpec {
    /// Linear classifier, affine maps and quadratic potentials.
    pub fn affine(d: usize, k: usize, n: usize) -> Self {
        Self { d, k, n, classifier: ClassifierKind::Linear, transport: TransportKind::Affine, potential: PotentialKind::Quadratic }
    }

    /// ReLU maps and ReLU potentials with hidden width `2d`.
    pub fn relu(d: usize, k: usize, n: usize) -> Self {
        Self { d, k, n, classifier: ClassifierKind::Linear, transport: TransportKind::Relu, potential: PotentialKind::Relu { hidden: 2 * d } }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        if self.d == 0 || self.k < 2 || self.n == 0 {
            return Err(FedError::InvalidArgument(format!("model needs d ≥ 1, K ≥ 2, n ≥ 1 (got d={}, K={}, n={})", self.d, self.k, self.n)));
        }
        if matches!(self.classifier, ClassifierKind::Mlp { hidden: 0 }) || matches!(self.potential, PotentialKind::Relu { hidden: 0 }) {
            return Err(FedError::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Identity transport maps, zero heads, zero bias and `v0`; classifier
    /// weights and the ReLU potential's `V1` uniform on `±0.01`.
    pub fn init(&self, stream: RngStream) -> Result<ParamBundle, FedError> {
        self.validate()?;
        let noise = |tag: &str, rows: usize, cols: usize| -> Result<Matrix, FedError> { Ok(rng_draw_uniform(stream.named(tag), -0.01, 0.01, rows, cols)?) };
        let w = match self.classifier {
            ClassifierKind::Linear => ClassifierParams::Linear { w: noise("w", self.k, self.d)?, b: noise("b", self.k, 1)? },
            ClassifierKind::Mlp { hidden } => ClassifierParams::Mlp {
                w1: noise("w1", hidden, self.d)?,
                b1: noise("b1", hidden, 1)?,
                w2: noise("w2", self.k, hidden)?,
                b2: noise("b2", self.k, 1)?,
            },
        };
        let theta = vec![TransportParams::identity(self.transport, self.d); self.n];
        let trunk = match self.potential {
            PotentialKind::Quadratic => Trunk::Identity,
            PotentialKind::Relu { hidden } => Trunk::Relu { v1: noise("V1", hidden, self.d)?, v0: Matrix::zeros(hidden, 1) },
        };
        let heads = vec![Head::zeros(self.potential, self.d); self.n];
        Ok(ParamBundle { w, theta, potential: PotentialParams { trunk, heads } })
    }

    /// All-zero bundle with these shapes (transport maps included).
    pub fn zeros(&self) -> Result<ParamBundle, FedError> {
        Ok(self.init(RngStream::new(0, 0))?.zeroed())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierParams {
    Linear { w: Matrix, b: Matrix },
    Mlp { w1: Matrix, b1: Matrix, w2: Matrix, b2: Matrix },
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ClassifierCache {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl ClassifierParams {
    pub fn input_dim(&self) -> usize {
        match self {
            ClassifierParams::Linear { w, .. } => w.cols(),
            ClassifierParams::Mlp { w1, .. } => w1.cols(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ClassifierParams::Linear { w, .. } => w.rows(),
            ClassifierParams::Mlp { w2, .. } => w2.rows(),
        }
    }

    /// Linear: `Wx + b`. MLP: `W₂ ReLU(W₁x + b₁) + b₂`.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, FedError> {
        check_dim("classifier", self.input_dim(), x.len())?;
        Ok(self.forward(x, &mut ClassifierCache::default()))
    }

    pub(crate) fn forward(&self, x: &[f64], cache: &mut ClassifierCache) -> Vec<f64> {
        match self {
            ClassifierParams::Linear { w, b } => affine(w, b, x),
            ClassifierParams::Mlp { w1, b1, w2, b2 } => {
                cache.hidden_pre = affine(w1, b1, x);
                cache.hidden = cache.hidden_pre.iter().map(|&a| relu(a)).collect();
                affine(w2, b2, &cache.hidden)
            }
        }
    }

    /// Accumulates `∂/∂params` of `dlogitsᵀ logits` into `grad` and returns
    /// the input gradient.
    pub(crate) fn backward(&self, x: &[f64], cache: &ClassifierCache, dlogits: &[f64], grad: &mut ClassifierParams) -> Vec<f64> {
        match (self, grad) {
            (ClassifierParams::Linear { w, .. }, ClassifierParams::Linear { w: gw, b: gb }) => {
                add_outer(gw, 1.0, dlogits, x);
                add_vec(gb, 1.0, dlogits);
                w.matvec_t(dlogits)
            }
            (ClassifierParams::Mlp { w1, w2, .. }, ClassifierParams::Mlp { w1: gw1, b1: gb1, w2: gw2, b2: gb2 }) => {
                add_outer(gw2, 1.0, dlogits, &cache.hidden);
                add_vec(gb2, 1.0, dlogits);
                let mut da = w2.matvec_t(dlogits);
                da.iter_mut().zip(&cache.hidden_pre).for_each(|(g, &a)| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                add_outer(gw1, 1.0, &da, x);
                add_vec(gb1, 1.0, &da);
                w1.matvec_t(&da)
            }
            _ => unreachable!("gradient container has a different classifier variant"),
        }
    }

    /// Smallest `|pre-activation|` of the hidden layer at `x` (infinite for
    /// the linear family).
    pub fn min_abs_preactivation(&self, x: &[f64]) -> f64 {
        match self {
            ClassifierParams::Linear { .. } => f64::INFINITY,
            ClassifierParams::Mlp { w1, b1, .. } => affine(w1, b1, x).iter().fold(f64::INFINITY, |m, a| m.min(a.abs())),
        }
    }
}

impl Blocks for ClassifierParams {
    fn blocks(&self) -> Vec<&Matrix> {
        match self {
            ClassifierParams::Linear { w, b } => vec![w, b],
            ClassifierParams::Mlp { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            ClassifierParams::Linear { w, b } => vec![w, b],
            ClassifierParams::Mlp { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        }
    }

    fn block_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            ClassifierParams::Linear { .. } => &["W", "b"],
            ClassifierParams::Mlp { .. } => &["W1", "b1", "W2", "b2"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportParams {
    /// `Θ₁x + θ₀`
    Affine { theta1: Matrix, theta0: Matrix },
    /// `ReLU(Θ₂x + θ₁) + θ₀`
    Relu { theta2: Matrix, theta1: Matrix, theta0: Matrix },
}

impl TransportParams {
    pub fn identity(kind: TransportKind, d: usize) -> Self {
        match kind {
            TransportKind::Affine => TransportParams::Affine { theta1: Matrix::identity(d), theta0: Matrix::zeros(d, 1) },
            TransportKind::Relu => TransportParams::Relu { theta2: Matrix::identity(d), theta1: Matrix::zeros(d, 1), theta0: Matrix::zeros(d, 1) },
        }
    }

    /// The map that undoes the affine shift `diag(s)x + z`.
    pub fn affine_inverse_of(s: &[f64], z: &[f64]) -> Result<Self, FedError> {
        check_dim("affine inverse", s.len(), z.len())?;
        let inv: Vec<f64> = s.iter().map(|v| 1.0 / v).collect();
        let theta0: Vec<f64> = inv.iter().zip(z).map(|(a, b)| -a * b).collect();
        Ok(TransportParams::Affine { theta1: Matrix::diag(&inv), theta0: Matrix::column(&theta0) })
    }

    pub fn kind(&self) -> TransportKind {
        match self {
            TransportParams::Affine { .. } => TransportKind::Affine,
            TransportParams::Relu { .. } => TransportKind::Relu,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TransportParams::Affine { theta1, .. } => theta1.cols(),
            TransportParams::Relu { theta2, .. } => theta2.cols(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, FedError> {
        check_dim("transport map", self.dim(), x.len())?;
        Ok(self.forward(x))
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TransportParams::Affine { theta1, theta0 } => affine(theta1, theta0, x),
            TransportParams::Relu { theta2, theta1, theta0 } => {
                let mut out = affine(theta2, theta1, x);
                out.iter_mut().zip(theta0.as_slice()).for_each(|(o, t)| *o = relu(*o) + t);
                out
            }
        }
    }

    /// Accumulates the parameter gradient of `dzᵀ ψ(x)` into `grad`.
    pub(crate) fn backward(&self, x: &[f64], dz: &[f64], grad: &mut TransportParams) {
        match (self, grad) {
            (TransportParams::Affine { .. }, TransportParams::Affine { theta1: g1, theta0: g0 }) => {
                add_outer(g1, 1.0, dz, x);
                add_vec(g0, 1.0, dz);
            }
            (TransportParams::Relu { theta2, theta1, .. }, TransportParams::Relu { theta2: g2, theta1: g1, theta0: g0 }) => {
                add_vec(g0, 1.0, dz);
                let pre = affine(theta2, theta1, x);
                let da: Vec<f64> = dz.iter().zip(&pre).map(|(&g, &a)| if a > 0.0 { g } else { 0.0 }).collect();
                add_outer(g2, 1.0, &da, x);
                add_vec(g1, 1.0, &da);
            }
            _ => unreachable!("gradient container has a different transport variant"),
        }
    }

    pub fn min_abs_preactivation(&self, x: &[f64]) -> f64 {
        match self {
            TransportParams::Affine { .. } => f64::INFINITY,
            TransportParams::Relu { theta2, theta1, .. } => affine(theta2, theta1, x).iter().fold(f64::INFINITY, |m, a| m.min(a.abs())),
        }
    }
}

impl Blocks for TransportParams {
    fn blocks(&self) -> Vec<&Matrix> {
        match self {
            TransportParams::Affine { theta1, theta0 } => vec![theta1, theta0],
            TransportParams::Relu { theta2, theta1, theta0 } => vec![theta2, theta1, theta0],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            TransportParams::Affine { theta1, theta0 } => vec![theta1, theta0],
            TransportParams::Relu { theta2, theta1, theta0 } => vec![theta2, theta1, theta0],
        }
    }

    fn block_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            TransportParams::Affine { .. } => &["Theta1", "theta0"],
            TransportParams::Relu { .. } => &["Theta2", "theta1", "theta0"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// Shared potential features `φ_U`.
#[derive(Debug, Clone, PartialEq)]
pub enum Trunk {
    /// Quadratic family: the head acts on `z` directly and `U` is empty.
    Identity,
    /// `ReLU(V₁z + v₀)`
    Relu { v1: Matrix, v0: Matrix },
}

/// Per-client last layer `vᵢ`; heads are tied by `Σᵢ vᵢ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// `½ zᵀVz + v1ᵀz`, `V` symmetric.
    Quadratic { v: Matrix, v1: Matrix },
    /// `v2ᵀ ReLU(V₁z + v₀)`
    Relu { v2: Matrix },
}

impl Head {
    pub fn zeros(kind: PotentialKind, d: usize) -> Self {
        match kind {
            PotentialKind::Quadratic => Head::Quadratic { v: Matrix::zeros(d, d), v1: Matrix::zeros(d, 1) },
            PotentialKind::Relu { hidden } => Head::Relu { v2: Matrix::zeros(hidden, 1) },
        }
    }

    /// The linear part of the head, which the unit-norm cap acts on.
    pub fn linear_part_mut(&mut self) -> &mut Matrix {
        match self {
            Head::Quadratic { v1, .. } => v1,
            Head::Relu { v2 } => v2,
        }
    }
}

impl Blocks for Trunk {
    fn blocks(&self) -> Vec<&Matrix> {
        match self {
            Trunk::Identity => vec![],
            Trunk::Relu { v1, v0 } => vec![v1, v0],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Trunk::Identity => vec![],
            Trunk::Relu { v1, v0 } => vec![v1, v0],
        }
    }

    fn block_names(&self) -> Vec<String> {
        match self {
            Trunk::Identity => vec![],
            Trunk::Relu { .. } => vec!["V1".into(), "v0".into()],
        }
    }
}

impl Blocks for Head {
    fn blocks(&self) -> Vec<&Matrix> {
        match self {
            Head::Quadratic { v, v1 } => vec![v, v1],
            Head::Relu { v2 } => vec![v2],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Head::Quadratic { v, v1 } => vec![v, v1],
            Head::Relu { v2 } => vec![v2],
        }
    }

    fn block_names(&self) -> Vec<String> {
        match self {
            Head::Quadratic { .. } => vec!["V".into(), "v1".into()],
            Head::Relu { .. } => vec!["v2".into()],
        }
    }
}

/// Trunk activations at one point.
#[derive(Debug, Clone)]
pub(crate) struct TrunkCache {
    pre: Vec<f64>,
    out: Vec<f64>,
}

impl Trunk {
    pub(crate) fn forward(&self, z: &[f64]) -> TrunkCache {
        match self {
            Trunk::Identity => TrunkCache { pre: Vec::new(), out: z.to_vec() },
            Trunk::Relu { v1, v0 } => {
                let pre = affine(v1, v0, z);
                let out = pre.iter().map(|&a| relu(a)).collect();
                TrunkCache { pre, out }
            }
        }
    }

    pub fn min_abs_preactivation(&self, z: &[f64]) -> f64 {
        match self {
            Trunk::Identity => f64::INFINITY,
            Trunk::Relu { v1, v0 } => affine(v1, v0, z).iter().fold(f64::INFINITY, |m, a| m.min(a.abs())),
        }
    }
}

impl Head {
    pub(crate) fn eval(&self, feats: &TrunkCache) -> f64 {
        match self {
            Head::Quadratic { v, v1 } => {
                let z = &feats.out;
                let vz = v.matvec(z);
                0.5 * dot(z, &vz) + dot(v1.as_slice(), z)
            }
            Head::Relu { v2 } => dot(v2.as_slice(), &feats.out),
        }
    }

    /// Accumulates `scale · ∂φ/∂(head, trunk)` and returns `scale · ∇_z φ`.
    pub(crate) fn backward(&self, trunk: &Trunk, z: &[f64], feats: &TrunkCache, scale: f64, grad_head: &mut Head, grad_trunk: &mut Trunk) -> Vec<f64> {
        match (self, grad_head) {
            (Head::Quadratic { v, v1 }, Head::Quadratic { v: gv, v1: gv1 }) => {
                add_outer(gv, 0.5 * scale, z, z);
                add_vec(gv1, scale, z);
                let vz = v.matvec(z);
                let vtz = v.matvec_t(z);
                vz.iter().zip(&vtz).zip(v1.as_slice()).map(|((a, b), c)| scale * (0.5 * (a + b) + c)).collect()
            }
            (Head::Relu { v2 }, Head::Relu { v2: gv2 }) => {
                add_vec(gv2, scale, &feats.out);
                let (Trunk::Relu { v1, .. }, Trunk::Relu { v1: gv1, v0: gv0 }) = (trunk, grad_trunk) else {
                    unreachable!("ReLU head without a ReLU trunk")
                };
                let da: Vec<f64> = v2.as_slice().iter().zip(&feats.pre).map(|(&h, &a)| if a > 0.0 { scale * h } else { 0.0 }).collect();
                add_outer(gv1, 1.0, &da, z);
                add_vec(gv0, 1.0, &da);
                v1.matvec_t(&da)
            }
            _ => unreachable!("gradient container has a different head variant"),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `φᵢ = vᵢᵀ φ_U` for every client.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialParams {
    pub trunk: Trunk,
    pub heads: Vec<Head>,
}

impl PotentialParams {
    pub fn num_clients(&self) -> usize {
        self.heads.len()
    }

    pub fn kind(&self) -> PotentialKind {
        match &self.trunk {
            Trunk::Identity => PotentialKind::Quadratic,
            Trunk::Relu { v1, .. } => PotentialKind::Relu { hidden: v1.rows() },
        }
    }

    pub fn input_dim(&self) -> usize {
        match (&self.trunk, self.heads.first()) {
            (Trunk::Relu { v1, .. }, _) => v1.cols(),
            (Trunk::Identity, Some(Head::Quadratic { v, .. })) => v.cols(),
            _ => 0,
        }
    }

    /// `φᵢ(x)`
    pub fn value(&self, i: usize, x: &[f64]) -> Result<f64, FedError> {
        let head = self.heads.get(i).ok_or_else(|| FedError::InvalidArgument(format!("client {i} out of range for {} heads", self.heads.len())))?;
        check_dim("potential", self.input_dim(), x.len())?;
        Ok(head.eval(&self.trunk.forward(x)))
    }

    /// `∇ₓφᵢ(x)`
    pub fn input_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>, FedError> {
        self.value(i, x)?;
        let feats = self.trunk.forward(x);
        let mut gh = self.heads[i].zeroed();
        let mut gt = self.trunk.zeroed();
        Ok(self.heads[i].backward(&self.trunk, x, &feats, 1.0, &mut gh, &mut gt))
    }

    /// Norm of the summed heads; zero when the potentials are feasible.
    pub fn zero_sum_residual(&self) -> f64 {
        let Some(first) = self.heads.first() else { return 0.0 };
        let mut sum = first.zeroed();
        for h in &self.heads {
            sum.axpy_blocks(1.0, h);
        }
        sum.norm_sq().sqrt()
    }
}

impl Blocks for PotentialParams {
    fn blocks(&self) -> Vec<&Matrix> {
        let mut out = self.trunk.blocks();
        self.heads.iter().for_each(|h| out.extend(h.blocks()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.trunk.blocks_mut();
        self.heads.iter_mut().for_each(|h| out.extend(h.blocks_mut()));
        out
    }

    fn block_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.trunk.block_names().into_iter().map(|n| format!("U.{n}")).collect();
        for (i, h) in self.heads.iter().enumerate() {
            out.extend(h.block_names().into_iter().map(|n| format!("head{i}.{n}")));
        }
        out
    }
}

/// The full FedOT variable set.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBundle {
    pub w: ClassifierParams,
    pub theta: Vec<TransportParams>,
    pub potential: PotentialParams,
}

impl ParamBundle {
    pub fn num_clients(&self) -> usize {
        self.theta.len()
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            d: self.w.input_dim(),
            k: self.w.num_classes(),
            n: self.theta.len(),
            classifier: match &self.w {
                ClassifierParams::Linear { .. } => ClassifierKind::Linear,
                ClassifierParams::Mlp { w1, .. } => ClassifierKind::Mlp { hidden: w1.rows() },
            },
            transport: self.theta.first().map_or(TransportKind::Affine, TransportParams::kind),
            potential: self.potential.kind(),
        }
    }

    /// Shape consistency across the three families.
    pub fn validate(&self) -> Result<(), FedError> {
        let spec = self.spec();
        spec.validate()?;
        let template = spec.zeros()?;
        let shapes = |b: &ParamBundle| b.blocks().iter().map(|m| m.shape()).collect::<Vec<_>>();
        if self.potential.heads.len() != self.theta.len() || shapes(self) != shapes(&template) {
            return Err(FedError::InvalidArgument("parameter bundle has inconsistent shapes".into()));
        }
        if !self.is_finite() {
            return Err(FedError::NonFinite { layer: "parameter bundle".into() });
        }
        Ok(())
    }

    /// Class prediction of client `i`'s personalised model; ties go to the
    /// lowest class index.
    pub fn predict(&self, i: usize, x: &[f64]) -> Result<usize, FedError> {
        let theta = self.theta.get(i).ok_or_else(|| FedError::InvalidArgument(format!("client {i} out of range")))?;
        Ok(argmax(&self.w.logits(&theta.apply(x)?)?))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = c;
        }
    }
    best
}

impl Blocks for ParamBundle {
    fn blocks(&self) -> Vec<&Matrix> {
        let mut out = self.w.blocks();
        self.theta.iter().for_each(|t| out.extend(t.blocks()));
        out.extend(self.potential.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.w.blocks_mut();
        self.theta.iter_mut().for_each(|t| out.extend(t.blocks_mut()));
        out.extend(self.potential.blocks_mut());
        out
    }

    fn block_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.w.block_names().into_iter().map(|n| format!("w.{n}")).collect();
        for (i, t) in self.theta.iter().enumerate() {
            out.extend(t.block_names().into_iter().map(|n| format!("theta{i}.{n}")));
        }
        out.extend(self.potential.block_names());
        out
    }
}

const CKPT_MAGIC: &str = "FEDOTCKPT";
const CKPT_VERSION: u32 = 1;

/// Writes a checkpoint: a text manifest (header, one `name rows cols offset`
/// line per block, `END`) followed by the little-endian `f64` payload.
pub fn write_checkpoint(bundle: &ParamBundle, mut out: impl Write) -> Result<(), FedError> {
    let spec = bundle.spec();
    let blocks = bundle.blocks();
    writeln!(
        out,
        "{CKPT_MAGIC} {CKPT_VERSION} d={} k={} n={} classifier={} transport={} potential={} blocks={}",
        spec.d,
        spec.k,
        spec.n,
        spec.classifier,
        spec.transport,
        spec.potential,
        blocks.len()
    )?;
    let mut offset = 0;
    for (name, b) in bundle.block_names().iter().zip(&blocks) {
        writeln!(out, "{name} {} {} {offset}", b.rows(), b.cols())?;
        offset += b.len();
    }
    writeln!(out, "END")?;
    for b in blocks {
        for v in b.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(input: impl Read) -> Result<ParamBundle, FedError> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let mut lineno = 0;
    let mut next_line = |reader: &mut BufReader<_>, line: &mut String| -> Result<usize, FedError> {
        line.clear();
        reader.read_line(line)?;
        lineno += 1;
        Ok(lineno)
    };
    let ln = next_line(&mut reader, &mut line)?;
    let err = |line: usize, message: String| FedError::Parse { line, message };
    let mut fields = line.split_whitespace();
    if fields.next() != Some(CKPT_MAGIC) {
        return Err(err(ln, "not a checkpoint file".into()));
    }
    if fields.next() != Some("1") {
        return Err(err(ln, "unsupported checkpoint version".into()));
    }
    let mut get = |key: &str| -> Result<String, FedError> {
        let token = fields.next().ok_or_else(|| err(ln, format!("missing {key}")))?;
        token
            .strip_prefix(key)
            .and_then(|t| t.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| err(ln, format!("expected {key}=..., found '{token}'")))
    };
    let num = |v: String| v.parse::<usize>().map_err(|_| err(ln, format!("bad count '{v}'")));
    let spec = ModelSpec {
        d: num(get("d")?)?,
        k: num(get("k")?)?,
        n: num(get("n")?)?,
        classifier: get("classifier")?.parse()?,
        transport: get("transport")?.parse()?,
        potential: get("potential")?.parse()?,
    };
    let count = num(get("blocks")?)?;
    let mut bundle = spec.zeros()?;
    let expected: Vec<(String, (usize, usize))> = bundle.block_names().into_iter().zip(bundle.blocks().iter().map(|b| b.shape())).collect();
    if expected.len() != count {
        return Err(err(ln, format!("header announces {count} blocks, model has {}", expected.len())));
    }
    let mut offset = 0;
    for (name, (rows, cols)) in &expected {
        let ln = next_line(&mut reader, &mut line)?;
        let want = format!("{name} {rows} {cols} {offset}");
        if line.trim_end() != want {
            return Err(err(ln, format!("expected block '{want}', found '{}'", line.trim_end())));
        }
        offset += rows * cols;
    }
    let ln = next_line(&mut reader, &mut line)?;
    if line.trim_end() != "END" {
        return Err(err(ln, "missing END marker".into()));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != 8 * offset {
        return Err(err(ln + 1, format!("payload has {} bytes, expected {}", payload.len(), 8 * offset)));
    }
    let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    bundle.assign_flat(&values)?;
    if !bundle.is_finite() {
        return Err(FedError::NonFinite { layer: "checkpoint payload".into() });
    }
    Ok(bundle)
}

pub fn save_checkpoint(bundle: &ParamBundle, path: &Path) -> Result<(), FedError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(bundle, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamBundle, FedError> {
    read_checkpoint(std::fs::File::open(path)?)
}
