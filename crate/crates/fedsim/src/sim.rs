//! In-process star-topology federation: FedOT-GDA and the baselines.
//!
//! Each client owns its data, its local variable `(w, θᵢ, vᵢ, U)` and two
//! batch samplers (descent and ascent) on its own random streams. Rounds
//! run clients in parallel on a rayon pool; the coordinator then reduces in
//! client-index order, so results do not depend on the worker count.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use fedot_core::RngStream;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{argmax, Blocks, ClassifierKind, ClassifierParams, Head, ModelSpec, ParamBundle, PotentialKind, PotentialParams, TransportKind, TransportParams, Trunk};
use crate::objective::{all_indices, global_reports, project_local_one_fedot, project_one_fedot, project_zero_sum_in_place, view_loss, ClientGrad, ClientLossReport, ClientView, Objective, ObjectiveSpec};
use crate::shift::{ClientDataset, FederatedTask};
use crate::FedError;

/// Any block norm above this (or a non-finite entry) counts as divergence.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    FedOT,
    FedAvg,
    LFedAvg,
    FedMI,
    FedFOMAML,
    LocalOnly,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::FedOT, Method::FedAvg, Method::LFedAvg, Method::FedMI, Method::FedFOMAML, Method::LocalOnly];

    pub fn name(&self) -> &'static str {
        match self {
            Method::FedOT => "fedot",
            Method::FedAvg => "fedavg",
            Method::LFedAvg => "lfedavg",
            Method::FedMI => "fedmi",
            Method::FedFOMAML => "fedfomaml",
            Method::LocalOnly => "localonly",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self, FedError> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| FedError::InvalidArgument(format!("unknown method '{s}' (fedot | fedavg | lfedavg | fedmi | fedfomaml | localonly)")))
    }
}

/// Which blocks the server averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvgMode {
    /// Only `w` and `U`; `θᵢ` and `vᵢ` stay with their owner.
    PartialPersonalized,
    /// Every block of the local variable, `θᵢ` and `vᵢ` included.
    LiteralAll,
}

impl FromStr for AvgMode {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self, FedError> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "partialpersonalized" | "partial" => Ok(AvgMode::PartialPersonalized),
            "literalall" | "literal" => Ok(AvgMode::LiteralAll),
            _ => Err(FedError::InvalidArgument(format!("unknown avg_mode '{s}' (partial | literal)"))),
        }
    }
}

impl fmt::Display for AvgMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AvgMode::PartialPersonalized => "partial",
            AvgMode::LiteralAll => "literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    OneFedOT,
    TwoFedOTReg,
}

impl FromStr for ObjectiveKind {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self, FedError> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "1fedot" | "onefedot" => Ok(ObjectiveKind::OneFedOT),
            "2fedot" | "twofedot" | "2fedotreg" | "twofedotreg" => Ok(ObjectiveKind::TwoFedOTReg),
            _ => Err(FedError::InvalidArgument(format!("unknown objective '{s}' (1-fedot | 2-fedot)"))),
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::OneFedOT => "1-fedot",
            ObjectiveKind::TwoFedOTReg => "2-fedot",
        })
    }
}

/// Hyperparameters of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub n: usize,
    pub m: usize,
    /// Local iterations between synchronisations.
    pub tau: usize,
    /// Total iterations; a multiple of `tau`.
    pub total_iters: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub batch: usize,
    /// Ascent steps per descent step (1 = simultaneous GDA).
    pub max_steps_per_min_step: usize,
    pub seed: u64,
    pub method: Method,
    pub avg_mode: AvgMode,
    pub objective: ObjectiveKind,
    pub keep_psi_norm: bool,
    /// When false the transport maps stay at their initial value.
    pub train_transport: bool,
    pub classifier: ClassifierKind,
    pub transport: TransportKind,
    pub potential: PotentialKind,
    /// Extra local descent steps of L-FedAvg.
    pub finetune_steps: usize,
    /// Stationarity proxy every this many rounds (0 = never).
    pub proxy_every: usize,
    pub proxy_burst: usize,
    /// Worker threads (0 = one per core).
    pub threads: usize,
    /// Record `wall_ms`; off keeps results byte-reproducible.
    pub timing: bool,
    /// Give every client the stream of client 0.
    pub shared_client_streams: bool,
    /// Keep the synchronised bundle of every round in the history.
    pub keep_trajectory: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            n: 20,
            m: 100,
            tau: 5,
            total_iters: 2000,
            eta1: 0.002,
            eta2: 0.002,
            lambda: 1.0,
            gamma: 0.5,
            batch: 20,
            max_steps_per_min_step: 10,
            seed: 0,
            method: Method::FedOT,
            avg_mode: AvgMode::PartialPersonalized,
            objective: ObjectiveKind::TwoFedOTReg,
            keep_psi_norm: false,
            train_transport: true,
            classifier: ClassifierKind::Linear,
            transport: TransportKind::Affine,
            potential: PotentialKind::Quadratic,
            finetune_steps: 500,
            proxy_every: 0,
            proxy_burst: 10,
            threads: 0,
            timing: false,
            shared_client_streams: false,
            keep_trajectory: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        let bad = |msg: String| Err(FedError::InvalidArgument(msg));
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be positive".into());
        }
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        if self.total_iters == 0 || self.total_iters % self.tau != 0 {
            return bad(format!("total_iters ({}) must be a positive multiple of tau ({})", self.total_iters, self.tau));
        }
        if !(self.eta1 > 0.0) || !(self.eta2 > 0.0) || !self.eta1.is_finite() || !self.eta2.is_finite() {
            return bad(format!("step sizes must be positive (eta1={}, eta2={})", self.eta1, self.eta2));
        }
        if self.batch == 0 || self.batch > self.m {
            return bad(format!("batch ({}) must lie in 1..=m ({})", self.batch, self.m));
        }
        if self.method == Method::FedFOMAML && self.batch < 2 {
            return bad("Fed-FOMAML splits each batch and needs batch ≥ 2".into());
        }
        if self.method == Method::FedOT && self.max_steps_per_min_step == 0 {
            return bad("max_steps_per_min_step must be at least 1".into());
        }
        if self.proxy_every > 0 && self.proxy_burst == 0 {
            return bad("proxy_burst must be at least 1".into());
        }
        self.objective_spec().validate()
    }

    pub fn objective_spec(&self) -> ObjectiveSpec {
        match self.objective {
            ObjectiveKind::OneFedOT => ObjectiveSpec::OneFedOT { lambda: self.lambda },
            ObjectiveKind::TwoFedOTReg => ObjectiveSpec::TwoFedOTReg { lambda: self.lambda, gamma: self.gamma },
        }
    }

    pub fn fedot_objective(&self) -> Objective {
        Objective { spec: self.objective_spec(), keep_psi_norm: self.keep_psi_norm }
    }

    pub fn model_spec(&self, d: usize, k: usize) -> ModelSpec {
        ModelSpec { d, k, n: self.n, classifier: self.classifier, transport: self.transport, potential: self.potential }
    }

    pub fn rounds(&self) -> usize {
        self.total_iters / self.tau
    }

    pub fn init_stream(&self) -> RngStream {
        RngStream::new(self.seed, 0).named("init")
    }

    pub fn client_stream(&self, i: usize) -> RngStream {
        let owner = if self.shared_client_streams { 0 } else { i };
        RngStream::new(self.seed, 0).named("train").substream(owner as u64)
    }

    fn check_task(&self, task: &FederatedTask) -> Result<(), FedError> {
        self.validate()?;
        if task.num_clients() != self.n {
            return Err(FedError::InvalidArgument(format!("config has n={} but the task has {} clients", self.n, task.num_clients())));
        }
        if let Some(d) = task.train.iter().find(|d| d.len() != self.m) {
            return Err(FedError::InvalidArgument(format!("config has m={} but client {} holds {} samples", self.m, d.client_id, d.len())));
        }
        if task.test.len() != self.n {
            return Err(FedError::InvalidArgument("every client needs a test set".into()));
        }
        Ok(())
    }
}

/// Plain cross-entropy: what the baselines minimise.
fn ce_objective() -> Objective {
    Objective::new(ObjectiveSpec::TwoFedOTReg { lambda: 0.0, gamma: 0.0 })
}

/// Minibatches drawn without replacement, reshuffled every epoch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(stream: RngStream, m: usize, batch: usize) -> Self {
        let mut rng = stream.generator();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        Self { rng, order, pos: 0, batch }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// Per-synchronisation record.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub iteration: usize,
    pub per_client_acc: Vec<f64>,
    pub avg_test_acc: f64,
    pub classification_term: f64,
    pub transport_dual_term: f64,
    pub reg_term: f64,
    pub total: f64,
    pub zero_sum_residual: f64,
    /// NaN when not computed this round.
    pub stationarity_proxy: f64,
    /// All clients hold bit-identical shared blocks after the round.
    pub shared_blocks_equal: bool,
    pub diverged: bool,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct History {
    pub config: FederationConfig,
    pub rounds: Vec<RoundMetrics>,
    pub diverged: bool,
    /// Synchronised parameters at the end of the run (client 0's copy of
    /// the shared blocks for LocalOnly).
    pub final_bundle: ParamBundle,
    /// Synchronised bundle after every round, when requested.
    pub trajectory: Vec<ParamBundle>,
}

impl History {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.avg_test_acc)
    }

    pub fn min_proxy(&self) -> f64 {
        self.rounds.iter().map(|r| r.stationarity_proxy).filter(|p| !p.is_nan()).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy)]
struct StepMask {
    w: bool,
    theta: bool,
    potential: bool,
}

#[derive(Debug, Clone)]
struct ClientState {
    w: ClassifierParams,
    theta: TransportParams,
    trunk: Trunk,
    head: Head,
    /// FedMI's never-averaged local model.
    private_w: Option<ClassifierParams>,
    descent: BatchSampler,
    ascent: BatchSampler,
}

impl ClientState {
    fn new(i: usize, init: &ParamBundle, config: &FederationConfig) -> Self {
        let stream = config.client_stream(i);
        Self {
            w: init.w.clone(),
            theta: init.theta[i].clone(),
            trunk: init.potential.trunk.clone(),
            head: init.potential.heads[i].clone(),
            private_w: (config.method == Method::FedMI).then(|| init.w.clone()),
            descent: BatchSampler::new(stream.named("descent"), config.m, config.batch),
            ascent: BatchSampler::new(stream.named("ascent"), config.m, config.batch),
        }
    }

    fn view(&self) -> ClientView<'_> {
        ClientView { w: &self.w, theta: &self.theta, trunk: &self.trunk, head: &self.head }
    }

    fn apply(&mut self, g: &ClientGrad, mask: StepMask, eta1: f64, eta2: f64) {
        if mask.w {
            self.w.axpy_blocks(-eta1, &g.w);
        }
        if mask.theta {
            self.theta.axpy_blocks(-eta1, &g.theta);
        }
        if mask.potential {
            self.head.axpy_blocks(eta2, &g.head);
            self.trunk.axpy_blocks(eta2, &g.trunk);
        }
    }

    fn grad(&self, obj: &Objective, data: &ClientDataset, idx: &[usize]) -> Result<ClientGrad, FedError> {
        Ok(view_loss(obj, self.view(), data, idx, true)?.1.expect("gradient requested"))
    }

    fn local_round(&mut self, config: &FederationConfig, data: &ClientDataset) -> Result<(), FedError> {
        for _ in 0..config.tau {
            self.local_iteration(config, data)?;
        }
        Ok(())
    }

    fn local_iteration(&mut self, config: &FederationConfig, data: &ClientDataset) -> Result<(), FedError> {
        let (eta1, eta2) = (config.eta1, config.eta2);
        match config.method {
            Method::FedOT => {
                let obj = config.fedot_objective();
                let one = config.objective == ObjectiveKind::OneFedOT;
                let ascend = StepMask { w: false, theta: false, potential: true };
                for _ in 1..config.max_steps_per_min_step {
                    let idx = self.ascent.next_batch();
                    let g = self.grad(&obj, data, &idx)?;
                    self.apply(&g, ascend, eta1, eta2);
                    if one {
                        project_local_one_fedot(&mut self.trunk, &mut self.head)?;
                    }
                }
                let idx = self.descent.next_batch();
                let g = self.grad(&obj, data, &idx)?;
                self.apply(&g, StepMask { w: true, theta: config.train_transport, potential: true }, eta1, eta2);
                if one {
                    project_local_one_fedot(&mut self.trunk, &mut self.head)?;
                }
            }
            Method::FedAvg | Method::LFedAvg | Method::LocalOnly => {
                let idx = self.descent.next_batch();
                let g = self.grad(&ce_objective(), data, &idx)?;
                self.apply(&g, StepMask { w: true, theta: false, potential: false }, eta1, eta2);
            }
            Method::FedMI => {
                let idx = self.descent.next_batch();
                let obj = ce_objective();
                let g = self.grad(&obj, data, &idx)?;
                let private = self.private_w.as_ref().expect("FedMI client has a private model");
                let view = ClientView { w: private, ..self.view() };
                let gp = view_loss(&obj, view, data, &idx, true)?.1.expect("gradient requested");
                self.apply(&g, StepMask { w: true, theta: false, potential: false }, eta1, eta2);
                self.private_w.as_mut().expect("FedMI client has a private model").axpy_blocks(-eta1, &gp.w);
            }
            Method::FedFOMAML => {
                let idx = self.descent.next_batch();
                let (inner, outer) = idx.split_at(idx.len() / 2);
                let obj = ce_objective();
                let g_inner = self.grad(&obj, data, inner)?;
                let mut adapted = self.w.clone();
                adapted.axpy_blocks(-eta1, &g_inner.w);
                let view = ClientView { w: &adapted, ..self.view() };
                let g_outer = view_loss(&obj, view, data, outer, true)?.1.expect("gradient requested");
                self.w.axpy_blocks(-eta1, &g_outer.w);
            }
        }
        Ok(())
    }
}

/// `c₀ + Σₖ (cₖ − c₀)/n`: exact when all inputs are equal and for `n = 1`.
fn shifted_mean<B: Blocks + Clone>(items: &[&B]) -> B {
    let mut out = items[0].clone();
    let n = items.len() as f64;
    let mut sums: Vec<Vec<f64>> = out.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
    for item in &items[1..] {
        for ((s, b), b0) in sums.iter_mut().zip(item.blocks()).zip(items[0].blocks()) {
            s.iter_mut().zip(b.as_slice().iter().zip(b0.as_slice())).for_each(|(s, (v, v0))| *s += v - v0);
        }
    }
    for (b, s) in out.blocks_mut().into_iter().zip(&sums) {
        b.as_mut_slice().iter_mut().zip(s).for_each(|(v, s)| *v += s / n);
    }
    out
}

/// Elementwise `½(a + b)`.
pub fn interpolate_classifiers(a: &ClassifierParams, b: &ClassifierParams) -> ClassifierParams {
    let mut out = a.clone();
    for (o, (x, y)) in out.blocks_mut().into_iter().zip(a.blocks().into_iter().zip(b.blocks())) {
        o.as_mut_slice().iter_mut().zip(x.as_slice().iter().zip(y.as_slice())).for_each(|(o, (x, y))| *o = 0.5 * (x + y));
    }
    out
}

/// Accuracy of `f_w ∘ ψ` on a dataset.
pub fn evaluate_client(w: &ClassifierParams, theta: &TransportParams, data: &ClientDataset) -> Result<f64, FedError> {
    if data.is_empty() {
        return Err(FedError::InvalidArgument("empty test set".into()));
    }
    let mut correct = 0usize;
    for j in 0..data.len() {
        let (x, y) = data.sample(j);
        if argmax(&w.logits(&theta.apply(x)?)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Per-client accuracy of the personalised models `f_w ∘ ψ_{θᵢ}`.
pub fn evaluate(bundle: &ParamBundle, test: &[ClientDataset]) -> Result<Vec<f64>, FedError> {
    if test.len() != bundle.num_clients() {
        return Err(FedError::InvalidArgument(format!("{} test sets for {} clients", test.len(), bundle.num_clients())));
    }
    test.iter().enumerate().map(|(i, d)| evaluate_client(&bundle.w, &bundle.theta[i], d)).collect()
}

fn diverged(b: &impl Blocks) -> bool {
    !b.is_finite() || b.max_block_norm() > DIVERGENCE_NORM
}

/// Full-batch stationarity proxy of the federated objective: `burst`
/// ascent steps on `(vᵢ, U)` (heads follow their own client loss, `U` the
/// client mean), re-projection onto the feasible set, then the norm of the
/// gradient of `(1/n) Σᵢ Lᵢ` in the descent variables (`w`, plus every
/// `θᵢ` when `include_theta`).
pub fn stationarity_proxy(obj: &Objective, bundle: &ParamBundle, train: &[ClientDataset], burst: usize, eta2: f64, include_theta: bool) -> Result<f64, FedError> {
    if burst == 0 {
        return Err(FedError::InvalidArgument("ascent burst must be at least 1".into()));
    }
    if train.len() != bundle.num_clients() {
        return Err(FedError::InvalidArgument(format!("{} datasets for {} clients", train.len(), bundle.num_clients())));
    }
    let one = matches!(obj.spec, ObjectiveSpec::OneFedOT { .. });
    let grads = |b: &ParamBundle| -> Result<Vec<ClientGrad>, FedError> {
        train
            .iter()
            .enumerate()
            .map(|(i, d)| Ok(view_loss(obj, ClientView::of(b, i), d, &all_indices(d), true)?.1.expect("gradient requested")))
            .collect()
    };
    let mut p = bundle.clone();
    let n = p.num_clients() as f64;
    for _ in 0..burst {
        let g = grads(&p)?;
        for (h, gi) in p.potential.heads.iter_mut().zip(&g) {
            h.axpy_blocks(eta2, &gi.head);
        }
        for gi in &g {
            p.potential.trunk.axpy_blocks(eta2 / n, &gi.trunk);
        }
        if one {
            project_one_fedot(&mut p.potential)?;
        } else {
            project_zero_sum_in_place(&mut p.potential);
        }
    }
    let g = grads(&p)?;
    let mut gw = g[0].w.zeroed();
    for gi in &g {
        gw.axpy_blocks(1.0 / n, &gi.w);
    }
    let mut sq = gw.norm_sq();
    if include_theta {
        sq += g.iter().map(|gi| gi.theta.norm_sq()).sum::<f64>() / (n * n);
    }
    Ok(sq.sqrt())
}

fn method_carries_potentials(method: Method) -> bool {
    method == Method::FedOT
}

struct Engine<'a> {
    config: &'a FederationConfig,
    task: &'a FederatedTask,
    clients: Vec<ClientState>,
    global: ParamBundle,
    pool: rayon::ThreadPool,
}

impl<'a> Engine<'a> {
    fn new(config: &'a FederationConfig, task: &'a FederatedTask, start: Option<ParamBundle>) -> Result<Self, FedError> {
        config.check_task(task)?;
        let spec = config.model_spec(task.feature_dim(), task.num_classes());
        let global = match start {
            Some(b) if b.spec() != spec => return Err(FedError::InvalidArgument(format!("checkpoint holds {:?}, the run needs {:?}", b.spec(), spec))),
            Some(b) => {
                b.validate()?;
                b
            }
            None => spec.init(config.init_stream())?,
        };
        let clients = (0..config.n).map(|i| ClientState::new(i, &global, config)).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| FedError::InvalidArgument(format!("cannot build worker pool: {e}")))?;
        Ok(Self { config, task, clients, global, pool })
    }

    /// Runs one round of local work on every client; true on divergence.
    fn local_phase(&mut self) -> Result<bool, FedError> {
        let config = self.config;
        let train = &self.task.train;
        let outcomes: Vec<Result<(), FedError>> =
            self.pool.install(|| self.clients.par_iter_mut().zip(train.par_iter()).map(|(c, d)| c.local_round(config, d)).collect());
        let mut diverged = false;
        for o in outcomes {
            match o {
                Ok(()) => {}
                Err(FedError::NonFinite { .. }) => diverged = true,
                Err(e) => return Err(e),
            }
        }
        Ok(diverged)
    }

    fn synchronize(&mut self) -> Result<(), FedError> {
        let config = self.config;
        let ws: Vec<&ClassifierParams> = self.clients.iter().map(|c| &c.w).collect();
        let trunks: Vec<&Trunk> = self.clients.iter().map(|c| &c.trunk).collect();
        self.global.w = shifted_mean(&ws);
        self.global.potential.trunk = shifted_mean(&trunks);
        match config.avg_mode {
            AvgMode::PartialPersonalized => {
                for (i, c) in self.clients.iter().enumerate() {
                    self.global.theta[i] = c.theta.clone();
                    self.global.potential.heads[i] = c.head.clone();
                }
            }
            AvgMode::LiteralAll => {
                let thetas: Vec<&TransportParams> = self.clients.iter().map(|c| &c.theta).collect();
                let heads: Vec<&Head> = self.clients.iter().map(|c| &c.head).collect();
                let theta = shifted_mean(&thetas);
                let head = shifted_mean(&heads);
                self.global.theta.iter_mut().for_each(|t| *t = theta.clone());
                self.global.potential.heads.iter_mut().for_each(|h| *h = head.clone());
            }
        }
        if method_carries_potentials(config.method) {
            if config.objective == ObjectiveKind::OneFedOT {
                project_one_fedot(&mut self.global.potential)?;
            } else {
                project_zero_sum_in_place(&mut self.global.potential);
            }
        }
        for (i, c) in self.clients.iter_mut().enumerate() {
            c.w = self.global.w.clone();
            c.trunk = self.global.potential.trunk.clone();
            c.theta = self.global.theta[i].clone();
            c.head = self.global.potential.heads[i].clone();
        }
        Ok(())
    }

    fn shared_blocks_equal(&self) -> bool {
        let first = &self.clients[0];
        self.clients.iter().all(|c| c.w == first.w && c.trunk == first.trunk)
    }

    fn finetune(&mut self) -> Result<bool, FedError> {
        let config = self.config;
        let train = &self.task.train;
        let outcomes: Vec<Result<(), FedError>> = self.pool.install(|| {
            self.clients
                .par_iter_mut()
                .zip(train.par_iter())
                .map(|(c, d)| {
                    for _ in 0..config.finetune_steps {
                        let idx = c.descent.next_batch();
                        let g = c.grad(&ce_objective(), d, &idx)?;
                        c.w.axpy_blocks(-config.eta1, &g.w);
                    }
                    Ok(())
                })
                .collect()
        });
        let mut diverged = false;
        for o in outcomes {
            match o {
                Ok(()) => {}
                Err(FedError::NonFinite { .. }) => diverged = true,
                Err(e) => return Err(e),
            }
        }
        Ok(diverged)
    }

    /// Classifier each client is evaluated with.
    fn eval_classifiers(&self, finetuned: bool) -> Result<Vec<ClassifierParams>, FedError> {
        let config = self.config;
        match config.method {
            Method::FedOT | Method::FedAvg => Ok(vec![self.global.w.clone(); config.n]),
            Method::LFedAvg if !finetuned => Ok(vec![self.global.w.clone(); config.n]),
            Method::LFedAvg | Method::LocalOnly => Ok(self.clients.iter().map(|c| c.w.clone()).collect()),
            Method::FedMI => Ok(self.clients.iter().map(|c| interpolate_classifiers(&self.global.w, c.private_w.as_ref().expect("FedMI private model"))).collect()),
            Method::FedFOMAML => self
                .task
                .train
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let view = ClientView { w: &self.global.w, theta: &self.global.theta[i], trunk: &self.global.potential.trunk, head: &self.global.potential.heads[i] };
                    let g = view_loss(&ce_objective(), view, d, &all_indices(d), true)?.1.expect("gradient requested");
                    let mut w = self.global.w.clone();
                    w.axpy_blocks(-config.eta1, &g.w);
                    Ok(w)
                })
                .collect(),
        }
    }

    fn metrics(&self, round: usize, finetuned: bool, diverged: bool, started: Instant) -> Result<RoundMetrics, FedError> {
        let config = self.config;
        let task = self.task;
        let classifiers = self.eval_classifiers(finetuned)?;
        let per_client_acc = task
            .test
            .iter()
            .enumerate()
            .map(|(i, d)| evaluate_client(&classifiers[i], &self.global.theta[i], d))
            .collect::<Result<Vec<_>, _>>()?;
        let avg_test_acc = per_client_acc.iter().sum::<f64>() / per_client_acc.len() as f64;
        let reports = if method_carries_potentials(config.method) {
            global_reports(&config.fedot_objective(), &self.global, &task.train)
        } else {
            task.train
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let view = ClientView { w: &classifiers[i], theta: &self.global.theta[i], trunk: &self.global.potential.trunk, head: &self.global.potential.heads[i] };
                    Ok(view_loss(&ce_objective(), view, d, &all_indices(d), false)?.0)
                })
                .collect()
        };
        let terms = match reports {
            Ok(r) => ClientLossReport::mean(&r),
            Err(FedError::NonFinite { .. } | FedError::Constraint { .. }) if diverged => ClientLossReport { classification_term: f64::NAN, transport_dual_term: f64::NAN, reg_term: f64::NAN, total: f64::NAN },
            Err(e) => return Err(e),
        };
        let proxy_due = config.method == Method::FedOT && config.proxy_every > 0 && round % config.proxy_every == 0 && !diverged;
        let stationarity_proxy = if proxy_due {
            stationarity_proxy(&config.fedot_objective(), &self.global, &task.train, config.proxy_burst, config.eta2, config.train_transport)?
        } else {
            f64::NAN
        };
        Ok(RoundMetrics {
            round,
            iteration: round * config.tau,
            per_client_acc,
            avg_test_acc,
            classification_term: terms.classification_term,
            transport_dual_term: terms.transport_dual_term,
            reg_term: terms.reg_term,
            total: terms.total,
            zero_sum_residual: self.global.potential.zero_sum_residual(),
            stationarity_proxy,
            shared_blocks_equal: self.shared_blocks_equal(),
            diverged,
            wall_ms: if config.timing { started.elapsed().as_millis() as u64 } else { 0 },
        })
    }

    fn run(mut self) -> Result<History, FedError> {
        let config = self.config;
        let rounds = config.rounds();
        let mut history = History { config: config.clone(), rounds: Vec::with_capacity(rounds), diverged: false, final_bundle: self.global.clone(), trajectory: Vec::new() };
        for round in 1..=rounds {
            let started = Instant::now();
            let mut diverged = self.local_phase()?;
            if !diverged {
                if config.method == Method::LocalOnly {
                    // No communication: the server copy mirrors client 0.
                    self.global.w = self.clients[0].w.clone();
                } else {
                    self.synchronize()?;
                }
            }
            let finetuned = config.method == Method::LFedAvg && round == rounds && !diverged;
            if finetuned {
                diverged |= self.finetune()?;
            }
            diverged |= diverged_bundle(&self.global) || self.clients.iter().any(|c| diverged_blocks(&c.w) || c.private_w.as_ref().is_some_and(diverged_blocks));
            let metrics = self.metrics(round, finetuned, diverged, started)?;
            history.rounds.push(metrics);
            if config.keep_trajectory {
                history.trajectory.push(self.global.clone());
            }
            if diverged {
                history.diverged = true;
                break;
            }
        }
        history.final_bundle = self.global;
        Ok(history)
    }
}

fn diverged_bundle(b: &ParamBundle) -> bool {
    diverged(b)
}

fn diverged_blocks(w: &ClassifierParams) -> bool {
    diverged(w)
}

/// FedOT-GDA: per local iteration, `k − 1` ascent steps on `(vᵢ, U)` from
/// the ascent stream, then one simultaneous descent/ascent step from the
/// descent stream; averaging and projection every `tau` iterations.
pub fn run_fedot_gda(config: &FederationConfig, task: &FederatedTask) -> Result<History, FedError> {
    if config.method != Method::FedOT {
        return Err(FedError::InvalidArgument(format!("run_fedot_gda called with method {}", config.method)));
    }
    Engine::new(config, task, None)?.run()
}

/// Any of the baseline methods.
pub fn run_baseline(config: &FederationConfig, task: &FederatedTask) -> Result<History, FedError> {
    if config.method == Method::FedOT {
        return Err(FedError::InvalidArgument("run_baseline called with method fedot".into()));
    }
    Engine::new(config, task, None)?.run()
}

/// Dispatches on `config.method`.
pub fn run(config: &FederationConfig, task: &FederatedTask) -> Result<History, FedError> {
    Engine::new(config, task, None)?.run()
}

/// Like [`run`] but starting from `start` (typically a loaded checkpoint)
/// instead of a fresh initialisation. Batch streams start over.
pub fn run_from(config: &FederationConfig, task: &FederatedTask, start: ParamBundle) -> Result<History, FedError> {
    Engine::new(config, task, Some(start))?.run()
}

/// Reference single-machine SGDA for one client holding `data`: the same
/// step rule and streams as a one-client federation, with the feasibility
/// projection after every iteration. Returns the parameters after each
/// iteration.
pub fn run_single_sgda(config: &FederationConfig, data: &ClientDataset) -> Result<Vec<ParamBundle>, FedError> {
    let single = FederationConfig { n: 1, method: Method::FedOT, ..config.clone() };
    single.validate()?;
    let obj = single.fedot_objective();
    let one = single.objective == ObjectiveKind::OneFedOT;
    let mut p = single.model_spec(data.dim(), data.num_classes).init(single.init_stream())?;
    let stream = single.client_stream(0);
    let mut descent = BatchSampler::new(stream.named("descent"), data.len(), single.batch);
    let mut ascent = BatchSampler::new(stream.named("ascent"), data.len(), single.batch);
    let mut out = Vec::with_capacity(single.total_iters);
    let step = |p: &mut ParamBundle, idx: &[usize], descend: bool| -> Result<(), FedError> {
        let g = view_loss(&obj, ClientView::of(p, 0), data, idx, true)?.1.expect("gradient requested");
        if descend {
            p.w.axpy_blocks(-single.eta1, &g.w);
            if single.train_transport {
                p.theta[0].axpy_blocks(-single.eta1, &g.theta);
            }
        }
        p.potential.heads[0].axpy_blocks(single.eta2, &g.head);
        p.potential.trunk.axpy_blocks(single.eta2, &g.trunk);
        if one {
            let PotentialParams { trunk, heads } = &mut p.potential;
            project_local_one_fedot(trunk, &mut heads[0])?;
        }
        Ok(())
    };
    for _ in 0..single.total_iters {
        for _ in 1..single.max_steps_per_min_step {
            step(&mut p, &ascent.next_batch(), false)?;
        }
        step(&mut p, &descent.next_batch(), true)?;
        if one {
            project_one_fedot(&mut p.potential)?;
        } else {
            project_zero_sum_in_place(&mut p.potential);
        }
        out.push(p.clone());
    }
    Ok(out)
}

/// Reference classifier trained by SGD on the pooled unshifted training
/// data of all clients and scored on each client's unshifted test set.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub per_client_acc: Vec<f64>,
    pub avg_test_acc: f64,
    pub classifier: ClassifierParams,
}

/// `total_iters` SGD steps with step `eta1` and batches of `batch · n`
/// pooled samples (the data one synchronised round sees).
pub fn train_pooled_oracle(config: &FederationConfig, task: &FederatedTask) -> Result<OracleResult, FedError> {
    config.check_task(task)?;
    let d = task.base_train[0].dim();
    let k = task.num_classes();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for ds in &task.base_train {
        rows.extend_from_slice(ds.features.as_slice());
        labels.extend_from_slice(&ds.labels);
    }
    let pooled = ClientDataset::new(fedot_core::Matrix::from_vec(labels.len(), d, rows)?, labels, k, usize::MAX)?;
    let spec = ModelSpec { n: 1, transport: TransportKind::Affine, potential: PotentialKind::Quadratic, ..config.model_spec(d, k) };
    let init = spec.init(config.init_stream())?;
    let identity = TransportParams::identity(TransportKind::Affine, d);
    let mut w = init.w;
    let batch = (config.batch * config.n).min(pooled.len());
    let mut sampler = BatchSampler::new(RngStream::new(config.seed, 0).named("oracle"), pooled.len(), batch);
    let obj = ce_objective();
    for _ in 0..config.total_iters {
        let idx = sampler.next_batch();
        let view = ClientView { w: &w, theta: &identity, trunk: &init.potential.trunk, head: &init.potential.heads[0] };
        let g = view_loss(&obj, view, &pooled, &idx, true)?.1.expect("gradient requested");
        w.axpy_blocks(-config.eta1, &g.w);
    }
    let per_client_acc = task.base_test.iter().map(|ds| evaluate_client(&w, &identity, ds)).collect::<Result<Vec<_>, _>>()?;
    let avg_test_acc = per_client_acc.iter().sum::<f64>() / per_client_acc.len() as f64;
    Ok(OracleResult { per_client_acc, avg_test_acc, classifier: w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedot_core::Matrix;

    #[test]
    fn shifted_mean_exact_for_identical_inputs() {
        let a = ClassifierParams::Linear { w: Matrix::filled(2, 2, 0.1), b: Matrix::filled(2, 1, 0.7) };
        assert_eq!(shifted_mean(&[&a, &a, &a]), a);
        assert_eq!(shifted_mean(&[&a]), a);
    }

    #[test]
    fn shifted_mean_averages() {
        let a = ClassifierParams::Linear { w: Matrix::filled(1, 1, 1.0), b: Matrix::filled(1, 1, 0.0) };
        let b = ClassifierParams::Linear { w: Matrix::filled(1, 1, 3.0), b: Matrix::filled(1, 1, 4.0) };
        let ClassifierParams::Linear { w, b } = shifted_mean(&[&a, &b]) else { unreachable!() };
        assert_eq!((w[(0, 0)], b[(0, 0)]), (2.0, 2.0));
    }

    #[test]
    fn sampler_covers_epoch_without_replacement() {
        let mut s = BatchSampler::new(RngStream::new(1, 2), 10, 5);
        let mut seen: Vec<usize> = s.next_batch().into_iter().chain(s.next_batch()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn interpolation_is_elementwise_mean() {
        let a = ClassifierParams::Linear { w: Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap(), b: Matrix::column(&[0.5]) };
        let b = ClassifierParams::Linear { w: Matrix::from_rows(&[vec![3.0, 2.0]]).unwrap(), b: Matrix::column(&[-0.5]) };
        let ClassifierParams::Linear { w, b } = interpolate_classifiers(&a, &b) else { unreachable!() };
        assert_eq!(w.as_slice(), &[2.0, 0.0]);
        assert_eq!(b.as_slice(), &[0.0]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("L-FedAvg".parse::<Method>().unwrap(), Method::LFedAvg);
        assert!("fedprox".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FederationConfig::default().validate().is_ok());
        assert!(FederationConfig { total_iters: 7, tau: 5, ..Default::default() }.validate().is_err());
        assert!(FederationConfig { batch: 200, ..Default::default() }.validate().is_err());
        assert!(FederationConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(FederationConfig { eta1: 0.0, ..Default::default() }.validate().is_err());
    }
}
