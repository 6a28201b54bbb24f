//! The four subcommands. Each writes its report to `out` and returns an
//! error whose exit code the binary passes on.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedot_core::ot::{barycenter_value, io::read_dist, lift_support_potentials, nary_ot_exact_with_cap, pushforward_check, tuple_minimizer_support, DEFAULT_JOINT_CAP};
use fedot_core::{Cost, Dist, RngStream};
use fedsim::gradcheck::{run_suite, Fault, SuiteReport};
use fedsim::shift::{gen_client_shifts, make_federated_task};
use fedsim::{sim, BaseTaskSpec, FederatedTask};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::plan::{parse_plan, ExperimentPlan, TaskSettings};
use crate::results::{format_table, read_rows, rows_of, summarize, write_rows, ResultRow, SummaryCell};
use crate::LabError;

/// Environment variable capping worker threads.
pub const THREADS_VAR: &str = "FEDOTLAB_THREADS";
/// Largest primal/dual or primal/barycenter gap `ot-check` accepts.
pub const OT_GAP_TOL: f64 = 1e-6;
/// Coordinate perturbation used by `gradcheck --inject-fault`.
pub const FAULT_DELTA: f64 = 1e-3;

/// Parses [`THREADS_VAR`]; unset or empty means no cap.
pub fn thread_cap() -> Result<Option<usize>, LabError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(LabError::Validation(format!("{THREADS_VAR} must be a positive integer, got '{v}'"))),
            Ok(n) => Ok(Some(n)),
        },
    }
}

/// Base task, shifts and client samples for one (m, seed) cell. Every draw
/// comes from `seed`, so methods and step counts sharing a seed see the
/// same data.
pub fn build_task(settings: &TaskSettings, m: usize, seed: u64) -> Result<FederatedTask, LabError> {
    let root = RngStream::new(seed, 0).named("task");
    let t = settings;
    let base = BaseTaskSpec::synthetic(t.d, t.k, t.separation, t.offset, t.noise, m, t.n_test, root.named("base"))?;
    let shifts = gen_client_shifts(t.n, t.kind, t.d, t.shift_scale, root.named("shifts"))?;
    Ok(make_federated_task(&base, &shifts, root.named("draw"))?)
}

/// Runs every grid cell and returns the rows in plan order. Runs are spread
/// over at most `threads` workers, each run single-threaded, so the output
/// does not depend on the thread count.
pub fn execute_plan(plan: &ExperimentPlan, threads: Option<usize>) -> Result<Vec<ResultRow>, LabError> {
    plan.validate()?;
    let runs = plan.runs();
    let workers = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).min(runs.len()).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| LabError::Resource(format!("cannot start {workers} workers: {e}")))?;
    let total = runs.len();
    let outcomes: Vec<Result<Vec<ResultRow>, LabError>> = pool.install(|| {
        runs.par_iter()
            .enumerate()
            .map(|(idx, run)| {
                let config = fedsim::FederationConfig { threads: 1, ..run.config.clone() };
                let task = build_task(&plan.task, config.m, config.seed)?;
                let started = Instant::now();
                let history = sim::run(&config, &task)?;
                if history.diverged {
                    log::warn!("{} m={} tau={} seed={} diverged", config.method, config.m, config.tau, config.seed);
                }
                log::info!(
                    "[{}/{total}] {} m={} tau={} seed={}: accuracy {:.4} in {:.1}s",
                    idx + 1,
                    config.method,
                    config.m,
                    config.tau,
                    config.seed,
                    history.final_accuracy(),
                    started.elapsed().as_secs_f64()
                );
                Ok(rows_of(&history))
            })
            .collect()
    });
    let mut rows = Vec::new();
    for o in outcomes {
        rows.extend(o?);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    runs: usize,
    rows: usize,
    cells: &'a [SummaryCell],
}

/// `fedotlab run <plan>`: writes `results.csv`, `summary.txt` and, unless
/// disabled, `summary.json` into the plan's output directory. A relative
/// output directory is resolved against the plan file's directory.
pub fn cmd_run(plan_path: &Path, out: &mut dyn Write) -> Result<PathBuf, LabError> {
    let text = fs::read_to_string(plan_path).map_err(|e| LabError::Validation(format!("cannot read plan {}: {e}", plan_path.display())))?;
    let plan = parse_plan(&text)?;
    let dir = if plan.output.is_absolute() { plan.output.clone() } else { plan_path.parent().unwrap_or(Path::new(".")).join(&plan.output) };
    let rows = execute_plan(&plan, thread_cap()?)?;
    fs::create_dir_all(&dir)?;
    write_rows(&rows, fs::File::create(dir.join("results.csv"))?)?;
    let cells = summarize(&rows);
    let table = format_table(&cells);
    fs::write(dir.join("summary.txt"), &table)?;
    if plan.write_json {
        let summary = SummaryFile { runs: plan.runs().len(), rows: rows.len(), cells: &cells };
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    write!(out, "{table}")?;
    let diverged = cells.iter().map(|c| c.diverged_runs).sum::<usize>();
    writeln!(out, "{} runs, {} rows written to {}", plan.runs().len(), rows.len(), dir.display())?;
    if diverged > 0 {
        writeln!(out, "{diverged} runs diverged; their rows are flagged")?;
    }
    Ok(dir)
}

/// `fedotlab report <results.csv>`.
pub fn cmd_report(path: &Path, out: &mut dyn Write) -> Result<(), LabError> {
    let file = fs::File::open(path).map_err(|e| LabError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let rows = read_rows(file)?;
    if rows.is_empty() {
        return Err(LabError::Validation(format!("{} holds no rows", path.display())));
    }
    write!(out, "{}", format_table(&summarize(&rows)))?;
    Ok(())
}

/// Every route to the n-ary transport value for one instance.
#[derive(Debug, Clone)]
pub struct OtCheckReport {
    pub cost: Cost,
    pub primal: f64,
    pub barycenter: f64,
    /// Dual value of the lifted LP multipliers.
    pub dual: f64,
    /// Largest W1 distance between pushforwards; 1-D W2 only.
    pub pushforward: Option<f64>,
}

impl OtCheckReport {
    pub fn dual_gap(&self) -> f64 {
        (self.primal - self.dual).abs()
    }

    pub fn barycenter_gap(&self) -> f64 {
        (self.primal - self.barycenter).abs()
    }

    pub fn passed(&self) -> bool {
        self.dual_gap() <= OT_GAP_TOL && self.barycenter_gap() <= OT_GAP_TOL
    }
}

pub fn ot_check(dists: &[Dist], cost: Cost, cap: usize) -> Result<OtCheckReport, LabError> {
    if dists.len() < 2 {
        return Err(LabError::Validation(format!("need at least 2 distributions, got {}", dists.len())));
    }
    let primal = nary_ot_exact_with_cap(dists, cost, cap)?;
    let support = tuple_minimizer_support(dists, cost)?;
    let barycenter = barycenter_value(dists, cost, &support)?;
    let lifted = lift_support_potentials(dists, &primal.potentials, cost, support)?;
    let dual = fedot_core::ot::dual_value(dists, &lifted, cost)?;
    let pushforward = if cost == Cost::W2 && dists[0].dim() == 1 { Some(pushforward_check(dists)?) } else { None };
    Ok(OtCheckReport { cost, primal: primal.value, barycenter: barycenter.value, dual, pushforward })
}

/// `n` distributions of `k` atoms in `R^d`: standard normal points and
/// weights drawn from `[0.1, 1)` then normalised.
pub fn random_instance(n: usize, k: usize, d: usize, seed: u64) -> Result<Vec<Dist>, LabError> {
    if n < 2 || k == 0 || d == 0 {
        return Err(LabError::Validation("--random needs n ≥ 2, k ≥ 1 and d ≥ 1".into()));
    }
    let root = RngStream::new(seed, 0).named("ot-check");
    (0..n)
        .map(|i| {
            let mut rng = root.substream(i as u64).generator();
            let points = (0..k).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let weights = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            Ok(Dist::normalized(points, weights)?)
        })
        .collect()
}

pub enum OtInput {
    Files(Vec<PathBuf>),
    Random { n: usize, k: usize, d: usize, seed: u64 },
}

/// `fedotlab ot-check`: exit 2 when a gap exceeds [`OT_GAP_TOL`].
pub fn cmd_ot_check(input: &OtInput, cost: Cost, cap: Option<usize>, out: &mut dyn Write) -> Result<OtCheckReport, LabError> {
    let dists = match input {
        OtInput::Files(paths) => paths.iter().map(|p| read_dist(p).map_err(LabError::from)).collect::<Result<Vec<_>, _>>()?,
        &OtInput::Random { n, k, d, seed } => random_instance(n, k, d, seed)?,
    };
    let report = ot_check(&dists, cost, cap.unwrap_or(DEFAULT_JOINT_CAP))?;
    let sizes: Vec<String> = dists.iter().map(|p| p.len().to_string()).collect();
    writeln!(out, "marginals   {} in R^{} with {} atoms, cost {}", dists.len(), dists[0].dim(), sizes.join("/"), cost.name())?;
    writeln!(out, "primal      {:.12}", report.primal)?;
    writeln!(out, "barycenter  {:.12}  gap {:.3e}", report.barycenter, report.barycenter_gap())?;
    writeln!(out, "dual        {:.12}  gap {:.3e}", report.dual, report.dual_gap())?;
    if let Some(p) = report.pushforward {
        writeln!(out, "pushforward {p:.3e}")?;
    }
    if report.passed() {
        writeln!(out, "ok (tolerance {OT_GAP_TOL:e})")?;
        Ok(report)
    } else {
        Err(LabError::Numerical(format!("gap {:.3e} exceeds {OT_GAP_TOL:e}", report.dual_gap().max(report.barycenter_gap()))))
    }
}

/// `fedotlab gradcheck`: exit 2 when any block exceeds the tolerance.
pub fn cmd_gradcheck(seed: u64, points: usize, fault_block: Option<&str>, out: &mut dyn Write) -> Result<SuiteReport, LabError> {
    if points == 0 {
        return Err(LabError::Validation("--points must be positive".into()));
    }
    let fault = fault_block.map(|b| Fault { block: b.to_string(), delta: FAULT_DELTA });
    let report = run_suite(seed, points, fault.as_ref())?;
    if let Some(f) = &fault {
        if !report.blocks.iter().any(|b| b.name == f.block) {
            let names: Vec<&str> = report.blocks.iter().map(|b| b.name.as_str()).collect();
            return Err(LabError::Validation(format!("no block named '{}'; blocks are {}", f.block, names.join(", "))));
        }
    }
    let width = report.blocks.iter().map(|b| b.name.len()).max().unwrap_or(0);
    for b in &report.blocks {
        let status = if b.max_rel_err <= report.tolerance { "ok" } else { "FAIL" };
        writeln!(out, "{:<width$}  {:.3e}  coord {:>3}  {status}", b.name, b.max_rel_err, b.worst_coordinate)?;
    }
    let worst = report.worst().map_or(0.0, |b| b.max_rel_err);
    writeln!(out, "{} blocks, {} points each, worst {:.3e}, tolerance {:e}", report.blocks.len(), points, worst, report.tolerance)?;
    if report.passed() {
        Ok(report)
    } else {
        let failing: Vec<&str> = report.blocks.iter().filter(|b| b.max_rel_err > report.tolerance).map(|b| b.name.as_str()).collect();
        Err(LabError::Numerical(format!("gradient mismatch in {}", failing.join(", "))))
    }
}
