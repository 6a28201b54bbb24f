//! Experiment plans: a flat `key = value` file with `[section]` headers.
//!
//! ```text
//! # comment
//! [plan]
//! output  = results        # directory for results.csv, summary.txt, summary.json
//! methods = fedot, fedavg  # grid axes are comma-separated lists
//! m       = 50, 100
//! tau     = 1, 5
//! seeds   = 0, 1, 2
//!
//! [task]
//! kind = affine            # affine | color
//! n = 20
//! d = 10
//!
//! [train]
//! total_iters = 2000
//! eta1 = 0.002
//! ```
//!
//! Every key is optional except `methods`, `m`, `tau` and `seeds`. Unknown
//! sections or keys, repeated keys and malformed values are errors that
//! name the line.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use fedsim::sim::ObjectiveKind;
use fedsim::{AvgMode, ClassifierKind, FederationConfig, Method, PotentialKind, ShiftKind, TransportKind};

use crate::LabError;

/// Base task and shift family shared by every grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSettings {
    pub kind: ShiftKind,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub n_test: usize,
    pub separation: f64,
    pub offset: f64,
    pub noise: f64,
    /// Standard deviation of the affine translations.
    pub shift_scale: f64,
}

impl Default for TaskSettings {
    fn default() -> Self {
        Self { kind: ShiftKind::Affine, n: 20, d: 10, k: 3, n_test: 100, separation: 2.0, offset: 3.0, noise: 0.6, shift_scale: 1.0 }
    }
}

/// One grid cell: a fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub config: FederationConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub output: PathBuf,
    pub task: TaskSettings,
    /// Training settings before the grid axes are filled in.
    pub template: FederationConfig,
    pub methods: Vec<Method>,
    pub ms: Vec<usize>,
    pub taus: Vec<usize>,
    pub seeds: Vec<u64>,
    pub write_json: bool,
}

/// Upper bounds beyond which a plan is refused as a resource problem.
pub const MAX_GRID: usize = 10_000;
pub const MAX_CLIENTS: usize = 10_000;
pub const MAX_SAMPLES: usize = 10_000_000;
pub const MAX_ITERS: usize = 100_000_000;

impl ExperimentPlan {
    /// Method × m × τ × seed, in that nesting order.
    pub fn runs(&self) -> Vec<PlannedRun> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &m in &self.ms {
                for &tau in &self.taus {
                    for &seed in &self.seeds {
                        out.push(PlannedRun { config: FederationConfig { method, m, tau, seed, ..self.template.clone() } });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let cells = self.methods.len() * self.ms.len() * self.taus.len() * self.seeds.len();
        if cells == 0 {
            return Err(LabError::Validation("the experiment grid is empty".into()));
        }
        if cells > MAX_GRID {
            return Err(LabError::Resource(format!("grid has {cells} runs, the cap is {MAX_GRID}")));
        }
        let t = &self.task;
        if t.n == 0 || t.d == 0 || t.k < 2 || t.n_test == 0 {
            return Err(LabError::Validation("task needs n ≥ 1, d ≥ 1, k ≥ 2 and n_test ≥ 1".into()));
        }
        if t.n > MAX_CLIENTS {
            return Err(LabError::Resource(format!("{} clients exceed the cap of {MAX_CLIENTS}", t.n)));
        }
        let biggest_m = self.ms.iter().copied().max().unwrap_or(0);
        if t.n.saturating_mul(biggest_m + t.n_test).saturating_mul(t.d) > MAX_SAMPLES {
            return Err(LabError::Resource(format!("n·(m + n_test)·d exceeds the cap of {MAX_SAMPLES} stored values")));
        }
        if self.template.total_iters > MAX_ITERS {
            return Err(LabError::Resource(format!("total_iters exceeds the cap of {MAX_ITERS}")));
        }
        for run in self.runs() {
            run.config.validate().map_err(|e| LabError::Validation(format!("{} m={} tau={} seed={}: {e}", run.config.method, run.config.m, run.config.tau, run.config.seed)))?;
        }
        Ok(())
    }
}

type Sections = BTreeMap<String, BTreeMap<String, (usize, String)>>;

fn tokenize(text: &str) -> Result<Sections, LabError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| LabError::Parse { line, message: "section header must end with ']'".into() })?.trim();
            if !["plan", "task", "train"].contains(&name) {
                return Err(LabError::Parse { line, message: format!("unknown section [{name}]") });
            }
            if sections.contains_key(name) {
                return Err(LabError::Parse { line, message: format!("section [{name}] appears twice") });
            }
            sections.insert(name.to_string(), BTreeMap::new());
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| LabError::Parse { line, message: format!("expected 'key = value', found '{body}'") })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(LabError::Parse { line, message: "empty key".into() });
        }
        let section = current.as_ref().ok_or_else(|| LabError::Parse { line, message: format!("key '{key}' outside any section") })?;
        let entries = sections.get_mut(section).expect("section registered on its header");
        if entries.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(LabError::Parse { line, message: format!("key '{key}' repeated in [{section}]") });
        }
    }
    Ok(sections)
}

struct Reader {
    section: &'static str,
    entries: BTreeMap<String, (usize, String)>,
}

impl Reader {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, LabError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| LabError::Parse { line, message: format!("[{}] {key}: {e}", self.section) }),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), LabError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, LabError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| LabError::Parse { line, message: format!("[{}] {key}: '{s}': {e}", self.section) }))
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    fn finish(self) -> Result<(), LabError> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(LabError::Parse { line, message: format!("unknown key '{key}' in [{}]", self.section) }),
        }
    }
}

/// `true`/`false`, `yes`/`no`, `1`/`0`.
#[derive(Debug, Clone, Copy)]
struct Flag(bool);

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(Flag(true)),
            "false" | "no" | "0" | "off" => Ok(Flag(false)),
            other => Err(format!("expected true or false, found '{other}'")),
        }
    }
}

fn parse_shift_kind(s: &str) -> Result<ShiftKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "affine" => Ok(ShiftKind::Affine),
        "color" | "colour" => Ok(ShiftKind::Color),
        other => Err(format!("unknown shift kind '{other}' (affine or color)")),
    }
}

struct Kind(ShiftKind);

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_shift_kind(s).map(Kind)
    }
}

pub fn parse_plan(text: &str) -> Result<ExperimentPlan, LabError> {
    let mut sections = tokenize(text)?;
    let mut reader = |section: &'static str| Reader { section, entries: sections.remove(section).unwrap_or_default() };

    let mut plan_sec = reader("plan");
    let output: PathBuf = plan_sec.take::<String>("output")?.unwrap_or_else(|| "results".into()).into();
    let methods = plan_sec.list::<Method>("methods")?;
    let ms = plan_sec.list::<usize>("m")?;
    let taus = plan_sec.list::<usize>("tau")?;
    let seeds = plan_sec.list::<u64>("seeds")?;
    let write_json = plan_sec.take::<Flag>("json")?.is_none_or(|f| f.0);
    plan_sec.finish()?;

    let missing = |key: &str| LabError::Validation(format!("[plan] needs '{key}'"));
    let methods = methods.ok_or_else(|| missing("methods"))?;
    let ms = ms.ok_or_else(|| missing("m"))?;
    let taus = taus.ok_or_else(|| missing("tau"))?;
    let seeds = seeds.ok_or_else(|| missing("seeds"))?;

    let mut task = TaskSettings::default();
    let mut t = reader("task");
    if let Some(Kind(k)) = t.take("kind")? {
        task.kind = k;
    }
    t.set("n", &mut task.n)?;
    t.set("d", &mut task.d)?;
    t.set("k", &mut task.k)?;
    t.set("n_test", &mut task.n_test)?;
    t.set("separation", &mut task.separation)?;
    t.set("offset", &mut task.offset)?;
    t.set("noise", &mut task.noise)?;
    t.set("shift_scale", &mut task.shift_scale)?;
    t.finish()?;

    let mut c = FederationConfig { n: task.n, ..FederationConfig::default() };
    let mut r = reader("train");
    r.set("total_iters", &mut c.total_iters)?;
    r.set("eta1", &mut c.eta1)?;
    r.set("eta2", &mut c.eta2)?;
    r.set("lambda", &mut c.lambda)?;
    r.set("gamma", &mut c.gamma)?;
    r.set("batch", &mut c.batch)?;
    r.set("max_steps_per_min_step", &mut c.max_steps_per_min_step)?;
    r.set::<ObjectiveKind>("objective", &mut c.objective)?;
    r.set::<AvgMode>("avg_mode", &mut c.avg_mode)?;
    r.set::<ClassifierKind>("classifier", &mut c.classifier)?;
    r.set::<TransportKind>("transport", &mut c.transport)?;
    r.set::<PotentialKind>("potential", &mut c.potential)?;
    r.set("finetune_steps", &mut c.finetune_steps)?;
    r.set("proxy_every", &mut c.proxy_every)?;
    r.set("proxy_burst", &mut c.proxy_burst)?;
    for (key, slot) in [("keep_psi_norm", &mut c.keep_psi_norm), ("train_transport", &mut c.train_transport), ("timing", &mut c.timing)] {
        if let Some(Flag(v)) = r.take(key)? {
            *slot = v;
        }
    }
    r.finish()?;

    let plan = ExperimentPlan { output, task, template: c, methods, ms, taus, seeds, write_json };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[plan]\nmethods = fedot, fedavg\nm = 20\ntau = 5\nseeds = 0, 1\n[task]\nn = 3\nd = 2\n[train]\ntotal_iters = 10\nbatch = 5\n";

    #[test]
    fn minimal_plan_expands_the_grid() {
        let plan = parse_plan(MINIMAL).unwrap();
        let runs = plan.runs();
        assert_eq!(runs.len(), 4);
        assert_eq!(runs[1].config.method, Method::FedOT);
        assert_eq!(runs[1].config.seed, 1);
        assert_eq!(runs[2].config.method, Method::FedAvg);
        assert!(runs.iter().all(|r| r.config.n == 3 && r.config.total_iters == 10));
    }

    #[test]
    fn errors_name_the_line() {
        let bad = MINIMAL.replace("batch = 5", "batch = five");
        let LabError::Parse { line, .. } = parse_plan(&bad).unwrap_err() else { panic!() };
        assert_eq!(line, 11);
        let LabError::Parse { line, .. } = parse_plan(&format!("{MINIMAL}bogus = 1\n")).unwrap_err() else { panic!() };
        assert_eq!(line, 12);
        assert!(matches!(parse_plan("tau = 1\n"), Err(LabError::Parse { line: 1, .. })));
        assert!(matches!(parse_plan(&MINIMAL.replace("seeds = 0, 1", "seeds =")), Err(LabError::Validation(_))));
        assert!(matches!(parse_plan(&MINIMAL.replace("total_iters = 10", "total_iters = 7")), Err(LabError::Validation(_))));
    }
}
