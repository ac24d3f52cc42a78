//! Replicated experiments over `(d, T)` grids: configuration, seeding,
//! concurrent execution, aggregation and file output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::{benchmark_instance, constant_price_instance, discrete_example_instance, Instance};
use crate::error::{Error, Result};
use crate::policy::{
    default_eta_max, doubling_run, plan_experiment, plan_general, plan_simple, run_with, Plan, Planner,
    PolicyKind, RegretTrace, RunOptions, DEFAULT_C0, DEFAULT_T0,
};
use crate::spectrum::SpectrumSummary;

/// Policy index used for the environment stream, shared by all policies of a trial.
pub const ENVIRONMENT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSpec {
    /// Constant-plus-uniform contexts with the benchmark ground truth.
    Benchmark { sigma: f64 },
    /// Optimal price constant in the context (`d ∈ {1, 2}`).
    ConstantPrice { sigma: f64 },
    DiscreteExample { sigma: f64 },
    /// A fully specified instance; its dimension must match every grid `d`.
    Custom { instance: Instance },
}

impl InstanceSpec {
    pub fn build(&self, d: usize) -> Result<Instance> {
        match self {
            InstanceSpec::Benchmark { sigma } => benchmark_instance(d, *sigma),
            InstanceSpec::ConstantPrice { sigma } => constant_price_instance(d, *sigma),
            InstanceSpec::DiscreteExample { sigma } => discrete_example_instance(d, *sigma),
            InstanceSpec::Custom { instance } => {
                if instance.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: instance.dim(),
                        got: d,
                    });
                }
                Ok(instance.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    Letc,
    /// Burn-in length taken from the planner's `T1`.
    Etc,
    Greedy,
    Oracle,
    /// Decaying perturbation radius, no commit stage.
    Timevarying,
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Letc => "letc",
            PolicySpec::Etc => "etc",
            PolicySpec::Greedy => "greedy",
            PolicySpec::Oracle => "oracle",
            PolicySpec::Timevarying => "timevarying",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    Simple,
    General,
    Experiment,
    Timevarying,
}

impl std::str::FromStr for PlannerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(PlannerMode::Simple),
            "general" => Ok(PlannerMode::General),
            "experiment" => Ok(PlannerMode::Experiment),
            "timevarying" => Ok(PlannerMode::Timevarying),
            other => Err(Error::InvalidArgument(format!("unknown planner mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub mode: PlannerMode,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub kappa: f64,
    /// Defaults to a quarter of the price range.
    pub eta_max: Option<f64>,
    /// Monte Carlo samples for the general planner's spectrum.
    pub spectrum_samples: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            mode: PlannerMode::Experiment,
            c0: DEFAULT_C0,
            c1: 10.0,
            c2: 0.005,
            c3: 0.5,
            kappa: 1.0,
            eta_max: None,
            spectrum_samples: 200_000,
        }
    }
}

impl PlannerConfig {
    /// A reusable planner for instances of dimension `d`.
    pub fn planner(&self, instance: &Instance, seed: u64) -> Result<Planner> {
        let eta_max = self.eta_max.unwrap_or_else(|| default_eta_max(&instance.bounds));
        Ok(match self.mode {
            PlannerMode::Simple | PlannerMode::Timevarying => Planner::Simple { c0: self.c0, eta_max },
            PlannerMode::Experiment => Planner::Experiment {
                c1: self.c1,
                c2: self.c2,
                c3: self.c3,
            },
            PlannerMode::General => Planner::General {
                kappa: self.kappa,
                eta_max,
                summary: SpectrumSummary::estimate(instance, self.spectrum_samples, seed)?,
            },
        })
    }

    pub fn plan(&self, instance: &Instance, horizon: usize, seed: u64) -> Result<Plan> {
        let d = instance.dim();
        let eta_max = self.eta_max.unwrap_or_else(|| default_eta_max(&instance.bounds));
        match self.mode {
            PlannerMode::Simple | PlannerMode::Timevarying => plan_simple(horizon, d, self.c0, eta_max),
            PlannerMode::Experiment => plan_experiment(horizon, d, self.c1, self.c2, self.c3),
            PlannerMode::General => {
                let s = SpectrumSummary::estimate(instance, self.spectrum_samples, seed)?;
                plan_general(horizon, d, &s, self.kappa, eta_max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub write_traces: bool,
    /// Emit every `trace_stride`-th step of each trace (the last step always).
    pub trace_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            write_traces: true,
            trace_stride: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub policies: Vec<PolicySpec>,
    pub planner: PlannerConfig,
    pub d_grid: Vec<usize>,
    pub t_grid: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Doubling base horizon.
    pub t0: usize,
    /// Number of largest `T` values used for the log–log slope.
    pub slope_window: usize,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale grid: `d ∈ {4, 8, 16}`, `T ∈ {2⁷, …, 2¹⁵}`, 20 trials.
    pub fn desk() -> Self {
        Self {
            instance: InstanceSpec::Benchmark { sigma: 0.01 },
            policies: vec![PolicySpec::Letc],
            planner: PlannerConfig::default(),
            d_grid: vec![4, 8, 16],
            t_grid: (7..=15).map(|k| 1usize << k).collect(),
            trials: 20,
            base_seed: 20_240_601,
            workers: None,
            t0: DEFAULT_T0,
            slope_window: 4,
            output: OutputConfig::default(),
        }
    }

    /// Full grid: `d ∈ {4, …, 64}`, `T ∈ {2⁷, …, 2¹⁷}`, 100 trials.
    pub fn full() -> Self {
        Self {
            d_grid: vec![4, 8, 16, 32, 64],
            t_grid: (7..=17).map(|k| 1usize << k).collect(),
            trials: 100,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_grid.is_empty() || self.t_grid.is_empty() || self.policies.is_empty() {
            return Err(Error::InvalidArgument("grids and policy list must be non-empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.d_grid.contains(&0) || self.t_grid.iter().any(|&t| t < 3) {
            return Err(Error::InvalidArgument("need d >= 1 and T >= 3".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one trial: splitmix64 applied after folding in each field in turn.
pub fn trial_seed(base: u64, d: u64, horizon: u64, policy_index: u64, trial_index: u64) -> u64 {
    [d, horizon, policy_index, trial_index]
        .iter()
        .fold(splitmix64(base), |h, &field| splitmix64(h ^ field))
}

/// Result of one `(policy, d, T, trial)` task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub policy: PolicySpec,
    pub d: usize,
    pub horizon: usize,
    pub trial: usize,
    pub env_seed: u64,
    pub policy_seed: u64,
    pub outcome: std::result::Result<TrialOutcome, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub cumulative: Vec<f64>,
    pub final_regret: f64,
    pub plan: Option<Plan>,
    pub singular_fits: usize,
    pub fallback_prices: usize,
    pub clip_activations: usize,
    pub horizon_too_short: bool,
    pub stage_ends: Vec<usize>,
}

impl TrialOutcome {
    fn from_trace(trace: RegretTrace, plan: Option<Plan>) -> Self {
        Self {
            final_regret: trace.total_regret(),
            plan,
            singular_fits: trace.diagnostics.singular_fits,
            fallback_prices: trace.diagnostics.fallback_prices,
            clip_activations: trace.diagnostics.clip_activations,
            horizon_too_short: trace.diagnostics.horizon_too_short,
            stage_ends: trace.stages.iter().map(|s| s.end).collect(),
            cumulative: trace.cumulative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResults {
    pub trials: Vec<TrialResult>,
}

struct Task {
    policy_index: usize,
    policy: PolicySpec,
    d: usize,
    horizon: usize,
    trial: usize,
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn policy_for(spec: PolicySpec, plan: &Plan, instance: &Instance, planner: &PlannerConfig) -> PolicyKind {
    match spec {
        PolicySpec::Letc => PolicyKind::LetC(*plan),
        PolicySpec::Etc => PolicyKind::Etc { t1: plan.t1 },
        PolicySpec::Greedy => PolicyKind::Greedy,
        PolicySpec::Oracle => PolicyKind::Oracle,
        PolicySpec::Timevarying => PolicyKind::TimeVaryingEta {
            eta_max: planner.eta_max.unwrap_or_else(|| default_eta_max(&instance.bounds)),
        },
    }
}

/// Runs every `(policy, d, T, trial)` cell. Failures are recorded per trial.
pub fn run_grid(config: &ExperimentConfig) -> Result<RawResults> {
    config.validate()?;
    let mut instances = BTreeMap::new();
    for &d in &config.d_grid {
        instances.insert(d, config.instance.build(d)?);
    }
    // Plans depend on (d, T) only.
    let mut plans: BTreeMap<(usize, usize), std::result::Result<Plan, String>> = BTreeMap::new();
    for (&d, inst) in &instances {
        for &t in &config.t_grid {
            let seed = trial_seed(config.base_seed, d as u64, 0, ENVIRONMENT_STREAM, 0);
            plans.insert((d, t), config.planner.plan(inst, t, seed).map_err(|e| e.to_string()));
        }
    }
    let mut tasks = Vec::new();
    for (policy_index, &policy) in config.policies.iter().enumerate() {
        for &d in &config.d_grid {
            for &horizon in &config.t_grid {
                for trial in 0..config.trials {
                    tasks.push(Task {
                        policy_index,
                        policy,
                        d,
                        horizon,
                        trial,
                    });
                }
            }
        }
    }
    let trials = with_workers(config.workers, || {
        tasks
            .par_iter()
            .map(|task| run_task(config, task, &instances[&task.d], &plans[&(task.d, task.horizon)]))
            .collect::<Vec<_>>()
    })?;
    Ok(RawResults { trials })
}

fn run_task(
    config: &ExperimentConfig,
    task: &Task,
    instance: &Instance,
    plan: &std::result::Result<Plan, String>,
) -> TrialResult {
    let (d, t, trial) = (task.d as u64, task.horizon as u64, task.trial as u64);
    let env_seed = trial_seed(config.base_seed, d, t, ENVIRONMENT_STREAM, trial);
    let policy_seed = trial_seed(config.base_seed, d, t, task.policy_index as u64, trial);
    let outcome = plan.clone().and_then(|plan| {
        let policy = policy_for(task.policy, &plan, instance, &config.planner);
        let mut env = instance.environment(env_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
        let plan_used = matches!(task.policy, PolicySpec::Letc | PolicySpec::Etc).then_some(plan);
        run_with(&policy, &mut env, task.horizon, &mut rng, &RunOptions::default())
            .map(|trace| TrialOutcome::from_trace(trace, plan_used))
            .map_err(|e| e.to_string())
    });
    TrialResult {
        policy: task.policy,
        d: task.d,
        horizon: task.horizon,
        trial: task.trial,
        env_seed,
        policy_seed,
        outcome,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub policy: PolicySpec,
    pub d: usize,
    pub horizon: usize,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    pub failures: usize,
    /// Only one successful trial: `std` is 0 by convention.
    pub single_trial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeStats {
    pub policy: PolicySpec,
    pub d: usize,
    /// `None` when fewer than two usable points are in the window.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub cells: Vec<CellStats>,
    pub slopes: Vec<SlopeStats>,
}

impl AggregateResult {
    pub fn cell(&self, policy: PolicySpec, d: usize, horizon: usize) -> Option<&CellStats> {
        self.cells
            .iter()
            .find(|c| c.policy == policy && c.d == d && c.horizon == horizon)
    }

    pub fn slope(&self, policy: PolicySpec, d: usize) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.policy == policy && s.d == d)
            .and_then(|s| s.slope)
    }
}

/// Mean and `n − 1` standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Per-cell statistics of the final cumulative regret, in grid order, and the
/// log–log slope over the `window` largest horizons.
pub fn aggregate(raw: &RawResults, window: usize) -> AggregateResult {
    let mut groups: BTreeMap<(PolicySpec, usize, usize), (Vec<(usize, f64)>, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in &raw.trials {
        let key = (r.policy, r.d, r.horizon);
        let entry = groups.entry(key).or_insert_with(|| {
            order.push(key);
            (Vec::new(), 0)
        });
        match &r.outcome {
            Ok(o) => entry.0.push((r.trial, o.final_regret)),
            Err(_) => entry.1 += 1,
        }
    }
    let mut cells = Vec::with_capacity(order.len());
    for key in &order {
        let (values, failures) = &groups[key];
        // Fixed summation order makes the result independent of trial order.
        let mut values = values.clone();
        values.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let v: Vec<f64> = values.iter().map(|x| x.1).collect();
        let (mean, std) = mean_std(&v);
        cells.push(CellStats {
            policy: key.0,
            d: key.1,
            horizon: key.2,
            mean,
            std,
            trials: v.len(),
            failures: *failures,
            single_trial: v.len() == 1,
        });
    }
    let mut slopes = Vec::new();
    let mut seen = Vec::new();
    for c in &cells {
        if seen.contains(&(c.policy, c.d)) {
            continue;
        }
        seen.push((c.policy, c.d));
        let mut pts: Vec<(f64, f64)> = cells
            .iter()
            .filter(|x| x.policy == c.policy && x.d == c.d && x.trials > 0)
            .map(|x| (x.horizon as f64, x.mean))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let tail = &pts[pts.len().saturating_sub(window)..];
        slopes.push(SlopeStats {
            policy: c.policy,
            d: c.d,
            slope: loglog_slope(tail).ok(),
        });
    }
    AggregateResult { cells, slopes }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "slope needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0)) {
        return Err(Error::InvalidArgument("log-log slope needs positive values".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all x values coincide".into()));
    }
    Ok(sxy / sxx)
}

pub const TRACE_HEADER: [&str; 6] = ["policy", "d", "T", "trial", "t", "cum_regret"];
pub const AGGREGATE_HEADER: [&str; 6] = ["policy", "d", "T", "mean", "std", "slope"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: String,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub mean: f64,
    pub std: f64,
    pub slope: Option<f64>,
}

pub fn aggregate_rows(agg: &AggregateResult) -> Vec<AggregateRow> {
    agg.cells
        .iter()
        .map(|c| AggregateRow {
            policy: c.policy.name().to_string(),
            d: c.d,
            horizon: c.horizon,
            mean: c.mean,
            std: c.std,
            slope: agg.slope(c.policy, c.d),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmittedFiles {
    pub traces: Option<PathBuf>,
    pub aggregates: PathBuf,
    pub json: PathBuf,
}

#[derive(Serialize, Deserialize)]
pub struct JsonReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub aggregate: AggregateResult,
    pub failures: Vec<String>,
}

/// Writes `traces.csv`, `aggregates.csv` and `results.json` under `output.dir`.
pub fn emit(config: &ExperimentConfig, raw: &RawResults, agg: &AggregateResult) -> Result<EmittedFiles> {
    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let traces = if config.output.write_traces {
        let path = dir.join("traces.csv");
        write_traces(&path, raw, config.output.trace_stride.max(1))?;
        Some(path)
    } else {
        None
    };
    let aggregates = dir.join("aggregates.csv");
    write_aggregates(&aggregates, agg)?;
    let json = dir.join("results.json");
    let failures = raw
        .trials
        .iter()
        .filter_map(|t| {
            t.outcome.as_ref().err().map(|e| {
                format!("{} d={} T={} trial={}: {e}", t.policy.name(), t.d, t.horizon, t.trial)
            })
        })
        .collect();
    let report = JsonReport {
        config: config.clone(),
        config_hash: config.hash()?,
        aggregate: agg.clone(),
        failures,
    };
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(EmittedFiles {
        traces,
        aggregates,
        json,
    })
}

fn write_traces(path: &Path, raw: &RawResults, stride: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(TRACE_HEADER).map_err(|e| Error::csv(path, e))?;
    for r in &raw.trials {
        let Ok(o) = &r.outcome else { continue };
        let n = o.cumulative.len();
        for (i, c) in o.cumulative.iter().enumerate() {
            let t = i + 1;
            if t % stride != 0 && t != n {
                continue;
            }
            w.write_record([
                r.policy.name().to_string(),
                r.d.to_string(),
                r.horizon.to_string(),
                r.trial.to_string(),
                t.to_string(),
                c.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_aggregates(path: &Path, agg: &AggregateResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for row in aggregate_rows(agg) {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_aggregates(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::InvalidRecord {
                line: i + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_report(path: &Path) -> Result<JsonReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One doubling-trick trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingResult {
    pub d: usize,
    pub trial: usize,
    pub cumulative: Vec<f64>,
    pub segment_ends: Vec<usize>,
}

/// Doubling runs of LetC for every grid `d` up to `total` steps.
pub fn run_doubling(config: &ExperimentConfig, total: usize) -> Result<Vec<DoublingResult>> {
    config.validate()?;
    let mut tasks = Vec::new();
    for &d in &config.d_grid {
        let inst = config.instance.build(d)?;
        let planner = config
            .planner
            .planner(&inst, trial_seed(config.base_seed, d as u64, 0, ENVIRONMENT_STREAM, 0))?;
        for trial in 0..config.trials {
            tasks.push((d, trial, inst.clone(), planner.clone()));
        }
    }
    with_workers(config.workers, || {
        tasks
            .par_iter()
            .map(|(d, trial, inst, planner)| {
                let (du, tu) = (*d as u64, *trial as u64);
                let mut env = inst.environment(trial_seed(config.base_seed, du, total as u64, ENVIRONMENT_STREAM, tu));
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.base_seed, du, total as u64, 0, tu));
                let trace = doubling_run(planner, &mut env, total, config.t0, &mut rng)?;
                Ok(DoublingResult {
                    d: *d,
                    trial: *trial,
                    cumulative: trace.cumulative,
                    segment_ends: trace.segment_ends,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Mean cumulative regret at each segment end, per `d`.
pub fn doubling_segment_means(results: &[DoublingResult]) -> BTreeMap<usize, Vec<(usize, f64)>> {
    let mut by_d: BTreeMap<usize, Vec<&DoublingResult>> = BTreeMap::new();
    for r in results {
        by_d.entry(r.d).or_default().push(r);
    }
    by_d.into_iter()
        .map(|(d, rs)| {
            let ends = rs[0].segment_ends.clone();
            let means = ends
                .iter()
                .map(|&e| {
                    let v: Vec<f64> = rs.iter().map(|r| r.cumulative[e - 1]).collect();
                    (e, mean_std(&v).0)
                })
                .collect();
            (d, means)
        })
        .collect()
}

pub const DOUBLING_HEADER: [&str; 4] = ["d", "trial", "t", "cum_regret"];

pub fn write_doubling(path: &Path, results: &[DoublingResult], stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(DOUBLING_HEADER).map_err(|e| Error::csv(path, e))?;
    for r in results {
        let n = r.cumulative.len();
        for (i, c) in r.cumulative.iter().enumerate() {
            let t = i + 1;
            if t % stride == 0 || t == n || r.segment_ends.contains(&t) {
                w.write_record([r.d.to_string(), r.trial.to_string(), t.to_string(), c.to_string()])
                    .map_err(|e| Error::csv(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            policies: vec![PolicySpec::Letc, PolicySpec::Oracle, PolicySpec::Greedy],
            d_grid: vec![4],
            t_grid: vec![128, 256, 512],
            trials: 2,
            output: OutputConfig {
                dir: dir.to_path_buf(),
                write_traces: true,
                trace_stride: 1,
            },
            ..ExperimentConfig::desk()
        }
    }

    #[test]
    fn seeds_are_stable_and_sensitive() {
        assert_eq!(trial_seed(1, 4, 128, 0, 3), trial_seed(1, 4, 128, 0, 3));
        assert_ne!(trial_seed(1, 4, 128, 0, 3), trial_seed(1, 4, 128, 0, 4));
        let mut seen = std::collections::HashSet::new();
        for d in [4u64, 8, 16, 32, 64] {
            for k in 7..=17u32 {
                for p in 0..2u64 {
                    for trial in 0..100u64 {
                        assert!(seen.insert(trial_seed(7, d, 1 << k, p, trial)));
                    }
                }
            }
        }
        assert_eq!(seen.len(), 11_000);
    }

    #[test]
    fn slope_examples() {
        let pts: Vec<(f64, f64)> = (7..=10).map(|k| (2f64.powi(k), 3.0 * 2f64.powi(k).sqrt())).collect();
        assert!((loglog_slope(&pts).unwrap() - 0.5).abs() < 1e-9);
        let lin: Vec<(f64, f64)> = (7..=10).map(|k| (2f64.powi(k), 0.2 * 2f64.powi(k))).collect();
        assert!((loglog_slope(&lin).unwrap() - 1.0).abs() < 1e-12);
        let two = [(10.0, 3.0), (40.0, 12.0 * 2.0)];
        let want = (24f64 / 3.0).ln() / 4f64.ln();
        assert!((loglog_slope(&two).unwrap() - want).abs() < 1e-12);
        assert!(loglog_slope(&[(1.0, 1.0)]).is_err());
        assert!(loglog_slope(&[(1.0, 1.0), (2.0, 0.0)]).is_err());
    }

    #[test]
    fn mean_std_examples() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    fn fake_raw(values: &[(usize, f64)]) -> RawResults {
        RawResults {
            trials: values
                .iter()
                .map(|&(trial, v)| TrialResult {
                    policy: PolicySpec::Letc,
                    d: 4,
                    horizon: 100,
                    trial,
                    env_seed: 0,
                    policy_seed: 0,
                    outcome: Ok(TrialOutcome {
                        cumulative: vec![v],
                        final_regret: v,
                        plan: None,
                        singular_fits: 0,
                        fallback_prices: 0,
                        clip_activations: 0,
                        horizon_too_short: false,
                        stage_ends: vec![],
                    }),
                })
                .collect(),
        }
    }

    #[test]
    fn aggregate_examples() {
        let agg = aggregate(&fake_raw(&[(0, 1.0), (1, 3.0)]), 4);
        let c = agg.cell(PolicySpec::Letc, 4, 100).unwrap();
        assert_eq!((c.mean, c.trials, c.single_trial), (2.0, 2, false));
        assert!((c.std - 2f64.sqrt()).abs() < 1e-15);
        let one = aggregate(&fake_raw(&[(0, 7.0)]), 4);
        let c = &one.cells[0];
        assert_eq!((c.std, c.single_trial), (0.0, true));
        assert_eq!(one.slopes[0].slope, None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn aggregate_is_permutation_invariant(vals in proptest::collection::vec(0.0f64..100.0, 1..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let items: Vec<(usize, f64)> = vals.iter().copied().enumerate().collect();
            let mut shuffled = items.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate(&fake_raw(&items), 4), aggregate(&fake_raw(&shuffled), 4));
        }
    }

    #[test]
    fn grid_is_deterministic_and_oracle_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let a = run_grid(&config).unwrap();
        let b = run_grid(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 3 * 3 * 2);
        for t in a.trials.iter().filter(|t| t.policy == PolicySpec::Oracle) {
            let o = t.outcome.as_ref().unwrap();
            assert!(o.cumulative.iter().all(|&c| c == 0.0));
        }
        // Every policy of a trial sees the same environment stream.
        let letc = &a.trials[0];
        let oracle = a.trials.iter().find(|t| t.policy == PolicySpec::Oracle).unwrap();
        assert_eq!(letc.env_seed, oracle.env_seed);
        assert_ne!(letc.policy_seed, oracle.policy_seed);
    }

    #[test]
    fn emitted_files_round_trip_and_ignore_worker_count() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let mut c1 = small_config(d1.path());
        c1.workers = Some(1);
        let mut c2 = small_config(d2.path());
        c2.workers = Some(4);
        let raw1 = run_grid(&c1).unwrap();
        let agg1 = aggregate(&raw1, 4);
        let f1 = emit(&c1, &raw1, &agg1).unwrap();
        let raw2 = run_grid(&c2).unwrap();
        let f2 = emit(&c2, &raw2, &aggregate(&raw2, 4)).unwrap();
        for (a, b) in [(f1.traces.clone().unwrap(), f2.traces.unwrap()), (f1.aggregates.clone(), f2.aggregates)] {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }

        let text = fs::read_to_string(&f1.aggregates).unwrap();
        assert_eq!(text.lines().next().unwrap(), AGGREGATE_HEADER.join(","));
        let traces = fs::read_to_string(f1.traces.as_ref().unwrap()).unwrap();
        assert_eq!(traces.lines().next().unwrap(), TRACE_HEADER.join(","));
        assert_eq!(read_aggregates(&f1.aggregates).unwrap(), aggregate_rows(&agg1));

        let report = read_report(&f1.json).unwrap();
        assert_eq!(report.config_hash, report.config.hash().unwrap());
        assert_eq!(report.config, c1);
        assert_eq!(report.aggregate, agg1);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            policies: vec![PolicySpec::Timevarying, PolicySpec::Oracle],
            d_grid: vec![4],
            t_grid: vec![16],
            trials: 1,
            ..small_config(dir.path())
        };
        // The time-varying burn-in of 4d = 16 steps leaves no exploitation; it still runs.
        let raw = run_grid(&config).unwrap();
        assert_eq!(raw.trials.len(), 2);

        let bad = ExperimentConfig {
            instance: InstanceSpec::ConstantPrice { sigma: 0.1 },
            d_grid: vec![4],
            ..small_config(dir.path())
        };
        assert!(run_grid(&bad).is_err());
        let mut empty = small_config(dir.path());
        empty.t_grid.clear();
        assert!(run_grid(&empty).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = ExperimentConfig::full();
        let text = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"trials": 3, "planner": {"mode": "simple"}}"#).unwrap();
        assert_eq!(partial.trials, 3);
        assert_eq!(partial.planner.mode, PlannerMode::Simple);
        assert_eq!(partial.d_grid, vec![4, 8, 16]);
        assert_eq!("general".parse::<PlannerMode>().unwrap(), PlannerMode::General);
        assert!("bogus".parse::<PlannerMode>().is_err());
    }

    #[test]
    fn doubling_grid_reports_segments() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            trials: 2,
            ..small_config(dir.path())
        };
        let res = run_doubling(&config, 896).unwrap();
        assert_eq!(res.len(), 2);
        assert_eq!(res[0].segment_ends, vec![128, 384, 896]);
        let means = doubling_segment_means(&res);
        assert_eq!(means[&4].len(), 3);
        let path = dir.path().join("doubling.csv");
        write_doubling(&path, &res, 64).unwrap();
        assert!(fs::read_to_string(path).unwrap().starts_with("d,trial,t,cum_regret"));
    }
}
