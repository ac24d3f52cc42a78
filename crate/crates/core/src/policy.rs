//! Pricing policies: the three-stage localized explore-then-commit policy,
//! its hyperparameter planners, baselines and the doubling wrapper.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{clip, expected_revenue, instantaneous_regret, optimal_price, Environment, ModelParams, PriceBounds};
use crate::error::{Error, Result};
use crate::estimator::{gram_diagnostics, ols_fit, price_from_estimate, DesignStats};
use crate::spectrum::{degenerate_dimension, solve_critical_eta, SpectrumSummary};

/// Default multiplier of the simple planner's perturbation radius.
pub const DEFAULT_C0: f64 = 1.0;
/// Default doubling base horizon.
pub const DEFAULT_T0: usize = 128;

/// Which planner produced a [`Plan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PlanMode {
    Simple { c0: f64 },
    General { kappa: f64, d_tilde: f64 },
    Experiment { c1: f64, c2: f64, c3: f64 },
    TimeVaryingEta,
    Manual,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFlags {
    /// The stages do not fit the horizon comfortably: `T1 + T2 > T`, or a
    /// stage is shorter than the augmented dimension `2d`.
    pub horizon_too_short: bool,
    /// The perturbation radius hit `eta_max`.
    pub eta_capped: bool,
    /// The general planner found no bracket and used the simple planner.
    pub fell_back_to_simple: bool,
}

/// Stage lengths and perturbation radius for one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub t1: usize,
    pub t2: usize,
    pub eta: f64,
    pub horizon: usize,
    pub mode: PlanMode,
    pub flags: PlanFlags,
}

impl Plan {
    /// A plan with explicit stage lengths.
    pub fn manual(t1: usize, t2: usize, eta: f64, horizon: usize, d: usize) -> Result<Self> {
        if t1 == 0 || !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "manual plan needs t1 >= 1 and finite eta >= 0, got t1={t1}, eta={eta}"
            )));
        }
        Ok(Self {
            t1,
            t2,
            eta,
            horizon,
            mode: PlanMode::Manual,
            flags: PlanFlags {
                horizon_too_short: too_short(t1, t2, horizon, d),
                ..Default::default()
            },
        })
    }

    /// Stage lengths actually run within the horizon: `(T1, T2, T3)`.
    pub fn effective_stages(&self, horizon: usize) -> (usize, usize, usize) {
        let t1 = self.t1.min(horizon);
        let t2 = self.t2.min(horizon - t1);
        (t1, t2, horizon - t1 - t2)
    }
}

fn too_short(t1: usize, t2: usize, horizon: usize, d: usize) -> bool {
    t1 + t2 > horizon || t1 < 2 * d || (t2 > 0 && t2 < 2 * d)
}

fn check_horizon(horizon: usize, d: usize) -> Result<()> {
    if horizon < 3 {
        return Err(Error::InvalidArgument(format!("horizon must be >= 3, got {horizon}")));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    Ok(())
}

/// Default cap on the perturbation radius: a quarter of the price range.
pub fn default_eta_max(bounds: &PriceBounds) -> f64 {
    bounds.width() / 4.0
}

/// `T1 = ⌈√T ln T⌉`, `T2 = ⌈T/(2d)⌉`, `η = min(c0 √((d/√T) ln T), eta_max)`.
pub fn plan_simple(horizon: usize, d: usize, c0: f64, eta_max: f64) -> Result<Plan> {
    check_horizon(horizon, d)?;
    if !(c0 > 0.0) || !(eta_max > 0.0) {
        return Err(Error::InvalidArgument("c0 and eta_max must be positive".into()));
    }
    let t = horizon as f64;
    let ln_t = t.ln();
    let t1 = (t.sqrt() * ln_t).ceil() as usize;
    let t2 = (t / (2.0 * d as f64)).ceil() as usize;
    let raw_eta = c0 * ((d as f64 / t.sqrt()) * ln_t).sqrt();
    Ok(Plan {
        t1,
        t2,
        eta: raw_eta.min(eta_max),
        horizon,
        mode: PlanMode::Simple { c0 },
        flags: PlanFlags {
            horizon_too_short: too_short(t1, t2, horizon, d),
            eta_capped: raw_eta > eta_max,
            fell_back_to_simple: false,
        },
    })
}

/// Plan from the spectrum of `Σ*`: `η` solves the critical inequality and
/// `d̃ = d̃(η)` replaces `2d` in the stage lengths.
pub fn plan_general(
    horizon: usize,
    d: usize,
    summary: &SpectrumSummary,
    kappa: f64,
    eta_max: f64,
) -> Result<Plan> {
    check_horizon(horizon, d)?;
    if summary.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: 2 * d,
            got: summary.eigenvalues.len(),
        });
    }
    let t = horizon as f64;
    let sol = match solve_critical_eta(summary, t, kappa, eta_max) {
        Ok(sol) => sol,
        Err(Error::NoBracket { .. }) => {
            let mut plan = plan_simple(horizon, d, DEFAULT_C0, eta_max)?;
            plan.flags.fell_back_to_simple = true;
            return Ok(plan);
        }
        Err(e) => return Err(e),
    };
    let eta = sol.eta_star;
    let d_tilde = degenerate_dimension(summary, eta);
    let (t1, t2) = general_stage_lengths(horizon, d, d_tilde);
    Ok(Plan {
        t1: t1.max(1),
        t2: t2.max(1),
        eta,
        horizon,
        mode: PlanMode::General { kappa, d_tilde },
        flags: PlanFlags {
            horizon_too_short: too_short(t1, t2, horizon, d),
            eta_capped: sol.capped,
            fell_back_to_simple: false,
        },
    })
}

/// `T1 = ⌈√(d̃T) ln T⌉`, `T2 = ⌈(d̃/2d) T⌉`.
pub fn general_stage_lengths(horizon: usize, d: usize, d_tilde: f64) -> (usize, usize) {
    let t = horizon as f64;
    let t1 = ((d_tilde * t).sqrt() * t.ln()).ceil() as usize;
    let t2 = (d_tilde / (2.0 * d as f64) * t).ceil() as usize;
    (t1, t2)
}

/// `T1 = ⌈√T ln T / C1⌉`, `T2 = ⌈T/(d C3)⌉`, `η = √(C2 d ln T / √T)`.
pub fn plan_experiment(horizon: usize, d: usize, c1: f64, c2: f64, c3: f64) -> Result<Plan> {
    check_horizon(horizon, d)?;
    if !(c1 > 0.0 && c2 > 0.0 && c3 > 0.0) {
        return Err(Error::InvalidArgument("planner constants must be positive".into()));
    }
    let t = horizon as f64;
    let ln_t = t.ln();
    let t1 = ((t.sqrt() * ln_t / c1).ceil() as usize).max(1);
    let t2 = ((t / (d as f64 * c3)).ceil() as usize).max(1);
    let eta = (c2 * d as f64 * ln_t / t.sqrt()).sqrt();
    Ok(Plan {
        t1,
        t2,
        eta,
        horizon,
        mode: PlanMode::Experiment { c1, c2, c3 },
        flags: PlanFlags {
            horizon_too_short: too_short(t1, t2, horizon, d),
            ..Default::default()
        },
    })
}

/// A planner that can be re-applied to any horizon (used by the doubling wrapper).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Planner {
    Simple { c0: f64, eta_max: f64 },
    General { kappa: f64, eta_max: f64, summary: SpectrumSummary },
    Experiment { c1: f64, c2: f64, c3: f64 },
}

impl Planner {
    pub fn experiment_default() -> Self {
        Planner::Experiment {
            c1: 10.0,
            c2: 0.005,
            c3: 0.5,
        }
    }

    pub fn plan(&self, horizon: usize, d: usize) -> Result<Plan> {
        match self {
            Planner::Simple { c0, eta_max } => plan_simple(horizon, d, *c0, *eta_max),
            Planner::General {
                kappa,
                eta_max,
                summary,
            } => plan_general(horizon, d, summary, *kappa, *eta_max),
            Planner::Experiment { c1, c2, c3 } => plan_experiment(horizon, d, *c1, *c2, *c3),
        }
    }
}

/// A fixed context-to-price map.
pub type PricingFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PolicyKind {
    LetC(Plan),
    /// Binary burn-in of `t1` steps, then commit on the burn-in estimate.
    Etc { t1: usize },
    /// Binary burn-in of `2d` steps, then refit on everything and price greedily.
    Greedy,
    /// Perturbed greedy with radius `min(√(d/t) ln T, eta_max)` after a `4d`-step burn-in.
    TimeVaryingEta { eta_max: f64 },
    /// `clip(f(x))` for a fixed `f`.
    StaticOffline(PricingFn),
    Oracle,
}

impl fmt::Debug for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::LetC(plan) => f.debug_tuple("LetC").field(plan).finish(),
            PolicyKind::Etc { t1 } => f.debug_struct("Etc").field("t1", t1).finish(),
            PolicyKind::Greedy => f.write_str("Greedy"),
            PolicyKind::TimeVaryingEta { eta_max } => {
                f.debug_struct("TimeVaryingEta").field("eta_max", eta_max).finish()
            }
            PolicyKind::StaticOffline(_) => f.write_str("StaticOffline(..)"),
            PolicyKind::Oracle => f.write_str("Oracle"),
        }
    }
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::LetC(_) => "letc",
            PolicyKind::Etc { .. } => "etc",
            PolicyKind::Greedy => "greedy",
            PolicyKind::TimeVaryingEta { .. } => "timevarying",
            PolicyKind::StaticOffline(_) => "static",
            PolicyKind::Oracle => "oracle",
        }
    }
}

/// How stage-1 prices are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurnIn {
    /// Independent fair coin over `{ℓ, u}`.
    #[default]
    Bernoulli,
    /// `ℓ, u, ℓ, u, …`.
    Alternate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub burn_in: BurnIn,
    /// Fit the stage-2 estimate on stage-1 and stage-2 data together.
    pub pool_stages: bool,
    /// Record the smallest eigenvalue of the realized design Gram.
    pub track_design: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Explore,
    Localize,
    Commit,
    /// Single-stage policies (oracle, static, greedy after burn-in).
    Exploit,
}

/// Steps `start..=end` (1-based) ran in `stage`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpan {
    pub stage: Stage,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub singular_fits: usize,
    pub fallback_prices: usize,
    pub clip_activations: usize,
    pub horizon_too_short: bool,
    pub poisson_clamped: usize,
    /// Smallest eigenvalue of the mean realized Gram, if tracked.
    pub realized_gram_min_eig: Option<f64>,
}

impl Diagnostics {
    fn absorb(&mut self, other: &Diagnostics) {
        self.singular_fits += other.singular_fits;
        self.fallback_prices += other.fallback_prices;
        self.clip_activations += other.clip_activations;
        self.horizon_too_short |= other.horizon_too_short;
        self.poisson_clamped = other.poisson_clamped;
    }
}

/// Per-step record of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub per_step: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub prices: Vec<f64>,
    pub optimal_prices: Vec<f64>,
    /// Expected revenue `p_t f*(x_t, p_t)` under the true parameters.
    pub revenue: Vec<f64>,
    pub stages: Vec<StageSpan>,
    /// Last step of each doubling segment.
    pub segment_ends: Vec<usize>,
    pub diagnostics: Diagnostics,
    pub stage_one_estimate: Option<ModelParams>,
    pub stage_two_estimate: Option<ModelParams>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }

    pub fn total_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn total_revenue(&self) -> f64 {
        self.revenue.iter().sum()
    }

    /// Stage of the 1-based step `t`.
    pub fn stage_at(&self, t: usize) -> Option<Stage> {
        self.stages
            .iter()
            .find(|s| s.start <= t && t <= s.end)
            .map(|s| s.stage)
    }

    /// Per-step regret during `stage` (in step order).
    pub fn stage_regret(&self, stage: Stage) -> Vec<f64> {
        self.stages
            .iter()
            .filter(|s| s.stage == stage)
            .flat_map(|s| self.per_step[s.start - 1..s.end].iter().copied())
            .collect()
    }

    fn push_span(&mut self, stage: Stage, start: usize, end: usize) {
        if end >= start {
            self.stages.push(StageSpan { stage, start, end });
        }
    }

    fn recompute_cumulative(&mut self) {
        let mut acc = 0.0;
        self.cumulative = self
            .per_step
            .iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect();
    }
}

/// Rademacher sign.
fn sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn burn_in_price<R: Rng + ?Sized>(mode: BurnIn, step: usize, bounds: &PriceBounds, rng: &mut R) -> f64 {
    let low = match mode {
        BurnIn::Bernoulli => rng.random::<bool>(),
        BurnIn::Alternate => step % 2 == 1,
    };
    if low {
        bounds.lower
    } else {
        bounds.upper
    }
}

trait Pricer {
    fn price(&mut self, step: usize, x: &[f64], rng: &mut dyn rand::RngCore) -> Result<f64>;
    fn observe(&mut self, step: usize, x: &[f64], price: f64, demand: f64) -> Result<()>;
    fn counters(&self) -> &Counters;
    /// `(θ̃, θ̂)` for staged policies.
    fn estimates(&self) -> (Option<ModelParams>, Option<ModelParams>) {
        (None, None)
    }
}

struct Counters {
    singular_fits: usize,
    fallback_prices: usize,
    clip_activations: usize,
}

impl Counters {
    fn new() -> Self {
        Self {
            singular_fits: 0,
            fallback_prices: 0,
            clip_activations: 0,
        }
    }
}

/// Price from an optional estimate; midpoint if none, counting fallbacks and clips.
fn plug_in(estimate: Option<&ModelParams>, x: &[f64], bounds: &PriceBounds, c: &mut Counters) -> f64 {
    match estimate {
        Some(theta) => {
            let e = price_from_estimate(theta, x, bounds);
            c.fallback_prices += e.fallback as usize;
            c.clip_activations += e.clipped as usize;
            e.price
        }
        None => {
            c.fallback_prices += 1;
            bounds.midpoint()
        }
    }
}

fn perturbed(center: f64, eta: f64, xi: f64, bounds: &PriceBounds, c: &mut Counters) -> f64 {
    let raw = center + eta * xi;
    let p = clip(raw, bounds);
    c.clip_activations += (p != raw) as usize;
    p
}

/// Refit, keeping `previous` (and counting) when the system is singular.
fn refit(stats: &DesignStats, previous: Option<ModelParams>, c: &mut Counters) -> Result<Option<ModelParams>> {
    match ols_fit(stats) {
        Ok(theta) => Ok(Some(theta)),
        Err(Error::SingularSystem { .. }) => {
            c.singular_fits += 1;
            Ok(previous)
        }
        Err(e) => Err(e),
    }
}

struct Letc {
    t1: usize,
    t2: usize,
    eta: f64,
    bounds: PriceBounds,
    options: RunOptions,
    stage_one: DesignStats,
    stage_two: DesignStats,
    tilde: Option<ModelParams>,
    hat: Option<ModelParams>,
    tilde_fitted: bool,
    hat_fitted: bool,
    counters: Counters,
}

impl Pricer for Letc {
    fn price(&mut self, step: usize, x: &[f64], rng: &mut dyn rand::RngCore) -> Result<f64> {
        if step <= self.t1 {
            return Ok(burn_in_price(self.options.burn_in, step, &self.bounds, rng));
        }
        if !self.tilde_fitted {
            self.tilde = refit(&self.stage_one, None, &mut self.counters)?;
            self.tilde_fitted = true;
        }
        if step <= self.t1 + self.t2 {
            let center = plug_in(self.tilde.as_ref(), x, &self.bounds, &mut self.counters);
            let xi = sign(rng);
            return Ok(perturbed(center, self.eta, xi, &self.bounds, &mut self.counters));
        }
        if !self.hat_fitted {
            self.hat = if self.t2 == 0 {
                self.tilde.clone()
            } else if self.options.pool_stages {
                let mut pooled = self.stage_one.clone();
                pooled.merge(&self.stage_two)?;
                refit(&pooled, self.tilde.clone(), &mut self.counters)?
            } else {
                refit(&self.stage_two, self.tilde.clone(), &mut self.counters)?
            };
            self.hat_fitted = true;
        }
        Ok(plug_in(self.hat.as_ref(), x, &self.bounds, &mut self.counters))
    }

    fn observe(&mut self, step: usize, x: &[f64], price: f64, demand: f64) -> Result<()> {
        if step <= self.t1 {
            self.stage_one.add(x, price, demand)
        } else if step <= self.t1 + self.t2 {
            self.stage_two.add(x, price, demand)
        } else {
            Ok(())
        }
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }

    fn estimates(&self) -> (Option<ModelParams>, Option<ModelParams>) {
        (self.tilde.clone(), self.hat.clone())
    }
}

/// Greedy and time-varying-perturbation policies: refit on all data each step.
struct Refitting {
    burn_in: usize,
    horizon: usize,
    dim: usize,
    /// `None` for pure greedy.
    eta_max: Option<f64>,
    bounds: PriceBounds,
    mode: BurnIn,
    stats: DesignStats,
    estimate: Option<ModelParams>,
    counters: Counters,
}

impl Refitting {
    fn eta_at(&self, step: usize) -> f64 {
        match self.eta_max {
            Some(cap) => time_varying_eta(step, self.dim, self.horizon, cap),
            None => 0.0,
        }
    }
}

/// `η_t = min(√(d/t) ln T, eta_max)`.
pub fn time_varying_eta(step: usize, d: usize, horizon: usize, eta_max: f64) -> f64 {
    ((d as f64 / step as f64).sqrt() * (horizon as f64).ln()).min(eta_max)
}

impl Pricer for Refitting {
    fn price(&mut self, step: usize, x: &[f64], rng: &mut dyn rand::RngCore) -> Result<f64> {
        if step <= self.burn_in {
            return Ok(burn_in_price(self.mode, step, &self.bounds, rng));
        }
        self.estimate = refit(&self.stats, self.estimate.take(), &mut self.counters)?;
        let center = plug_in(self.estimate.as_ref(), x, &self.bounds, &mut self.counters);
        if self.eta_max.is_none() {
            return Ok(center);
        }
        let eta = self.eta_at(step);
        let xi = sign(rng);
        Ok(perturbed(center, eta, xi, &self.bounds, &mut self.counters))
    }

    fn observe(&mut self, _step: usize, x: &[f64], price: f64, demand: f64) -> Result<()> {
        self.stats.add(x, price, demand)
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }

    fn estimates(&self) -> (Option<ModelParams>, Option<ModelParams>) {
        (None, self.estimate.clone())
    }
}

struct Fixed {
    bounds: PriceBounds,
    theta: Option<ModelParams>,
    f: Option<PricingFn>,
    counters: Counters,
}

impl Pricer for Fixed {
    fn price(&mut self, _step: usize, x: &[f64], _rng: &mut dyn rand::RngCore) -> Result<f64> {
        if let Some(theta) = &self.theta {
            return Ok(clip(optimal_price(theta, x)?, &self.bounds));
        }
        let raw = self.f.as_ref().map(|f| f(x)).unwrap_or(f64::NAN);
        if !raw.is_finite() {
            self.counters.fallback_prices += 1;
            return Ok(self.bounds.midpoint());
        }
        let p = clip(raw, &self.bounds);
        self.counters.clip_activations += (p != raw) as usize;
        Ok(p)
    }

    fn observe(&mut self, _step: usize, _x: &[f64], _price: f64, _demand: f64) -> Result<()> {
        Ok(())
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }
}

/// Runs `policy` for `horizon` steps with default options.
pub fn run<R: Rng + ?Sized>(policy: &PolicyKind, env: &mut Environment, horizon: usize, rng: &mut R) -> Result<RegretTrace> {
    run_with(policy, env, horizon, rng, &RunOptions::default())
}

pub fn run_with<R: Rng + ?Sized>(
    policy: &PolicyKind,
    env: &mut Environment,
    horizon: usize,
    rng: &mut R,
    options: &RunOptions,
) -> Result<RegretTrace> {
    let d = env.dim();
    let bounds = *env.bounds();
    let mut trace = RegretTrace::default();
    let (mut pricer, spans, short): (Box<dyn Pricer>, Vec<(Stage, usize, usize)>, bool) = match policy {
        PolicyKind::LetC(plan) => {
            let (t1, t2, _) = plan.effective_stages(horizon);
            let short = plan.flags.horizon_too_short || plan.t1 + plan.t2 > horizon;
            (
                Box::new(new_letc(t1, t2, plan.eta, bounds, *options, d)),
                vec![
                    (Stage::Explore, 1, t1),
                    (Stage::Localize, t1 + 1, t1 + t2),
                    (Stage::Commit, t1 + t2 + 1, horizon),
                ],
                short,
            )
        }
        PolicyKind::Etc { t1 } => {
            if *t1 == 0 {
                return Err(Error::InvalidArgument("ETC burn-in must be >= 1".into()));
            }
            let t1 = (*t1).min(horizon);
            (
                Box::new(new_letc(t1, 0, 0.0, bounds, *options, d)),
                vec![(Stage::Explore, 1, t1), (Stage::Commit, t1 + 1, horizon)],
                t1 < 2 * d || t1 == horizon,
            )
        }
        PolicyKind::Greedy | PolicyKind::TimeVaryingEta { .. } => {
            let (burn_in, eta_max) = match policy {
                PolicyKind::TimeVaryingEta { eta_max } => (4 * d, Some(*eta_max)),
                _ => (2 * d, None),
            };
            let burn_in = burn_in.min(horizon);
            let stage = if eta_max.is_some() { Stage::Localize } else { Stage::Exploit };
            (
                Box::new(Refitting {
                    burn_in,
                    horizon,
                    dim: d,
                    eta_max,
                    bounds,
                    mode: options.burn_in,
                    stats: DesignStats::new(d),
                    estimate: None,
                    counters: Counters::new(),
                }),
                vec![(Stage::Explore, 1, burn_in), (stage, burn_in + 1, horizon)],
                burn_in == horizon,
            )
        }
        PolicyKind::StaticOffline(f) => (
            Box::new(Fixed {
                bounds,
                theta: None,
                f: Some(f.clone()),
                counters: Counters::new(),
            }),
            vec![(Stage::Exploit, 1, horizon)],
            false,
        ),
        PolicyKind::Oracle => (
            Box::new(Fixed {
                bounds,
                theta: Some(env.theta().clone()),
                f: None,
                counters: Counters::new(),
            }),
            vec![(Stage::Exploit, 1, horizon)],
            false,
        ),
    };
    for (stage, start, end) in spans {
        trace.push_span(stage, start, end);
    }
    trace.diagnostics.horizon_too_short = short;

    let mut design = options.track_design.then(|| DesignStats::new(d));
    let theta_true = env.theta().clone();
    trace.per_step.reserve(horizon);
    let mut rng_dyn = RngAdapter(rng);
    for step in 1..=horizon {
        let x = env.observe()?.to_vec();
        let p = pricer.price(step, &x, &mut rng_dyn)?;
        let interaction = env.step(p)?;
        pricer.observe(step, &x, p, interaction.demand)?;
        if let Some(design) = design.as_mut() {
            design.add(&x, p, interaction.demand)?;
        }
        let regret = instantaneous_regret(&theta_true, &x, p)?;
        trace.per_step.push(regret);
        trace.prices.push(p);
        trace.optimal_prices.push(optimal_price(&theta_true, &x)?);
        trace.revenue.push(expected_revenue(&theta_true, &x, p)?);
    }
    trace.recompute_cumulative();
    trace.diagnostics.poisson_clamped = env.poisson_clamped();
    if let Some(design) = design {
        trace.diagnostics.realized_gram_min_eig = Some(gram_diagnostics(&design)?.min_eig);
    }
    let c = pricer.counters();
    trace.diagnostics.singular_fits = c.singular_fits;
    trace.diagnostics.fallback_prices = c.fallback_prices;
    trace.diagnostics.clip_activations = c.clip_activations;
    (trace.stage_one_estimate, trace.stage_two_estimate) = pricer.estimates();
    Ok(trace)
}

fn new_letc(t1: usize, t2: usize, eta: f64, bounds: PriceBounds, options: RunOptions, d: usize) -> Letc {
    Letc {
        t1,
        t2,
        eta,
        bounds,
        options,
        stage_one: DesignStats::new(d),
        stage_two: DesignStats::new(d),
        tilde: None,
        hat: None,
        tilde_fitted: false,
        hat_fitted: false,
        counters: Counters::new(),
    }
}

/// Lets a generic `Rng` be used behind `dyn RngCore`.
struct RngAdapter<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> rand::RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Segment lengths `T0, 2T0, 4T0, …` covering `total`, the last one truncated.
pub fn doubling_segments(total: usize, t0: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut used = 0;
    let mut len = t0;
    while used < total {
        let take = len.min(total - used);
        out.push(take);
        used += take;
        len = len.saturating_mul(2);
    }
    out
}

/// LetC restarted on geometrically growing segments, each planned for its
/// nominal length and started from scratch.
pub fn doubling_run<R: Rng + ?Sized>(
    planner: &Planner,
    env: &mut Environment,
    total: usize,
    t0: usize,
    rng: &mut R,
) -> Result<RegretTrace> {
    if t0 < 4 {
        return Err(Error::InvalidArgument(format!("doubling base must be >= 4, got {t0}")));
    }
    let d = env.dim();
    let mut trace = RegretTrace::default();
    let mut nominal = t0;
    for take in doubling_segments(total, t0) {
        let plan = planner.plan(nominal, d)?;
        let seg = run(&PolicyKind::LetC(plan), env, take, rng)?;
        let offset = trace.per_step.len();
        trace.per_step.extend_from_slice(&seg.per_step);
        trace.prices.extend_from_slice(&seg.prices);
        trace.optimal_prices.extend_from_slice(&seg.optimal_prices);
        trace.revenue.extend_from_slice(&seg.revenue);
        trace.stages.extend(seg.stages.iter().map(|s| StageSpan {
            stage: s.stage,
            start: s.start + offset,
            end: s.end + offset,
        }));
        trace.segment_ends.push(offset + take);
        trace.diagnostics.absorb(&seg.diagnostics);
        trace.stage_one_estimate = seg.stage_one_estimate;
        trace.stage_two_estimate = seg.stage_two_estimate;
        nominal = nominal.saturating_mul(2);
    }
    trace.recompute_cumulative();
    Ok(trace)
}

/// Perturbed-greedy run with a decaying radius, capped at a quarter of the price range.
pub fn time_varying_eta_run<R: Rng + ?Sized>(
    env: &mut Environment,
    horizon: usize,
    d: usize,
    rng: &mut R,
) -> Result<RegretTrace> {
    if d != env.dim() {
        return Err(Error::DimensionMismatch {
            expected: env.dim(),
            got: d,
        });
    }
    if horizon < 8 * d {
        return Err(Error::InvalidArgument(format!(
            "time-varying run needs T >= 8d, got T={horizon}, d={d}"
        )));
    }
    let eta_max = default_eta_max(env.bounds());
    run(&PolicyKind::TimeVaryingEta { eta_max }, env, horizon, rng)
}
