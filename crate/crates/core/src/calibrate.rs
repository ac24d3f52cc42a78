//! Semi-synthetic calibration from historical sales.
//!
//! A linear demand model fitted to the history is treated as ground truth.
//! Contexts are regenerated from per-weekday Gaussians over the two competitor
//! prices, filtered so that mean demand is positive over the whole price range,
//! and demand is drawn as Poisson. Policies are compared by expected revenue.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{mean_demand, Environment, FeatureSampler, Instance, ModelParams, NoiseModel, PriceBounds};
use crate::error::{Error, Result};
use crate::estimator::{ols_fit, DesignStats};
use crate::linalg::{solve_spd, Matrix};
use crate::policy::{plan_experiment, run, PolicyKind, PricingFn, RegretTrace};

/// Seven weekday indicators (Monday first) and the two competitor prices.
pub const FEATURE_DIM: usize = 9;
pub const WEEKDAYS: usize = 7;
pub const DEFAULT_MAX_TRIES: usize = 10_000;
pub const KRR_GAMMA: f64 = 0.05;
pub const KRR_ALPHA: f64 = 0.2;
/// Offline policy fits use at most this many of the most recent records.
pub const KRR_MAX_SUPPORT: usize = 2000;

pub const CSV_HEADER: [&str; 8] = [
    "product_id",
    "date",
    "price",
    "units_sold",
    "comp_min",
    "comp_max",
    "min_allowed",
    "max_allowed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalesRecord {
    pub product_id: String,
    pub date: NaiveDate,
    pub price: f64,
    pub units_sold: u64,
    pub comp_min: f64,
    pub comp_max: f64,
    pub min_allowed: f64,
    pub max_allowed: f64,
}

impl SalesRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("price", self.price),
            ("comp_min", self.comp_min),
            ("comp_max", self.comp_max),
            ("min_allowed", self.min_allowed),
            ("max_allowed", self.max_allowed),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        if self.price < 0.0 || self.comp_min < 0.0 || self.comp_max < 0.0 {
            return Err("prices must be non-negative".into());
        }
        if self.min_allowed >= self.max_allowed {
            return Err(format!(
                "min_allowed {} must be below max_allowed {}",
                self.min_allowed, self.max_allowed
            ));
        }
        Ok(())
    }

    pub fn weekday(&self) -> usize {
        self.date.weekday().num_days_from_monday() as usize
    }

    pub fn bounds(&self) -> Result<PriceBounds> {
        PriceBounds::new(self.min_allowed, self.max_allowed)
    }
}

pub fn read_sales_csv(path: &Path) -> Result<Vec<SalesRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidRecord {
            line: 1,
            reason: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<SalesRecord>().enumerate() {
        let line = i + 2;
        let record = row.map_err(|e| Error::InvalidRecord {
            line,
            reason: e.to_string(),
        })?;
        record
            .validate()
            .map_err(|reason| Error::InvalidRecord { line, reason })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_sales_csv(path: &Path, records: &[SalesRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in records {
        writer.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Records grouped by product, in product-id order.
pub fn group_by_product(records: &[SalesRecord]) -> BTreeMap<String, Vec<SalesRecord>> {
    let mut map: BTreeMap<String, Vec<SalesRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.product_id.clone()).or_default().push(r.clone());
    }
    map
}

pub fn encode(weekday: usize, comp_min: f64, comp_max: f64) -> Vec<f64> {
    let mut x = vec![0.0; FEATURE_DIM];
    x[weekday % WEEKDAYS] = 1.0;
    x[7] = comp_min;
    x[8] = comp_max;
    x
}

pub fn encode_features(record: &SalesRecord) -> Vec<f64> {
    encode(record.weekday(), record.comp_min, record.comp_max)
}

/// OLS of units sold on `(x, x·price)`.
pub fn fit_linear_demand(records: &[SalesRecord]) -> Result<ModelParams> {
    if records.len() < 2 * FEATURE_DIM {
        return Err(Error::InsufficientData(format!(
            "need at least {} records, got {}",
            2 * FEATURE_DIM,
            records.len()
        )));
    }
    let mut stats = DesignStats::new(FEATURE_DIM);
    for r in records {
        stats.add(&encode_features(r), r.price, r.units_sold as f64)?;
    }
    ols_fit(&stats)
}

/// Bivariate Gaussian over `(comp_min, comp_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGaussian {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub count: usize,
}

impl PairGaussian {
    /// Sample mean and `n − 1` covariance, projected onto the PSD cone.
    pub fn fit(points: &[[f64; 2]]) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 points for a covariance, got {n}"
            )));
        }
        let mut mean = [0.0; 2];
        for p in points {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        let mut cov = [[0.0; 2]; 2];
        for p in points {
            let d = [p[0] - mean[0], p[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += d[i] * d[j];
                }
            }
        }
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v /= (n - 1) as f64;
            }
        }
        Ok(Self {
            mean,
            cov: psd_clamp(cov),
            count: n,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let [[a, b], [_, c]] = self.cov;
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (c - l21 * l21).max(0.0).sqrt();
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        [self.mean[0] + l11 * z0, self.mean[1] + l21 * z0 + l22 * z1]
    }
}

/// Nearest PSD matrix of a symmetric 2×2 (negative eigenvalues set to zero).
fn psd_clamp(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (a, b, c) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let half_tr = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l1, l2) = (half_tr + rad, half_tr - rad);
    if l2 >= 0.0 {
        return [[a, b], [b, c]];
    }
    let l1 = l1.max(0.0);
    // Unit eigenvector of l1.
    let (vx, vy) = if b.abs() > 0.0 {
        let (x, y) = (l1 - c, b);
        let n = (x * x + y * y).sqrt();
        (x / n, y / n)
    } else if a >= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    [[l1 * vx * vx, l1 * vx * vy], [l1 * vx * vy, l1 * vy * vy]]
}

/// One competitor-price Gaussian per weekday, Monday first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub weekdays: Vec<PairGaussian>,
}

impl FeatureModel {
    pub fn weekday(&self, w: usize) -> &PairGaussian {
        &self.weekdays[w % WEEKDAYS]
    }
}

pub fn fit_feature_model(records: &[SalesRecord]) -> Result<FeatureModel> {
    let mut buckets: Vec<Vec<[f64; 2]>> = vec![Vec::new(); WEEKDAYS];
    for r in records {
        buckets[r.weekday()].push([r.comp_min, r.comp_max]);
    }
    let weekdays = buckets
        .iter()
        .enumerate()
        .map(|(w, pts)| {
            if pts.len() < 3 {
                return Err(Error::InsufficientData(format!(
                    "weekday {w} has {} records, need 3",
                    pts.len()
                )));
            }
            PairGaussian::fit(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureModel { weekdays })
}

/// Outcome of [`rejection_sample`].
#[derive(Debug, Clone, PartialEq)]
pub enum Draw {
    Accepted(Vec<f64>),
    Discard { weekday: usize, tries: usize },
}

/// Whether `x` has ordered competitor prices and positive mean demand at both price bounds.
pub fn acceptable(x: &[f64], theta: &ModelParams, bounds: &PriceBounds) -> Result<bool> {
    if !(x[7] < x[8]) {
        return Ok(false);
    }
    Ok(mean_demand(theta, x, bounds.lower)? > 0.0 && mean_demand(theta, x, bounds.upper)? > 0.0)
}

pub fn rejection_sample<R: Rng + ?Sized>(
    model: &FeatureModel,
    theta: &ModelParams,
    bounds: &PriceBounds,
    weekday: usize,
    rng: &mut R,
    max_tries: usize,
) -> Result<Draw> {
    let g = model.weekday(weekday);
    for _ in 0..max_tries {
        let [lo, hi] = g.sample(rng);
        let x = encode(weekday, lo, hi);
        if acceptable(&x, theta, bounds)? {
            return Ok(Draw::Accepted(x));
        }
    }
    Ok(Draw::Discard {
        weekday: weekday % WEEKDAYS,
        tries: max_tries,
    })
}

/// Context sampler cycling through the weekdays in calendar order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekdaySampler {
    pub model: FeatureModel,
    pub theta: ModelParams,
    pub bounds: PriceBounds,
    pub next_weekday: usize,
    pub max_tries: usize,
}

impl WeekdaySampler {
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let w = self.next_weekday;
        self.next_weekday = (w + 1) % WEEKDAYS;
        match rejection_sample(&self.model, &self.theta, &self.bounds, w, rng, self.max_tries)? {
            Draw::Accepted(x) => Ok(x),
            Draw::Discard { weekday, tries } => Err(Error::Discarded { weekday, tries }),
        }
    }
}

/// Poisson environment whose first context falls on `start_weekday`.
///
/// Each weekday is probed once with a fixed stream; a weekday that cannot
/// produce an acceptable context rejects the whole product.
pub fn build_environment(
    theta: &ModelParams,
    model: &FeatureModel,
    bounds: &PriceBounds,
    start_weekday: usize,
    seed: u64,
) -> Result<Environment> {
    Ok(Instance::new(
        theta.clone(),
        calibrated_sampler(theta, model, bounds, start_weekday)?,
        NoiseModel::PoissonDemand,
        *bounds,
    )?
    .environment(seed))
}

fn calibrated_sampler(
    theta: &ModelParams,
    model: &FeatureModel,
    bounds: &PriceBounds,
    start_weekday: usize,
) -> Result<FeatureSampler> {
    if theta.dim() != FEATURE_DIM || model.weekdays.len() != WEEKDAYS {
        return Err(Error::DimensionMismatch {
            expected: FEATURE_DIM,
            got: theta.dim(),
        });
    }
    let mut probe = ChaCha8Rng::seed_from_u64(0x5eed);
    for w in 0..WEEKDAYS {
        if let Draw::Discard { weekday, tries } =
            rejection_sample(model, theta, bounds, w, &mut probe, DEFAULT_MAX_TRIES)?
        {
            return Err(Error::Discarded { weekday, tries });
        }
    }
    Ok(FeatureSampler::WeekdayCompetitor(Box::new(WeekdaySampler {
        model: model.clone(),
        theta: theta.clone(),
        bounds: *bounds,
        next_weekday: start_weekday % WEEKDAYS,
        max_tries: DEFAULT_MAX_TRIES,
    })))
}

/// RBF kernel ridge regression in dual form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub support: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub gamma: f64,
    pub alpha: f64,
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Solves `(K + αI) c = y` with `K_ij = exp(−γ‖x_i − x_j‖²)`.
pub fn krr_fit(features: &[Vec<f64>], targets: &[f64], gamma: f64, alpha: f64) -> Result<KrrModel> {
    let n = features.len();
    if n == 0 {
        return Err(Error::InsufficientData("kernel ridge needs at least one point".into()));
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.len(),
        });
    }
    if !(gamma > 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidArgument("gamma and alpha must be positive".into()));
    }
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0 + alpha;
        for j in 0..i {
            let v = rbf(&features[i], &features[j], gamma);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let sol = solve_spd(&k, targets)?;
    Ok(KrrModel {
        support: features.to_vec(),
        coefficients: sol.x,
        gamma,
        alpha,
    })
}

pub fn krr_predict(model: &KrrModel, x: &[f64]) -> f64 {
    model
        .support
        .iter()
        .zip(&model.coefficients)
        .map(|(s, c)| c * rbf(s, x, model.gamma))
        .sum()
}

/// Offline pricing policy: kernel ridge fit of historical price on features,
/// over the most recent `max_support` records.
pub fn fit_offline_policy(records: &[SalesRecord], gamma: f64, alpha: f64, max_support: usize) -> Result<KrrModel> {
    let mut sorted: Vec<&SalesRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.date);
    let recent = &sorted[sorted.len().saturating_sub(max_support.max(1))..];
    let features: Vec<Vec<f64>> = recent.iter().map(|r| encode_features(r)).collect();
    let targets: Vec<f64> = recent.iter().map(|r| r.price).collect();
    krr_fit(&features, &targets, gamma, alpha)
}

pub fn krr_policy(model: KrrModel) -> PolicyKind {
    let f: PricingFn = std::sync::Arc::new(move |x: &[f64]| krr_predict(&model, x));
    PolicyKind::StaticOffline(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueEvaluation {
    /// `Σ_t p_t f*(x_t, p_t)`.
    pub expected_revenue: f64,
    /// `Σ_t r*(x_t)` over the same contexts.
    pub oracle_revenue: f64,
    pub trace: RegretTrace,
}

pub fn evaluate_policy_revenue<R: Rng + ?Sized>(
    policy: &PolicyKind,
    env: &mut Environment,
    horizon: usize,
    rng: &mut R,
) -> Result<RevenueEvaluation> {
    let trace = run(policy, env, horizon, rng)?;
    let expected_revenue = trace.total_revenue();
    // r*(x_t) = revenue_t + regret_t.
    let oracle_revenue = expected_revenue + trace.total_regret();
    Ok(RevenueEvaluation {
        expected_revenue,
        oracle_revenue,
        trace,
    })
}

/// `(revenue − baseline) / baseline × 100`.
pub fn improvement_pct(revenue: f64, baseline: f64) -> f64 {
    (revenue - baseline) / baseline * 100.0
}

/// Settings of one product's semi-synthetic comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub krr_gamma: f64,
    pub krr_alpha: f64,
    pub krr_max_support: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            horizon: 365,
            trials: 20,
            seed: 2024,
            c1: 3.0,
            c2: 0.1,
            c3: 0.5,
            krr_gamma: KRR_GAMMA,
            krr_alpha: KRR_ALPHA,
            krr_max_support: KRR_MAX_SUPPORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ProductStatus {
    Accepted,
    Discarded { weekday: usize, tries: usize },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueRow {
    pub policy: String,
    pub mean_revenue: f64,
    pub std_revenue: f64,
    /// Against the offline policy.
    pub improvement_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub product_id: String,
    pub n_records: usize,
    pub bounds: Option<PriceBounds>,
    pub theta: Option<ModelParams>,
    pub feature_model: Option<FeatureModel>,
    pub status: ProductStatus,
    pub revenue: Vec<RevenueRow>,
}

/// Per-trial revenues of LetC and the offline policy on the same context streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueComparison {
    pub letc: Vec<f64>,
    pub offline: Vec<f64>,
    pub oracle: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Product bounds: the widest allowed range in the history.
fn history_bounds(records: &[SalesRecord]) -> Result<PriceBounds> {
    let lo = records.iter().map(|r| r.min_allowed).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.max_allowed).fold(f64::NEG_INFINITY, f64::max);
    PriceBounds::new(lo, hi)
}

/// Calibrates one product and compares LetC against the offline policy.
pub fn calibrate_product(product_id: &str, records: &[SalesRecord], config: &CalibrationConfig) -> CalibrationReport {
    let mut report = CalibrationReport {
        product_id: product_id.to_string(),
        n_records: records.len(),
        bounds: None,
        theta: None,
        feature_model: None,
        status: ProductStatus::Accepted,
        revenue: Vec::new(),
    };
    match calibrate_inner(records, config, &mut report) {
        Ok(()) => {}
        Err(Error::Discarded { weekday, tries }) => {
            report.status = ProductStatus::Discarded { weekday, tries };
        }
        Err(e) => {
            report.status = ProductStatus::Failed { reason: e.to_string() };
        }
    }
    report
}

fn calibrate_inner(records: &[SalesRecord], config: &CalibrationConfig, report: &mut CalibrationReport) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no records".into()));
    }
    let bounds = history_bounds(records)?;
    report.bounds = Some(bounds);
    let theta = fit_linear_demand(records)?;
    report.theta = Some(theta.clone());
    let model = fit_feature_model(records)?;
    report.feature_model = Some(model.clone());
    let start = records.iter().map(|r| r.date).max().map(|d| d.succ_opt().unwrap_or(d));
    let start_weekday = start.map(|d| d.weekday().num_days_from_monday() as usize).unwrap_or(0);
    // Fails early if the product cannot be simulated.
    build_environment(&theta, &model, &bounds, start_weekday, config.seed)?;
    let krr = fit_offline_policy(records, config.krr_gamma, config.krr_alpha, config.krr_max_support)?;
    let cmp = compare_revenue(&theta, &model, &bounds, start_weekday, krr, config)?;
    let (offline_mean, offline_std) = mean_std(&cmp.offline);
    let (letc_mean, letc_std) = mean_std(&cmp.letc);
    let (oracle_mean, oracle_std) = mean_std(&cmp.oracle);
    report.revenue = vec![
        RevenueRow {
            policy: "letc".into(),
            mean_revenue: letc_mean,
            std_revenue: letc_std,
            improvement_pct: improvement_pct(letc_mean, offline_mean),
        },
        RevenueRow {
            policy: "offline".into(),
            mean_revenue: offline_mean,
            std_revenue: offline_std,
            improvement_pct: 0.0,
        },
        RevenueRow {
            policy: "oracle".into(),
            mean_revenue: oracle_mean,
            std_revenue: oracle_std,
            improvement_pct: improvement_pct(oracle_mean, offline_mean),
        },
    ];
    Ok(())
}

/// Runs LetC, the offline policy and the oracle for `config.trials` seeds.
pub fn compare_revenue(
    theta: &ModelParams,
    model: &FeatureModel,
    bounds: &PriceBounds,
    start_weekday: usize,
    krr: KrrModel,
    config: &CalibrationConfig,
) -> Result<RevenueComparison> {
    let plan = plan_experiment(config.horizon, FEATURE_DIM, config.c1, config.c2, config.c3)?;
    let letc = PolicyKind::LetC(plan);
    let offline = krr_policy(krr);
    let rows = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let env_seed = config.seed.wrapping_add(trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let env = build_environment(theta, model, bounds, start_weekday, env_seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(env_seed ^ 0xA5A5);
            let l = evaluate_policy_revenue(&letc, &mut env.clone(), config.horizon, &mut rng)?;
            let o = evaluate_policy_revenue(&offline, &mut env.clone(), config.horizon, &mut rng)?;
            Ok((l.expected_revenue, o.expected_revenue, l.oracle_revenue))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RevenueComparison {
        letc: rows.iter().map(|r| r.0).collect(),
        offline: rows.iter().map(|r| r.1).collect(),
        oracle: rows.iter().map(|r| r.2).collect(),
    })
}

/// Calibrates every product concurrently; reports come back in product-id order.
pub fn calibrate_all(records: &[SalesRecord], config: &CalibrationConfig) -> Vec<CalibrationReport> {
    let groups: Vec<(String, Vec<SalesRecord>)> = group_by_product(records).into_iter().collect();
    groups
        .par_iter()
        .map(|(id, recs)| calibrate_product(id, recs, config))
        .collect()
}

/// Ground truth of a synthetic product and the seller's historical pricing rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProduct {
    pub id: String,
    pub theta: ModelParams,
    pub features: FeatureModel,
    pub bounds: PriceBounds,
    /// Historical price is `markup + (comp_min + comp_max)/2` plus Gaussian noise.
    pub markup: f64,
    pub price_noise: f64,
}

/// A product whose optimal price sits near 10 inside `[7, 13]`, priced
/// historically by a competitor-following rule with a positive markup.
pub fn synthetic_product<R: Rng + ?Sized>(id: &str, rng: &mut R) -> Result<SyntheticProduct> {
    let mut alpha = vec![0.0; FEATURE_DIM];
    let mut beta = vec![0.0; FEATURE_DIM];
    for w in 0..WEEKDAYS {
        alpha[w] = 1500.0 + rng.random_range(-200.0..200.0);
        beta[w] = -100.0 + rng.random_range(-10.0..10.0);
    }
    alpha[7] = 25.0;
    alpha[8] = 25.0;
    beta[7] = 0.5;
    beta[8] = -0.5;
    let weekdays = (0..WEEKDAYS)
        .map(|_| {
            let lo = 8.5 + rng.random_range(-0.5..0.5);
            let hi = lo + 2.5 + rng.random_range(-0.5..0.5);
            PairGaussian {
                mean: [lo, hi],
                cov: [[1.0, 0.5], [0.5, 1.0]],
                count: 0,
            }
        })
        .collect();
    Ok(SyntheticProduct {
        id: id.to_string(),
        theta: ModelParams::new(alpha, beta)?,
        features: FeatureModel { weekdays },
        bounds: PriceBounds::new(7.0, 13.0)?,
        markup: rng.random_range(1.0..2.0),
        price_noise: 1.0,
    })
}

/// `n_days` of daily history from `start`, with Poisson sales.
pub fn generate_history<R: Rng + ?Sized>(
    product: &SyntheticProduct,
    start: NaiveDate,
    n_days: usize,
    rng: &mut R,
) -> Result<Vec<SalesRecord>> {
    let mut out = Vec::with_capacity(n_days);
    let mut date = start;
    for _ in 0..n_days {
        let w = date.weekday().num_days_from_monday() as usize;
        let x = match rejection_sample(&product.features, &product.theta, &product.bounds, w, rng, DEFAULT_MAX_TRIES)? {
            Draw::Accepted(x) => x,
            Draw::Discard { weekday, tries } => return Err(Error::Discarded { weekday, tries }),
        };
        let noise: f64 = rng.sample(StandardNormal);
        let raw = product.markup + 0.5 * (x[7] + x[8]) + product.price_noise * noise;
        let price = raw.clamp(product.bounds.lower, product.bounds.upper);
        let mean = mean_demand(&product.theta, &x, price)?;
        let units = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(rng) as u64
        } else {
            0
        };
        out.push(SalesRecord {
            product_id: product.id.clone(),
            date,
            price,
            units_sold: units,
            comp_min: x[7],
            comp_max: x[8],
            min_allowed: product.bounds.lower,
            max_allowed: product.bounds.upper,
        });
        date = date.succ_opt().ok_or_else(|| Error::InvalidArgument("date overflow".into()))?;
    }
    Ok(out)
}

/// `n_products` synthetic products with `n_days` of history each.
pub fn synthetic_dataset(n_products: usize, n_days: usize, seed: u64) -> Result<(Vec<SyntheticProduct>, Vec<SalesRecord>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2020, 1, 6).ok_or_else(|| Error::InvalidArgument("bad date".into()))?;
    let mut products = Vec::with_capacity(n_products);
    let mut records = Vec::with_capacity(n_products * n_days);
    for k in 0..n_products {
        let product = synthetic_product(&format!("SKU-{k:03}"), &mut rng)?;
        records.extend(generate_history(&product, start, n_days, &mut rng)?);
        products.push(product);
    }
    Ok((products, records))
}
