//! The contextual linear demand environment.
//!
//! Expected demand is `xᵀα + p·(xᵀβ)`; with a negative slope `xᵀβ` the
//! expected revenue `p·(xᵀα + p·xᵀβ)` is a concave quadratic in the price with
//! maximizer `p*(x) = −xᵀα / (2·xᵀβ)`. Regret is always accounted against
//! expected revenue, never against realized noisy revenue.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::calibrate::WeekdaySampler;
use crate::error::{Error, Result};
use crate::linalg::dot;

/// Slopes with `|xᵀβ|` at or below this are treated as degenerate.
pub const SLOPE_EPS: f64 = 1e-8;

/// Demand parameters `θ = (α, β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ModelParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(Error::DimensionMismatch {
                expected: alpha.len(),
                got: beta.len(),
            });
        }
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { alpha, beta })
    }

    /// Splits a stacked `(α, β)` vector of length `2d`.
    pub fn from_stacked(theta: &[f64]) -> Result<Self> {
        if !theta.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "stacked parameter vector has odd length {}",
                theta.len()
            )));
        }
        let d = theta.len() / 2;
        Self::new(theta[..d].to_vec(), theta[d..].to_vec())
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }

    /// `xᵀα`.
    pub fn intercept(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(dot(x, &self.alpha))
    }

    /// `xᵀβ`.
    pub fn slope(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(dot(x, &self.beta))
    }

    /// The vector `(α, 2β)`, which `Σ*` annihilates.
    pub fn null_direction(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .copied()
            .chain(self.beta.iter().map(|b| 2.0 * b))
            .collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Feasible price interval `[lower, upper]` with interior margin `δ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBounds {
    pub lower: f64,
    pub upper: f64,
    pub margin: f64,
}

impl PriceBounds {
    /// Bounds with the default margin `0.05·(u − ℓ)`.
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        Self::with_margin(lower, upper, 0.05 * (upper - lower))
    }

    pub fn with_margin(lower: f64, upper: f64, margin: f64) -> Result<Self> {
        let b = Self {
            lower,
            upper,
            margin,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            lower,
            upper,
            margin,
        } = *self;
        if !(lower.is_finite() && upper.is_finite() && margin.is_finite()) {
            return Err(Error::InvalidBounds("non-finite bound".into()));
        }
        if !(0.0 <= lower && lower < upper) {
            return Err(Error::InvalidBounds(format!(
                "need 0 <= lower < upper, got [{lower}, {upper}]"
            )));
        }
        if !(margin >= 0.0 && 2.0 * margin < upper - lower) {
            return Err(Error::InvalidBounds(format!(
                "margin {margin} incompatible with [{lower}, {upper}]"
            )));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }

    /// Whether `p` lies in `[ℓ + δ̄, u − δ̄]`.
    pub fn is_interior(&self, p: f64) -> bool {
        self.lower + self.margin <= p && p <= self.upper - self.margin
    }
}

/// `max(min(p, u), ℓ)`.
pub fn clip(p: f64, bounds: &PriceBounds) -> f64 {
    p.min(bounds.upper).max(bounds.lower)
}

/// `xᵀα + p·(xᵀβ)`.
pub fn mean_demand(theta: &ModelParams, x: &[f64], p: f64) -> Result<f64> {
    Ok(theta.intercept(x)? + p * theta.slope(x)?)
}

/// `p · mean_demand`.
pub fn expected_revenue(theta: &ModelParams, x: &[f64], p: f64) -> Result<f64> {
    Ok(p * mean_demand(theta, x, p)?)
}

fn checked_slope(theta: &ModelParams, x: &[f64]) -> Result<f64> {
    let slope = theta.slope(x)?;
    if slope.abs() <= SLOPE_EPS {
        return Err(Error::DegenerateSlope { slope });
    }
    Ok(slope)
}

/// Unclipped revenue-maximizing price `−xᵀα / (2·xᵀβ)`.
pub fn optimal_price(theta: &ModelParams, x: &[f64]) -> Result<f64> {
    let slope = checked_slope(theta, x)?;
    Ok(-theta.intercept(x)? / (2.0 * slope))
}

/// `−(xᵀα)² / (4·xᵀβ)`.
pub fn optimal_revenue(theta: &ModelParams, x: &[f64]) -> Result<f64> {
    let slope = checked_slope(theta, x)?;
    let a = theta.intercept(x)?;
    Ok(-a * a / (4.0 * slope))
}

/// `r*(x) − r(x, p; θ*) = (−xᵀβ*)·(p − p*(x))²`.
pub fn instantaneous_regret(theta_true: &ModelParams, x: &[f64], p: f64) -> Result<f64> {
    let slope = checked_slope(theta_true, x)?;
    let p_star = -theta_true.intercept(x)? / (2.0 * slope);
    let gap = p - p_star;
    Ok(-slope * gap * gap)
}

/// Context distribution `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSampler {
    /// First coordinate 1, the rest i.i.d. Uniform[−1, 1].
    ConstantPlusUniform { dim: usize },
    /// `x₁ ∈ {1/2, 2}` w.p. `{4/5, 1/5}`; `xᵢ ∈ {2, −2, 0}` w.p. `{1/8, 1/8, 3/4}` for `i ≥ 2`.
    DiscreteExample { dim: usize },
    FiniteSupport {
        points: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    },
    /// Weekday one-hot plus competitor prices, drawn by rejection sampling.
    WeekdayCompetitor(Box<WeekdaySampler>),
}

impl FeatureSampler {
    pub fn finite_support(points: Vec<Vec<f64>>, probabilities: Vec<f64>) -> Result<Self> {
        let s = FeatureSampler::FiniteSupport {
            points,
            probabilities,
        };
        s.validate()?;
        Ok(s)
    }

    /// A sampler that always returns `x`.
    pub fn fixed(x: Vec<f64>) -> Self {
        FeatureSampler::FiniteSupport {
            points: vec![x],
            probabilities: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureSampler::ConstantPlusUniform { dim } | FeatureSampler::DiscreteExample { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidArgument("feature dimension must be >= 1".into()));
                }
            }
            FeatureSampler::FiniteSupport {
                points,
                probabilities,
            } => {
                if points.is_empty() || points.len() != probabilities.len() {
                    return Err(Error::InvalidArgument(
                        "finite support needs one probability per point".into(),
                    ));
                }
                let d = points[0].len();
                if d == 0 || points.iter().any(|p| p.len() != d) {
                    return Err(Error::InvalidArgument(
                        "finite support points must share a positive dimension".into(),
                    ));
                }
                if probabilities.iter().any(|&q| !(q >= 0.0)) {
                    return Err(Error::InvalidArgument("negative probability".into()));
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "probabilities sum to {total}, not 1"
                    )));
                }
            }
            FeatureSampler::WeekdayCompetitor(_) => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureSampler::ConstantPlusUniform { dim } | FeatureSampler::DiscreteExample { dim } => *dim,
            FeatureSampler::FiniteSupport { points, .. } => points[0].len(),
            FeatureSampler::WeekdayCompetitor(_) => crate::calibrate::FEATURE_DIM,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            FeatureSampler::ConstantPlusUniform { dim } => {
                let mut x = Vec::with_capacity(*dim);
                x.push(1.0);
                x.extend((1..*dim).map(|_| rng.random_range(-1.0..=1.0)));
                Ok(x)
            }
            FeatureSampler::DiscreteExample { dim } => {
                let mut x = Vec::with_capacity(*dim);
                x.push(if rng.random::<f64>() < 0.8 { 0.5 } else { 2.0 });
                for _ in 1..*dim {
                    let u: f64 = rng.random();
                    x.push(if u < 0.125 {
                        2.0
                    } else if u < 0.25 {
                        -2.0
                    } else {
                        0.0
                    });
                }
                Ok(x)
            }
            FeatureSampler::FiniteSupport {
                points,
                probabilities,
            } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (point, &q) in points.iter().zip(probabilities.iter()) {
                    acc += q;
                    if u < acc {
                        return Ok(point.clone());
                    }
                }
                Ok(points.last().cloned().unwrap_or_default())
            }
            FeatureSampler::WeekdayCompetitor(sampler) => sampler.sample(rng),
        }
    }
}

/// Demand noise around the linear mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Additive `N(0, σ²)` shock.
    GaussianShock { sigma: f64 },
    /// `D ~ Poisson(mean demand)`.
    PoissonDemand,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::GaussianShock { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => Err(
                Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }
}

/// One observed `(x_t, p_t, D_t)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub x: Vec<f64>,
    pub price: f64,
    pub demand: f64,
    /// 1-based step index.
    pub step: usize,
}

/// Everything needed to spin up an environment: ground truth, context law,
/// demand noise and feasible prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub theta: ModelParams,
    pub sampler: FeatureSampler,
    pub noise: NoiseModel,
    pub bounds: PriceBounds,
}

impl Instance {
    pub fn new(
        theta: ModelParams,
        sampler: FeatureSampler,
        noise: NoiseModel,
        bounds: PriceBounds,
    ) -> Result<Self> {
        sampler.validate()?;
        noise.validate()?;
        bounds.validate()?;
        if sampler.dim() != theta.dim() {
            return Err(Error::DimensionMismatch {
                expected: theta.dim(),
                got: sampler.dim(),
            });
        }
        Ok(Self {
            theta,
            sampler,
            noise,
            bounds,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    /// A fresh environment whose context and noise streams derive from `seed`.
    pub fn environment(&self, seed: u64) -> Environment {
        Environment::new(self.clone(), seed)
    }

    /// Empirical ranges of `xᵀα*` and `−xᵀβ*` over `n` sampled contexts.
    pub fn regularity_ranges(&self, n: usize, seed: u64) -> Result<RegularityRanges> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sampler = self.sampler.clone();
        let mut r = RegularityRanges {
            intercept: (f64::INFINITY, f64::NEG_INFINITY),
            neg_slope: (f64::INFINITY, f64::NEG_INFINITY),
            optimal_price: (f64::INFINITY, f64::NEG_INFINITY),
        };
        for _ in 0..n {
            let x = sampler.sample(&mut rng)?;
            let a = self.theta.intercept(&x)?;
            let b = -self.theta.slope(&x)?;
            let p = optimal_price(&self.theta, &x)?;
            widen(&mut r.intercept, a);
            widen(&mut r.neg_slope, b);
            widen(&mut r.optimal_price, p);
        }
        Ok(r)
    }
}

fn widen(range: &mut (f64, f64), v: f64) {
    range.0 = range.0.min(v);
    range.1 = range.1.max(v);
}

/// Observed `[min, max]` of the regularity quantities of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityRanges {
    pub intercept: (f64, f64),
    pub neg_slope: (f64, f64),
    pub optimal_price: (f64, f64),
}

/// A running environment: draws contexts, answers prices with noisy demand.
///
/// Contexts and demand noise come from two independent streams, so two
/// policies run against environments with the same seed see the same context
/// sequence regardless of their prices.
#[derive(Debug, Clone)]
pub struct Environment {
    instance: Instance,
    context_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    pending: Option<Vec<f64>>,
    t: usize,
    poisson_clamped: usize,
}

impl Environment {
    pub fn new(instance: Instance, seed: u64) -> Self {
        let mut context_rng = ChaCha8Rng::seed_from_u64(seed);
        context_rng.set_stream(1);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(2);
        Self {
            instance,
            context_rng,
            noise_rng,
            pending: None,
            t: 0,
            poisson_clamped: 0,
        }
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn theta(&self) -> &ModelParams {
        &self.instance.theta
    }

    pub fn bounds(&self) -> &PriceBounds {
        &self.instance.bounds
    }

    pub fn dim(&self) -> usize {
        self.instance.dim()
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.t
    }

    /// How many times a negative Poisson mean was clamped to zero.
    pub fn poisson_clamped(&self) -> usize {
        self.poisson_clamped
    }

    /// The context for the upcoming step, drawn on first access.
    pub fn observe(&mut self) -> Result<&[f64]> {
        if self.pending.is_none() {
            let x = self.instance.sampler.sample(&mut self.context_rng)?;
            self.pending = Some(x);
        }
        Ok(self.pending.as_deref().unwrap_or_default())
    }

    /// Posts price `p` for the pending context and draws the demand.
    pub fn step(&mut self, p: f64) -> Result<Interaction> {
        let bounds = self.instance.bounds;
        if !bounds.contains(p) {
            return Err(Error::PriceOutOfBounds {
                price: p,
                lower: bounds.lower,
                upper: bounds.upper,
            });
        }
        self.observe()?;
        let x = self.pending.take().unwrap_or_default();
        let mean = mean_demand(&self.instance.theta, &x, p)?;
        let demand = match self.instance.noise {
            NoiseModel::GaussianShock { sigma } => {
                if sigma == 0.0 {
                    mean
                } else {
                    let normal = Normal::new(0.0, sigma)
                        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    mean + normal.sample(&mut self.noise_rng)
                }
            }
            NoiseModel::PoissonDemand => {
                if mean < 0.0 {
                    self.poisson_clamped += 1;
                }
                if mean <= 0.0 {
                    0.0
                } else {
                    let poisson =
                        Poisson::new(mean).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    poisson.sample(&mut self.noise_rng)
                }
            }
        };
        self.t += 1;
        Ok(Interaction {
            x,
            price: p,
            demand,
            step: self.t,
        })
    }
}

/// Ground truth of the simulation study for `d ≥ 4`, with the slope sign
/// chosen so that `xᵀβ* < 0`: `α* = (1, 1/5, 1/5, 0, …)`, `β* = (−1, 1/5, 1/5, 0, …)`.
pub fn benchmark_theta(d: usize) -> Result<ModelParams> {
    if d < 3 {
        return Err(Error::InvalidArgument(format!(
            "benchmark instance needs d >= 3, got {d}"
        )));
    }
    let mut alpha = vec![0.0; d];
    let mut beta = vec![0.0; d];
    alpha[..3].copy_from_slice(&[1.0, 0.2, 0.2]);
    beta[..3].copy_from_slice(&[-1.0, 0.2, 0.2]);
    ModelParams::new(alpha, beta)
}

/// Default feasible prices of the benchmark instance, where `p*(x) ∈ [0.21, 1.17]`.
pub fn benchmark_bounds() -> PriceBounds {
    PriceBounds {
        lower: 0.0,
        upper: 2.0,
        margin: 0.1,
    }
}

/// Constant-plus-uniform contexts, benchmark ground truth, Gaussian shocks.
pub fn benchmark_instance(d: usize, sigma: f64) -> Result<Instance> {
    Instance::new(
        benchmark_theta(d)?,
        FeatureSampler::ConstantPlusUniform { dim: d },
        NoiseModel::GaussianShock { sigma },
        benchmark_bounds(),
    )
}

/// The discrete worked example: `α* = (1, 1/8, 0, …)`, `β* = (−1, 1/8, 0, …)`.
pub fn discrete_example_instance(d: usize, sigma: f64) -> Result<Instance> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "discrete example needs d >= 2, got {d}"
        )));
    }
    let mut alpha = vec![0.0; d];
    let mut beta = vec![0.0; d];
    alpha[..2].copy_from_slice(&[1.0, 0.125]);
    beta[..2].copy_from_slice(&[-1.0, 0.125]);
    Instance::new(
        ModelParams::new(alpha, beta)?,
        FeatureSampler::DiscreteExample { dim: d },
        NoiseModel::GaussianShock { sigma },
        PriceBounds::new(0.0, 7.0)?,
    )
}

/// An instance whose optimal price is the same for every context, so `Σ*` is
/// singular in more than the generic direction.
///
/// `d = 1` uses `x ≡ 1`; `d = 2` uses `x = (1, U[−1, 1])` with
/// `α* = (1, 1/5)`, `β* = (−1, −1/5)` and `p* ≡ 1/2`.
pub fn constant_price_instance(d: usize, sigma: f64) -> Result<Instance> {
    let (theta, sampler) = match d {
        1 => (
            ModelParams::new(vec![1.0], vec![-1.0])?,
            FeatureSampler::fixed(vec![1.0]),
        ),
        2 => (
            ModelParams::new(vec![1.0, 0.2], vec![-1.0, -0.2])?,
            FeatureSampler::ConstantPlusUniform { dim: 2 },
        ),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "constant-price instance defined for d in {{1, 2}}, got {d}"
            )))
        }
    };
    Instance::new(
        theta,
        sampler,
        NoiseModel::GaussianShock { sigma },
        PriceBounds::new(0.0, 1.0)?,
    )
}
