//! The limiting second-moment matrix `Σ* = E[z(x) z(x)ᵀ]`, `z(x) = (x, x·p*(x))`,
//! and the quantities built from its spectrum.
//!
//! `Σ*` always annihilates `(α*, 2β*)`, so its smallest eigenvalue is zero.
//! The degenerate dimension `d̃(η) = Σ_k min{η²/λ_k, 1}` counts how much of
//! the spectrum sits below `η²`, and the critical radius `η*` is where the
//! singularity function `S(η) = √(d̃(η)/2d)` meets `κ√(2d/T)·ln T / η²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{optimal_price, FeatureSampler, Instance};
use crate::error::{Error, Result};
use crate::estimator::augment;
use crate::linalg::{dot, norm2, outer_accumulate, symmetric_eigen, Matrix};

/// Bisection stops once `|g(η)|` is below this (or the bracket is exhausted).
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Lower end of the critical-radius bracket.
pub const ETA_FLOOR: f64 = 1e-8;
/// Default ζ for the regularity check.
pub const DEFAULT_ZETA: f64 = 2.0;
/// Samples per Monte Carlo shard of [`estimate_sigma_star`].
pub const SHARD_SIZE: usize = 1 << 16;

/// Monte Carlo estimate of `Σ*` from `n_samples` contexts.
///
/// Samples are split into fixed-size shards, each with its own stream derived
/// from `seed`; shard sums are reduced in shard order, so the result does not
/// depend on the number of worker threads.
pub fn estimate_sigma_star(instance: &Instance, n_samples: usize, seed: u64) -> Result<Matrix> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let n2 = 2 * instance.dim();
    let n_shards = n_samples.div_ceil(SHARD_SIZE);
    let partials: Vec<Result<Matrix>> = (0..n_shards)
        .into_par_iter()
        .map(|shard| {
            let take = SHARD_SIZE.min(n_samples - shard * SHARD_SIZE);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard as u64);
            let mut sampler = instance.sampler.clone();
            let mut acc = Matrix::zeros(n2, n2);
            for _ in 0..take {
                let x = sampler.sample(&mut rng)?;
                let p = optimal_price(&instance.theta, &x)?;
                outer_accumulate(&mut acc, &augment(&x, p), 1.0)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Matrix::zeros(n2, n2);
    for part in partials {
        total = total.add(&part?)?;
    }
    Ok(total.scale(1.0 / n_samples as f64))
}

/// Clamped, sorted spectrum of a `2d × 2d` second-moment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<f64>,
    pub n_samples: usize,
    /// Normalized `(α*, 2β*)`, when the summary came from an instance.
    pub null_candidate: Option<Vec<f64>>,
}

impl SpectrumSummary {
    /// Summary of an explicit spectrum; negatives are clamped to zero and the
    /// values sorted non-increasingly.
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() || !eigenvalues.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "spectrum length must be a positive even number, got {}",
                eigenvalues.len()
            )));
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrum"));
        }
        eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            eigenvalues,
            n_samples: 0,
            null_candidate: None,
        })
    }

    pub fn from_matrix(sigma: &Matrix, n_samples: usize, null_direction: Option<&[f64]>) -> Result<Self> {
        let eig = symmetric_eigen(sigma)?;
        let mut s = Self::from_eigenvalues(eig.clamped_eigenvalues())?;
        s.n_samples = n_samples;
        s.null_candidate = null_direction.map(normalized);
        Ok(s)
    }

    /// Estimates `Σ*` for `instance` and summarizes it.
    pub fn estimate(instance: &Instance, n_samples: usize, seed: u64) -> Result<Self> {
        let sigma = estimate_sigma_star(instance, n_samples, seed)?;
        Self::from_matrix(&sigma, n_samples, Some(&instance.theta.null_direction()))
    }

    /// Context dimension `d` (half the spectrum length).
    pub fn dim(&self) -> usize {
        self.eigenvalues.len() / 2
    }

    pub fn top(&self) -> f64 {
        self.eigenvalues[0]
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm2(v);
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|a| a / n).collect()
}

/// Quadratic form of `Σ*` along the normalized `(α*, 2β*)` and the second-smallest eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullSpaceReport {
    pub residual: f64,
    pub second_smallest: f64,
}

pub fn verify_null_space(sigma: &Matrix, null_direction: &[f64]) -> Result<NullSpaceReport> {
    let v = normalized(null_direction);
    let residual = sigma.quadratic_form(&v)?.abs();
    let eig = symmetric_eigen(sigma)?;
    let ev = eig.clamped_eigenvalues();
    let second_smallest = if ev.len() >= 2 { ev[ev.len() - 2] } else { f64::NAN };
    Ok(NullSpaceReport {
        residual,
        second_smallest,
    })
}

/// `d̃(η) = Σ_k min{η²/λ_k, 1}`, with `min{η²/0, 1} = 1`.
pub fn degenerate_dimension(summary: &SpectrumSummary, eta: f64) -> f64 {
    let e2 = eta * eta;
    summary
        .eigenvalues
        .iter()
        .map(|&l| if l <= 0.0 { 1.0 } else { (e2 / l).min(1.0) })
        .sum()
}

/// `S(η) = √(d̃(η) / 2d)`.
pub fn singularity(summary: &SpectrumSummary, eta: f64) -> f64 {
    (degenerate_dimension(summary, eta) / summary.eigenvalues.len() as f64).sqrt()
}

/// `(√T / ln T) / (κ √(2d))`.
pub fn snr(horizon: f64, d: usize, kappa: f64) -> f64 {
    (horizon.sqrt() / horizon.ln()) / (kappa * (2.0 * d as f64).sqrt())
}

/// Right-hand side of the critical inequality, `κ √(2d/T) · ln T / η²`.
pub fn critical_rhs(horizon: f64, d: usize, kappa: f64, eta: f64) -> f64 {
    1.0 / (snr(horizon, d, kappa) * eta * eta)
}

/// `g(η) = S(η) − κ √(2d/T) · ln T / η²`, non-decreasing in `η`.
pub fn critical_gap(summary: &SpectrumSummary, horizon: f64, kappa: f64, eta: f64) -> f64 {
    singularity(summary, eta) - critical_rhs(horizon, summary.dim(), kappa, eta)
}

/// Solution of the critical inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSolution {
    /// Perturbation radius to use: the crossing, or `eta_max` when capped.
    pub eta_star: f64,
    /// Where `g` changes sign.
    pub crossing: f64,
    /// `|g(crossing)|`.
    pub residual: f64,
    pub lhs_value: f64,
    pub rhs_value: f64,
    pub bracket: (f64, f64),
    /// The crossing lies beyond `eta_max`.
    pub capped: bool,
    pub horizon: f64,
    pub kappa: f64,
    pub zeta: f64,
    /// Whether the crossing is `zeta`-regular.
    pub regular: bool,
}

/// Bisection for the unique crossing of `g` on `[ETA_FLOOR, max(eta_max, √λ₁ + 1)]`.
pub fn solve_critical_eta(
    summary: &SpectrumSummary,
    horizon: f64,
    kappa: f64,
    eta_max: f64,
) -> Result<CriticalSolution> {
    if !(horizon >= 3.0) {
        return Err(Error::InvalidArgument(format!("horizon must be >= 3, got {horizon}")));
    }
    if !(kappa > 0.0) || !(eta_max > 0.0) {
        return Err(Error::InvalidArgument("kappa and eta_max must be positive".into()));
    }
    let g = |eta: f64| critical_gap(summary, horizon, kappa, eta);
    let upper = eta_max.max(summary.top().sqrt() + 1.0);
    let (mut lo, mut hi) = (ETA_FLOOR, upper);
    if g(hi) < 0.0 {
        return Err(Error::NoBracket { lower: lo, upper: hi });
    }
    let mut mid = hi;
    if g(lo) < 0.0 {
        for _ in 0..400 {
            mid = 0.5 * (lo + hi);
            let v = g(mid);
            if v.abs() <= RESIDUAL_TOL * 1e-3 || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            if v < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    } else {
        mid = lo;
    }
    let crossing = mid;
    let capped = crossing > eta_max;
    let eta_star = if capped { eta_max } else { crossing };
    let mut sol = CriticalSolution {
        eta_star,
        crossing,
        residual: g(crossing).abs(),
        lhs_value: singularity(summary, crossing),
        rhs_value: critical_rhs(horizon, summary.dim(), kappa, crossing),
        bracket: (ETA_FLOOR, upper),
        capped,
        horizon,
        kappa,
        zeta: DEFAULT_ZETA,
        regular: false,
    };
    sol.regular = check_regular(summary, &sol, DEFAULT_ZETA);
    Ok(sol)
}

/// Whether `η*/ζ` fails the critical inequality (up to the residual tolerance).
pub fn check_regular(summary: &SpectrumSummary, solution: &CriticalSolution, zeta: f64) -> bool {
    check_regular_at(summary, solution.crossing, solution.horizon, solution.kappa, zeta)
}

/// [`check_regular`] for an arbitrary candidate radius.
pub fn check_regular_at(summary: &SpectrumSummary, eta: f64, horizon: f64, kappa: f64, zeta: f64) -> bool {
    critical_gap(summary, horizon, kappa, eta / zeta) < RESIDUAL_TOL
}

/// Exact low-order moments of one coordinate and the conditions they meet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMoments {
    pub mean: f64,
    pub second: f64,
    pub third: f64,
    pub fourth: f64,
    /// First coordinate: mean and third moment are not required to vanish.
    pub exempt: bool,
    pub centered_ok: bool,
    pub unit_variance_ok: bool,
    pub kurtosis_ok: bool,
}

impl CoordinateMoments {
    pub fn passes(&self) -> bool {
        self.centered_ok && self.unit_variance_ok && self.kurtosis_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub c_mo: f64,
    pub coordinates: Vec<CoordinateMoments>,
}

impl MomentReport {
    pub fn passes(&self) -> bool {
        self.coordinates.iter().all(CoordinateMoments::passes)
    }
}

const MOMENT_TOL: f64 = 1e-12;

/// Exact marginal moments by enumeration over a finite-support law.
///
/// Requires `E xᵢ = E xᵢ³ = 0` for `i ≥ 2`, and `E xᵢ² = 1`,
/// `E xᵢ⁴ > 1 + c_mo` for every coordinate.
pub fn moment_condition_check(sampler: &FeatureSampler, c_mo: f64) -> Result<MomentReport> {
    let marginals = finite_marginals(sampler)?;
    let coordinates = marginals
        .iter()
        .enumerate()
        .map(|(i, support)| {
            let m = |k: i32| support.iter().map(|&(v, q)| q * v.powi(k)).sum::<f64>();
            let (mean, second, third, fourth) = (m(1), m(2), m(3), m(4));
            let exempt = i == 0;
            CoordinateMoments {
                mean,
                second,
                third,
                fourth,
                exempt,
                centered_ok: exempt || (mean.abs() <= MOMENT_TOL && third.abs() <= MOMENT_TOL),
                unit_variance_ok: (second - 1.0).abs() <= MOMENT_TOL,
                kurtosis_ok: fourth > 1.0 + c_mo,
            }
        })
        .collect();
    Ok(MomentReport { c_mo, coordinates })
}

/// Per-coordinate `(value, probability)` marginals of a finite-support law.
pub fn finite_marginals(sampler: &FeatureSampler) -> Result<Vec<Vec<(f64, f64)>>> {
    match sampler {
        FeatureSampler::FiniteSupport {
            points,
            probabilities,
        } => {
            let d = points[0].len();
            Ok((0..d)
                .map(|i| {
                    let mut marg: Vec<(f64, f64)> = Vec::new();
                    for (p, &q) in points.iter().zip(probabilities) {
                        match marg.iter_mut().find(|(v, _)| *v == p[i]) {
                            Some(entry) => entry.1 += q,
                            None => marg.push((p[i], q)),
                        }
                    }
                    marg
                })
                .collect())
        }
        FeatureSampler::DiscreteExample { dim } => {
            let mut out = vec![vec![(0.5, 0.8), (2.0, 0.2)]];
            out.extend((1..*dim).map(|_| vec![(2.0, 0.125), (-2.0, 0.125), (0.0, 0.75)]));
            Ok(out)
        }
        _ => Err(Error::InvalidArgument(
            "moment check needs a finite-support sampler".into(),
        )),
    }
}

/// A symmetric matrix stored as `Σ_k s_k u_k u_kᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankSymmetric {
    pub weights: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl LowRankSymmetric {
    pub fn dense(&self) -> Matrix {
        let d = self.vectors.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(d, d);
        for (w, u) in self.weights.iter().zip(&self.vectors) {
            // Dimensions agree by construction.
            let _ = outer_accumulate(&mut m, u, *w);
        }
        m
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.vectors)
            .map(|(w, u)| {
                let t = dot(u, x);
                w * t * t
            })
            .sum()
    }

    /// Random rank-`≤ 4` symmetric matrix with unit Frobenius norm.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let rank = rng.random_range(1..=4usize.min(d));
        let vectors: Vec<Vec<f64>> = (0..rank)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let weights: Vec<f64> = (0..rank).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = Self { weights, vectors };
        let f = a.dense().frobenius_norm();
        if f > 0.0 {
            a.weights.iter_mut().for_each(|w| *w /= f);
        }
        a
    }
}

/// Monte Carlo estimate of `E[(xᵀAx)²]` for one matrix.
pub fn quadratic_fourth_moment<R: Rng + ?Sized>(
    sampler: &FeatureSampler,
    a: &LowRankSymmetric,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut s = sampler.clone();
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let q = a.quadratic(&s.sample(rng)?);
        acc += q * q;
    }
    Ok(acc / n_samples.max(1) as f64)
}

/// Randomized lower-bound probe of the anti-concentration constant: the
/// smallest Monte Carlo `E[(xᵀAx)²]` over `n_matrices` random unit-Frobenius
/// rank-`≤ 4` symmetric matrices, all evaluated on one shared sample.
pub fn anti_concentration_probe<R: Rng + ?Sized>(
    sampler: &FeatureSampler,
    n_matrices: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let d = sampler.dim();
    let mut s = sampler.clone();
    let xs: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| s.sample(rng))
        .collect::<Result<_>>()?;
    let mats: Vec<LowRankSymmetric> = (0..n_matrices).map(|_| LowRankSymmetric::random(d, rng)).collect();
    let min = mats
        .par_iter()
        .map(|a| {
            xs.iter()
                .map(|x| {
                    let q = a.quadratic(x);
                    q * q
                })
                .sum::<f64>()
                / n_samples.max(1) as f64
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(min)
}
