//! Least squares on the augmented design `z = (x, x·p)`.
//!
//! The demand model is linear in `z` with coefficient `θ = (α, β)`, so both
//! stage fits are ordinary least squares on the normal equations
//! `(Σ z zᵀ) θ = Σ z D`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::demand::{clip, optimal_price, Interaction, ModelParams, PriceBounds};
use crate::error::{Error, Result};
use crate::linalg::{outer_accumulate, solve_spd, symmetric_eigen, trace_inverse, Matrix};

/// `(x, x·p)`.
pub fn augment(x: &[f64], p: f64) -> Vec<f64> {
    x.iter().copied().chain(x.iter().map(|v| v * p)).collect()
}

/// Ordered log of interactions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    interactions: Vec<Interaction>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, interaction: Interaction) -> Result<()> {
        if let Some(last) = self.interactions.last() {
            if interaction.step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "history steps must increase: {} after {}",
                    interaction.step, last.step
                )));
            }
        }
        self.interactions.push(interaction);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// Interactions with positions in `range` (0-based, half-open).
    pub fn segment(&self, range: Range<usize>) -> &[Interaction] {
        let end = range.end.min(self.interactions.len());
        let start = range.start.min(end);
        &self.interactions[start..end]
    }

    pub fn stats(&self, range: Range<usize>, dim: usize) -> Result<DesignStats> {
        DesignStats::from_interactions(dim, self.segment(range))
    }
}

/// Streaming sufficient statistics of the augmented design.
///
/// Sums are stored; [`gram`](Self::gram) and [`moment`](Self::moment) return
/// the running means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignStats {
    dim: usize,
    gram_sum: Matrix,
    moment_sum: Vec<f64>,
    count: usize,
}

impl DesignStats {
    /// Empty statistics for context dimension `dim` (augmented dimension `2·dim`).
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gram_sum: Matrix::zeros(2 * dim, 2 * dim),
            moment_sum: vec![0.0; 2 * dim],
            count: 0,
        }
    }

    pub fn from_interactions(dim: usize, interactions: &[Interaction]) -> Result<Self> {
        let mut s = Self::new(dim);
        for i in interactions {
            s.accumulate(i)?;
        }
        Ok(s)
    }

    pub fn accumulate(&mut self, interaction: &Interaction) -> Result<()> {
        self.add(&interaction.x, interaction.price, interaction.demand)
    }

    pub fn add(&mut self, x: &[f64], price: f64, demand: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let z = augment(x, price);
        outer_accumulate(&mut self.gram_sum, &z, 1.0)?;
        for (m, zi) in self.moment_sum.iter_mut().zip(&z) {
            *m += zi * demand;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &DesignStats) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.gram_sum = self.gram_sum.add(&other.gram_sum)?;
        for (a, b) in self.moment_sum.iter_mut().zip(&other.moment_sum) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `Σ z zᵀ / n` (zero matrix when empty).
    pub fn gram(&self) -> Matrix {
        if self.count == 0 {
            return self.gram_sum.clone();
        }
        self.gram_sum.scale(1.0 / self.count as f64)
    }

    /// `Σ z D / n` (zero vector when empty).
    pub fn moment(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.moment_sum.iter().map(|m| m / n).collect()
    }
}

/// Least-squares estimate `θ̂` solving `gram · θ̂ = moment`.
pub fn ols_fit(stats: &DesignStats) -> Result<ModelParams> {
    if stats.count == 0 {
        return Err(Error::SingularSystem { jitter: 0.0 });
    }
    let sol = solve_spd(&stats.gram(), &stats.moment())?;
    ModelParams::from_stacked(&sol.x)
}

/// Price chosen from an estimate, with the reasons it may differ from the plug-in price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedPrice {
    pub price: f64,
    /// The slope estimate was degenerate and the midpoint was used.
    pub fallback: bool,
    /// The plug-in price fell outside the bounds.
    pub clipped: bool,
}

/// `clip(p̂(x))`, where `p̂` is the optimal price under `θ̂`; midpoint of the
/// bounds when the estimated slope is degenerate.
pub fn price_from_estimate(theta_hat: &ModelParams, x: &[f64], bounds: &PriceBounds) -> EstimatedPrice {
    match optimal_price(theta_hat, x) {
        Ok(p) if p.is_finite() => {
            let price = clip(p, bounds);
            EstimatedPrice {
                price,
                fallback: false,
                clipped: price != p,
            }
        }
        _ => EstimatedPrice {
            price: bounds.midpoint(),
            fallback: true,
            clipped: false,
        },
    }
}

/// Spectrum of the empirical Gram matrix and `Tr(gram⁻¹)` (`+∞` if singular).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramDiagnostics {
    pub eigenvalues: Vec<f64>,
    pub trace_inverse: f64,
    pub min_eig: f64,
}

pub fn gram_diagnostics(stats: &DesignStats) -> Result<GramDiagnostics> {
    let eig = symmetric_eigen(&stats.gram())?;
    let eigenvalues = eig.clamped_eigenvalues();
    let trace_inv = trace_inverse(&eig, 0.0);
    // Singular up to rounding: report the marker rather than a huge finite value.
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let min_eig = eigenvalues.last().copied().unwrap_or(0.0);
    let trace_inverse = if min_eig <= 1e-12 * top.max(f64::MIN_POSITIVE) {
        f64::INFINITY
    } else {
        trace_inv
    };
    Ok(GramDiagnostics {
        eigenvalues,
        trace_inverse,
        min_eig,
    })
}
