//! Region solvers: given a region's augmented energy and the corrective
//! potentials on its boundary, find internal fields `m_j` at which
//!
//! ```text
//! b_R ∝ exp(-Ẽ_R / kT) ∏_j m_j(x_j),   m_j ∝ μ_j^(C_j - 1) exp(-V_j / kT)
//! ```
//!
//! holds, where `μ_j` is the marginal of `b_R` at boundary variable `j`.
//! [`solve_region_exact`] marginalizes by enumeration; [`solve_region_gibbs`]
//! estimates the marginals by single-site Gibbs sampling.

mod exact;
mod gibbs;
mod problem;
mod rng;

pub use exact::{modified_free_energy, solve_region_exact, uniform_belief};
pub use gibbs::{gibbs_sample, solve_region_gibbs, EnergyModel, GibbsEstimate, GibbsOptions, GibbsSolverOptions};
pub use problem::{BoundarySite, EnergyTerm, RegionProblem, RegionSolution};
pub use rng::StreamKey;

pub(crate) use exact::solve_with_table;

use crate::error::{Error, Result};
use crate::logspace::{max_abs_diff, normalize_log, to_floored_logs};

/// How the internal fields are updated between marginalizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerUpdate {
    /// Levenberg-Marquardt steps on the critical-point residual, using the
    /// exact Jacobian of the boundary marginals.
    Newton,
    /// The damped map `ln m_j ← γ ln m_j + (1 - γ) ln(μ_j^(C_j-1) e^(-V_j/kT))`.
    FixedPoint,
}

impl std::str::FromStr for InnerUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(InnerUpdate::Newton),
            "fixed-point" => Ok(InnerUpdate::FixedPoint),
            _ => Err(Error::input(format!("unknown inner update {s:?} (expected newton or fixed-point)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    /// Field updates allowed; `0` returns the belief at the initial fields.
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Weight on the old fields in the fixed-point update.
    pub damping: f64,
    pub update: InnerUpdate,
    /// Largest region state space enumerated by the exact solver.
    pub cap: u64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-10,
            damping: 0.5,
            update: InnerUpdate::Newton,
            cap: crate::oracle::DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl InnerOptions {
    /// Defaults for sampled marginals: looser tolerance, fewer steps, and
    /// the fixed-point update.
    pub fn sampling() -> Self {
        Self {
            max_iterations: 20,
            tolerance: 1e-3,
            update: InnerUpdate::FixedPoint,
            ..Self::default()
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::input("inner tolerance must be positive"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::input("inner damping must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Starting log-fields: the warm start if given, else uniform.
pub(crate) fn initial_fields(problem: &RegionProblem) -> Result<Vec<Vec<f64>>> {
    let mut fields = match &problem.initial_fields {
        Some(f) => f.clone(),
        None => (0..problem.boundary.len())
            .map(|s| vec![0.0; problem.site_card(s)])
            .collect(),
    };
    for (s, f) in fields.iter_mut().enumerate() {
        normalize_log(f, || format!("initial field of {}", problem.boundary[s].variable))?;
    }
    Ok(fields)
}

/// Normalized `(C_j - 1) ln μ_j - V_j / kT` per site.
pub(crate) fn targets(problem: &RegionProblem, mu: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let kt = problem.temperature;
    problem
        .boundary
        .iter()
        .zip(mu)
        .map(|(site, m)| {
            let c1 = (site.count - 1) as f64;
            let mut t: Vec<f64> = to_floored_logs(m)
                .iter()
                .zip(&site.potential)
                .map(|(l, v)| c1 * l - v / kt)
                .collect();
            normalize_log(&mut t, || format!("field target of {}", site.variable))?;
            Ok(t)
        })
        .collect()
}

pub(crate) fn residual(fields: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    fields
        .iter()
        .zip(targets)
        .map(|(f, t)| max_abs_diff(f, t))
        .fold(0.0, f64::max)
}

/// The damped fixed-point step.
pub(crate) fn fixed_point_step(fields: &[Vec<f64>], targets: &[Vec<f64>], damping: f64) -> Result<Vec<Vec<f64>>> {
    fields
        .iter()
        .zip(targets)
        .map(|(f, t)| crate::logspace::damp(f, t, damping, || "internal field".to_string()))
        .collect()
}
