//! Options, reports and the dual bisection shared by the iterative solvers.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::PrecoderSet;

/// How the iterative precoder solvers are started.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Circular Gaussian blocks scaled onto the power boundary.
    #[default]
    Random,
    /// The LMMSE precoder.
    Lmmse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative change of the tracked objective below which a solver stops.
    pub tol: f64,
    /// Relative width of the final dual bracket.
    pub bisection_tol: f64,
    /// V-sweeps over the devices per outer iteration.
    pub inner_sweeps: usize,
    pub init: InitMode,
    pub seed: u64,
    /// Keep the precoder after every outer iteration.
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            bisection_tol: 1e-8,
            inner_sweeps: 1,
            init: InitMode::Random,
            seed: 0,
            record_history: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.inner_sweeps == 0 {
            return Err(Error::InvalidInput("iteration caps must be at least 1".into()));
        }
        if !(self.tol > 0.0) || !(self.bisection_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of an iterative solve. `trace[0]` is the objective at the starting
/// point and `trace[i]` the value after outer iteration `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: String,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final dual variables of the power constraints, when the solver has them.
    pub duals: Vec<f64>,
    /// Largest relative complementary-slackness gap over accepted V-steps.
    pub max_slackness: f64,
    /// Set when a near-singular matrix needed a diagonal jitter.
    pub jittered: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub history: Vec<PrecoderSet>,
    /// Wall time; kept out of serialized output so that runs stay byte-identical.
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SolverReport {
    pub fn new(solver: &str) -> Self {
        Self {
            solver: solver.to_string(),
            trace: Vec::new(),
            iterations: 0,
            converged: false,
            duals: Vec::new(),
            max_slackness: 0.0,
            jittered: false,
            history: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }

    pub fn final_objective(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::NAN)
    }

    /// First iteration whose relative change falls below `tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        (1..self.trace.len()).find(|&i| relative_change(self.trace[i - 1], self.trace[i]) <= tol)
    }
}

/// `|b - a| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (b - a).abs() / scale
    }
}

/// Smallest `λ ≥ 0` with `Σ_i w_i / (e_i + λ)² ≤ budget`, for `e_i ≥ 0` and
/// `w_i ≥ 0`. Bisection over `[0, √(Σ w_i / budget)]` until the bracket is
/// narrower than `tol` relative to its upper end; the feasible end is returned.
pub fn bisect_dual(eigs: &[f64], weights: &[f64], budget: f64, tol: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let scale = eigs.iter().copied().fold(0.0, f64::max);
    let cut = 1e-14 * scale;
    let norm = |lam: f64| -> f64 {
        eigs.iter()
            .zip(weights)
            .map(|(&e, &w)| {
                let d = if e <= cut { 0.0 } else { e } + lam;
                if w == 0.0 {
                    0.0
                } else if d <= 0.0 {
                    f64::INFINITY
                } else {
                    w / (d * d)
                }
            })
            .sum()
    };
    if norm(0.0) <= budget {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, (total / budget).sqrt());
    for _ in 0..400 {
        if hi - lo <= tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if norm(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}
