//! Discrepancy-principle stopping, run reports, and the iteration driver
//! shared by SINE and CGNE.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Problem;

/// Hard cap on iterations when the rule does not set one.
pub const DEFAULT_ITERATION_CAP: usize = 10_000;

/// Discrepancy principle: stop at the first `m` with `||y^delta - T x_m|| <= tau * delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub tau: f64,
    pub delta: f64,
    /// Defaults to `min(domain_dim, 10000)`.
    #[serde(default)]
    pub max_iters: Option<usize>,
}

impl StoppingRule {
    pub fn new(tau: f64, delta: f64) -> Result<Self> {
        let rule = Self {
            tau,
            delta,
            max_iters: None,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn for_problem(tau: f64, problem: &Problem) -> Result<Self> {
        Self::new(tau, problem.delta())
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = Some(max_iters);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 1.0) {
            return Err(Error::invalid(format!(
                "discrepancy factor tau must be > 1, got {}",
                self.tau
            )));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::invalid(format!(
                "noise level must be >= 0, got {}",
                self.delta
            )));
        }
        if self.max_iters == Some(0) {
            return Err(Error::invalid("max_iters must be positive"));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.tau * self.delta
    }

    pub fn iteration_cap(&self, domain_dim: usize) -> usize {
        self.max_iters
            .unwrap_or_else(|| domain_dim.min(DEFAULT_ITERATION_CAP))
    }
}

pub fn discrepancy_met(residual_norm: f64, rule: &StoppingRule) -> bool {
    residual_norm <= rule.threshold()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Discrepancy,
    Breakdown,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Sine,
    Cgne,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Sine => "sine",
            SolverKind::Cgne => "cgne",
        })
    }
}

/// Per-iteration vectors retained when history is enabled.
///
/// Entry `j` of `directions`/`images` is the search direction `w_j`
/// (CGNE: `p_j`) and `q_j = T w_j`; `residuals[j]` and `iterates[j]` are
/// `r_j` and `x_j`. Directions and images run one past the last accepted
/// step, residuals and iterates cover steps `0..=m`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub directions: Vec<Vec<f64>>,
    pub images: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
    pub iterates: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl RunHistory {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub(crate) fn push_state(&mut self, x: &DVector<f64>, r: &DVector<f64>) {
        self.iterates.push(x.as_slice().to_vec());
        self.residuals.push(r.as_slice().to_vec());
    }

    pub(crate) fn push_direction(&mut self, w: &DVector<f64>, q: &DVector<f64>) {
        self.directions.push(w.as_slice().to_vec());
        self.images.push(q.as_slice().to_vec());
    }

    pub fn direction(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.directions[j])
    }

    pub fn image(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.images[j])
    }

    pub fn residual(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.residuals[j])
    }

    pub fn iterate(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.iterates[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub solver: SolverKind,
    /// Shift parameter for SINE; absent for CGNE.
    pub gamma: Option<f64>,
    pub tau: f64,
    pub delta: f64,
    pub stopping_index: usize,
    pub terminated_by: Termination,
    pub breakdown_step: Option<usize>,
    pub solution: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub error_history: Option<Vec<f64>>,
    pub elapsed_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<RunHistory>,
}

impl RunReport {
    pub fn solution_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.solution)
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history[self.stopping_index]
    }

    /// First index whose residual meets the rule, if any was recorded.
    pub fn first_discrepancy_index(&self) -> Option<usize> {
        self.residual_history
            .iter()
            .position(|&r| r <= self.tau * self.delta)
    }
}

/// Common surface of the SINE and CGNE iterations, used by [`drive`].
pub(crate) trait Iteration {
    fn iteration(&self) -> usize;
    fn residual_norm(&self) -> f64;
    fn iterate(&self) -> &DVector<f64>;
    fn breakdown(&self) -> bool;
    fn advance(&mut self) -> Result<()>;
    fn take_history(&mut self) -> Option<RunHistory>;
}

/// How long [`drive`] keeps iterating.
pub(crate) enum Until<'a> {
    Rule(&'a StoppingRule),
    /// A fixed number of steps, or breakdown, whichever comes first.
    Steps(usize),
}

pub(crate) fn drive<I: Iteration>(
    mut it: I,
    problem: &Problem,
    solver: SolverKind,
    gamma: Option<f64>,
    tau: f64,
    until: Until<'_>,
    started: Instant,
) -> Result<RunReport> {
    let cap = match &until {
        Until::Rule(rule) => rule.iteration_cap(problem.operator().domain_dim()),
        Until::Steps(n) => *n,
    };
    let mut residuals = vec![it.residual_norm()];
    let mut errors = problem.error_of(it.iterate()).map(|e| vec![e]);

    let terminated_by = loop {
        let m = it.iteration();
        if let Until::Rule(rule) = &until {
            if discrepancy_met(residuals[m], rule) {
                break Termination::Discrepancy;
            }
        }
        if it.breakdown() {
            break Termination::Breakdown;
        }
        if m >= cap {
            break Termination::IterationCap;
        }
        it.advance()?;
        residuals.push(it.residual_norm());
        if let (Some(errs), Some(e)) = (errors.as_mut(), problem.error_of(it.iterate())) {
            errs.push(e);
        }
    };

    let stopping_index = it.iteration();
    Ok(RunReport {
        solver,
        gamma,
        tau,
        delta: problem.delta(),
        stopping_index,
        terminated_by,
        breakdown_step: (terminated_by == Termination::Breakdown).then_some(stopping_index),
        solution: it.iterate().as_slice().to_vec(),
        residual_history: residuals,
        error_history: errors,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        history: it.take_history(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrepancy_threshold() {
        let rule = StoppingRule::new(1.001, 1e-3).unwrap();
        assert!(discrepancy_met(0.0, &rule));
        assert!(discrepancy_met(1.0005e-3, &rule));
        assert!(!discrepancy_met(1.002e-3, &rule));
    }

    #[test]
    fn tau_must_exceed_one() {
        assert!(StoppingRule::new(1.0, 1e-3).is_err());
        assert!(StoppingRule::new(0.5, 1e-3).is_err());
        assert!(StoppingRule::new(1.1, -1.0).is_err());
        assert!(StoppingRule::new(1.1, 0.0).unwrap().with_max_iters(0).validate().is_err());
    }

    #[test]
    fn default_cap_is_bounded_by_dimension() {
        let rule = StoppingRule::new(2.0, 0.1).unwrap();
        assert_eq!(rule.iteration_cap(7), 7);
        assert_eq!(rule.iteration_cap(50_000), DEFAULT_ITERATION_CAP);
        assert_eq!(rule.with_max_iters(3).iteration_cap(7), 3);
    }
}
