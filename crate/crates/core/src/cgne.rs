//! Conjugate gradients on the normal equation, in CGLS form.
//!
//! The `m`-th iterate minimizes `||y^delta - T x||` over the polynomial
//! Krylov space `K_m(T*T, T*y^delta)`. The residual `r = y - T x` is updated
//! directly, so the condition number of `T*T` never enters the residual.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::run::{drive, Iteration, RunHistory, RunReport, SolverKind, StoppingRule, Until};
use crate::sine::EPS_BREAKDOWN;

#[derive(Debug, Clone)]
pub struct CgneState {
    iteration: usize,
    x: DVector<f64>,
    r: DVector<f64>,
    /// `T* r`
    s: DVector<f64>,
    p: DVector<f64>,
    /// `T p`
    q: DVector<f64>,
    s_norm_sq: f64,
    s0_norm: f64,
    op_norm: f64,
    residual_norms: Vec<f64>,
    history: Option<RunHistory>,
}

impl CgneState {
    pub fn init(
        problem: &Problem,
        x0: Option<&DVector<f64>>,
        op_norm: f64,
        keep_history: bool,
    ) -> Result<Self> {
        let op = problem.operator();
        let x = match x0 {
            Some(x0) => {
                op.domain().check("initial guess", x0)?;
                x0.clone()
            }
            None => DVector::zeros(op.domain_dim()),
        };
        let r = problem.y_delta() - op.apply(&x)?;
        let s = op.apply_adjoint(&r)?;
        let p = s.clone();
        let q = op.apply(&p)?;
        let s_norm_sq = op.domain().dot(&s, &s);
        let history = keep_history.then(|| {
            let mut h = RunHistory::default();
            h.push_state(&x, &r);
            h.push_direction(&p, &q);
            h
        });
        Ok(Self {
            iteration: 0,
            residual_norms: vec![op.range().norm(&r)],
            s0_norm: s_norm_sq.sqrt(),
            op_norm,
            x,
            r,
            s,
            p,
            q,
            s_norm_sq,
            history,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn residual_norms(&self) -> &[f64] {
        &self.residual_norms
    }

    pub fn history(&self) -> Option<&RunHistory> {
        self.history.as_ref()
    }

    pub fn residual_drift(&self, problem: &Problem) -> Result<f64> {
        let op = problem.operator();
        let true_r = problem.y_delta() - op.apply(&self.x)?;
        let scale = op.range().norm(problem.y_delta()).max(f64::MIN_POSITIVE);
        Ok(op.range().norm(&(true_r - &self.r)) / scale)
    }
}

pub struct CgneSolver<'a> {
    problem: &'a Problem,
    op_norm: f64,
    x0: Option<DVector<f64>>,
    keep_history: bool,
}

impl<'a> CgneSolver<'a> {
    pub fn new(problem: &'a Problem) -> Result<Self> {
        Ok(Self {
            problem,
            op_norm: problem.operator().norm_estimate()?,
            x0: None,
            keep_history: false,
        })
    }

    pub fn with_x0(mut self, x0: DVector<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn with_history(mut self, keep: bool) -> Self {
        self.keep_history = keep;
        self
    }

    pub fn init(&self) -> Result<CgneState> {
        CgneState::init(self.problem, self.x0.as_ref(), self.op_norm, self.keep_history)
    }

    /// Same test as SINE: `T* r_j` vanished relative to
    /// `max(||T|| ||r_j||, ||T* r_0||)`, or `q_j` is exactly zero.
    pub fn is_breakdown(&self, state: &CgneState) -> bool {
        let scale = (state.op_norm * state.residual_norms[state.iteration]).max(state.s0_norm);
        self.problem.operator().range().norm(&state.q) == 0.0
            || state.s_norm_sq.sqrt() <= EPS_BREAKDOWN * scale
    }

    pub fn step(&self, state: &mut CgneState) -> Result<()> {
        let op = self.problem.operator();
        let qq = op.range().dot(&state.q, &state.q);
        if qq == 0.0 {
            return Err(Error::Numerical(format!(
                "CGNE stepped past breakdown at j = {}",
                state.iteration
            )));
        }
        let alpha = state.s_norm_sq / qq;
        state.x.axpy(alpha, &state.p, 1.0);
        state.r.axpy(-alpha, &state.q, 1.0);
        state.s = op.apply_adjoint(&state.r)?;
        let s_norm_sq = op.domain().dot(&state.s, &state.s);
        let beta = s_norm_sq / state.s_norm_sq;
        state.p *= beta;
        state.p += &state.s;
        state.q = op.apply(&state.p)?;
        state.s_norm_sq = s_norm_sq;

        state.iteration += 1;
        state.residual_norms.push(op.range().norm(&state.r));
        if let Some(h) = state.history.as_mut() {
            h.alphas.push(alpha);
            h.betas.push(beta);
            h.push_state(&state.x, &state.r);
            h.push_direction(&state.p, &state.q);
        }
        Ok(())
    }

    pub fn run(&self, rule: &StoppingRule) -> Result<RunReport> {
        rule.validate()?;
        let started = Instant::now();
        let it = Bound {
            solver: self,
            state: self.init()?,
        };
        drive(it, self.problem, SolverKind::Cgne, None, rule.tau, Until::Rule(rule), started)
    }

    pub fn run_steps(&self, steps: usize, tau: f64) -> Result<RunReport> {
        let started = Instant::now();
        let it = Bound {
            solver: self,
            state: self.init()?,
        };
        drive(it, self.problem, SolverKind::Cgne, None, tau, Until::Steps(steps), started)
    }
}

struct Bound<'s, 'a> {
    solver: &'s CgneSolver<'a>,
    state: CgneState,
}

impl Iteration for Bound<'_, '_> {
    fn iteration(&self) -> usize {
        self.state.iteration
    }

    fn residual_norm(&self) -> f64 {
        self.state.residual_norms[self.state.iteration]
    }

    fn iterate(&self) -> &DVector<f64> {
        &self.state.x
    }

    fn breakdown(&self) -> bool {
        self.solver.is_breakdown(&self.state)
    }

    fn advance(&mut self) -> Result<()> {
        self.solver.step(&mut self.state)
    }

    fn take_history(&mut self) -> Option<RunHistory> {
        self.state.history.take()
    }
}

/// CGNE with the discrepancy principle.
pub fn run_cgne(problem: &Problem, rule: &StoppingRule) -> Result<RunReport> {
    CgneSolver::new(problem)?.run(rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::LinearOperator;
    use crate::problem::{Decay, NoiseMode, RandomProblem};
    use crate::run::Termination;

    #[test]
    fn identity_converges_in_one_step() {
        let op = LinearOperator::diagonal(vec![1.0; 4]).unwrap();
        let mut y = DVector::zeros(4);
        y[0] = 1.0;
        let p = Problem::new(op, y.clone(), 0.0).unwrap();
        let report = run_cgne(&p, &StoppingRule::new(1.5, 0.0).unwrap()).unwrap();
        assert_eq!(report.stopping_index, 1);
        assert_eq!(report.solution_vector(), y);
        assert_eq!(report.gamma, None);
    }

    #[test]
    fn residuals_decrease_and_recurrence_tracks_truth() {
        let p = RandomProblem::new(40, 25, Decay::Geometric { rate: 0.8 }, 9)
            .with_noise(1e-4, NoiseMode::Random)
            .build()
            .unwrap();
        let solver = CgneSolver::new(&p).unwrap();
        let mut state = solver.init().unwrap();
        for _ in 0..12 {
            solver.step(&mut state).unwrap();
        }
        let r = state.residual_norms();
        for m in 1..r.len() {
            assert!(r[m] <= r[m - 1] + 1e-14 * r[0]);
        }
        assert!(state.residual_drift(&p).unwrap() <= 1e-10);
    }

    #[test]
    fn breakdown_gives_minimum_norm_solution() {
        let op = LinearOperator::diagonal(vec![2.0, 0.0, 1.0]).unwrap();
        let p = Problem::new(op, DVector::from_vec(vec![1.0, 1.0, 1.0]), 0.0).unwrap();
        let report = run_cgne(&p, &StoppingRule::new(1.1, 0.0).unwrap()).unwrap();
        assert_eq!(report.terminated_by, Termination::Breakdown);
        assert_eq!(report.breakdown_step, Some(2));
        let x = report.solution_vector();
        assert!((x[0] - 0.5).abs() < 1e-14 && x[1] == 0.0 && (x[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_step_when_data_already_fits() {
        let op = LinearOperator::diagonal(vec![1.0, 2.0]).unwrap();
        let p = Problem::new(op, DVector::from_vec(vec![0.0, 5e-4]), 1e-3).unwrap();
        let report = run_cgne(&p, &StoppingRule::for_problem(1.01, &p).unwrap()).unwrap();
        assert_eq!(report.stopping_index, 0);
        assert_eq!(report.solution, vec![0.0, 0.0]);
    }
}
