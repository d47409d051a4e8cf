//! Shift-and-Invert on the Normal Equation (SINE).
//!
//! Minimizes `||y^delta - T x||` over the rational Krylov subspace
//!
//! ```text
//! Q_m = span{ T*r_0, (I + T*T/gamma)^{-1} T*r_0, ..., (I + T*T/gamma)^{-(m-1)} T*r_0 }
//! ```
//!
//! with a short recurrence: the images `q_j = T w_j` of the search directions
//! are mutually orthogonal and the residual is orthogonal to all of them.
//! The iteration ends either by the discrepancy principle or by breakdown
//! (`q_k = 0`), in which case `x_k` is the minimum-norm least-squares
//! solution.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::problem::Problem;
use crate::run::{drive, Iteration, RunHistory, RunReport, SolverKind, StoppingRule, Until};
use crate::shift::ShiftSolver;

/// Relative threshold of the breakdown test, see [`detect_breakdown`].
pub const EPS_BREAKDOWN: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct SineOptions {
    pub gamma: f64,
    /// Initial guess; zero when absent.
    pub x0: Option<DVector<f64>>,
    pub keep_history: bool,
    pub eps_breakdown: f64,
}

impl SineOptions {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            x0: None,
            keep_history: false,
            eps_breakdown: EPS_BREAKDOWN,
        }
    }

    pub fn with_x0(mut self, x0: DVector<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn with_history(mut self, keep: bool) -> Self {
        self.keep_history = keep;
        self
    }
}

/// Full recurrence state after `iteration` accepted steps.
#[derive(Debug, Clone)]
pub struct SineState {
    iteration: usize,
    x: DVector<f64>,
    r: DVector<f64>,
    w: DVector<f64>,
    q: DVector<f64>,
    t: Option<DVector<f64>>,
    alpha: Option<f64>,
    beta: Option<f64>,
    delta_j: Option<f64>,
    op_norm: f64,
    /// `||T* r_j||` for every step.
    normal_residual_norms: Vec<f64>,
    residual_norms: Vec<f64>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    history: Option<RunHistory>,
}

impl SineState {
    /// `r_0 = y^delta - T x_0`, `w_0 = T* r_0`, `q_0 = T w_0`.
    ///
    /// `op_norm` is an estimate of `||T||`, used to scale the breakdown test.
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
        let r = if x0.is_some() {
            problem.y_delta() - op.apply(&x)?
        } else {
            problem.y_delta().clone()
        };
        let w = op.apply_adjoint(&r)?;
        let q = op.apply(&w)?;
        let history = keep_history.then(|| {
            let mut h = RunHistory::default();
            h.push_state(&x, &r);
            h.push_direction(&w, &q);
            h
        });
        Ok(Self {
            iteration: 0,
            residual_norms: vec![op.range().norm(&r)],
            normal_residual_norms: vec![op.domain().norm(&w)],
            x,
            r,
            w,
            q,
            t: None,
            alpha: None,
            beta: None,
            delta_j: None,
            op_norm,
            alphas: Vec::new(),
            betas: Vec::new(),
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

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    /// `t_j`, available after the first step.
    pub fn t(&self) -> Option<&DVector<f64>> {
        self.t.as_ref()
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    /// `<q_{j-1}, q_{j-1}>` of the last step.
    pub fn delta_j(&self) -> Option<f64> {
        self.delta_j
    }

    /// `||T* r_j||` per step; entry 0 is `||w_0||`.
    pub fn normal_residual_norms(&self) -> &[f64] {
        &self.normal_residual_norms
    }

    /// Scale of the breakdown test at the current step:
    /// `max(||T|| ||r_j||, ||T* r_0||)`.
    pub fn breakdown_scale(&self) -> f64 {
        let j = self.iteration;
        (self.op_norm * self.residual_norms[j]).max(self.normal_residual_norms[0])
    }

    pub fn residual_norms(&self) -> &[f64] {
        &self.residual_norms
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn history(&self) -> Option<&RunHistory> {
        self.history.as_ref()
    }

    /// `||(y^delta - T x_j) - r_j|| / ||y^delta||`: drift of the recurrence
    /// residual from the true one.
    pub fn residual_drift(&self, problem: &Problem) -> Result<f64> {
        let op = problem.operator();
        let true_r = problem.y_delta() - op.apply(&self.x)?;
        let scale = op.range().norm(problem.y_delta()).max(f64::MIN_POSITIVE);
        Ok(op.range().norm(&(true_r - &self.r)) / scale)
    }
}

/// Breakdown `q_j = 0` at the current step.
///
/// `q_j` vanishes exactly when `T* r_j` does, and `T* r_j` does not shrink
/// with the length of the unnormalized direction `w_j`, so the test is
/// `||T* r_j|| <= eps * scale` (see [`SineState::breakdown_scale`]). An
/// exactly zero `q_j` always counts.
pub fn detect_breakdown(
    state: &SineState,
    operator: &LinearOperator,
    eps: f64,
    scale: f64,
) -> bool {
    let q_norm = operator.range().norm(&state.q);
    q_norm == 0.0 || state.normal_residual_norms[state.iteration] <= eps * scale
}

/// One pass of the SINE recurrence.
///
/// The caller checks [`detect_breakdown`] first; stepping a broken-down
/// state is an error.
pub fn sine_step(state: &mut SineState, operator: &LinearOperator, shift: &ShiftSolver) -> Result<()> {
    let range = operator.range();
    let domain = operator.domain();

    let delta_j = range.dot(&state.q, &state.q);
    if delta_j == 0.0 {
        return Err(Error::Numerical(format!(
            "SINE stepped past breakdown at j = {}",
            state.iteration
        )));
    }
    let alpha = range.dot(&state.r, &state.q) / delta_j;
    state.x.axpy(alpha, &state.w, 1.0);
    state.r.axpy(-alpha, &state.q, 1.0);

    let s = operator.apply_adjoint(&state.q)?;
    let normal_residual = operator.apply_adjoint(&state.r)?;
    let t = shift.resolvent_apply(&normal_residual)?;
    let beta = domain.dot(&t, &s) / delta_j;
    // w_{j+1} = t_{j+1} - beta_j w_j
    state.w *= -beta;
    state.w += &t;
    state.q = operator.apply(&state.w)?;

    state.iteration += 1;
    state.alpha = Some(alpha);
    state.beta = Some(beta);
    state.delta_j = Some(delta_j);
    state.t = Some(t);
    state.alphas.push(alpha);
    state.betas.push(beta);
    state.residual_norms.push(range.norm(&state.r));
    state
        .normal_residual_norms
        .push(domain.norm(&normal_residual));
    if let Some(h) = state.history.as_mut() {
        h.alphas.push(alpha);
        h.betas.push(beta);
        h.push_state(&state.x, &state.r);
        h.push_direction(&state.w, &state.q);
    }
    Ok(())
}

/// A SINE iteration bound to its problem and resolvent.
pub struct SineSolver<'a> {
    problem: &'a Problem,
    shift: ShiftSolver,
    op_norm: f64,
    options: SineOptions,
}

impl<'a> SineSolver<'a> {
    pub fn new(problem: &'a Problem, options: SineOptions) -> Result<Self> {
        let shift = ShiftSolver::new(problem.operator(), options.gamma)?;
        Self::with_shift(problem, shift, options)
    }

    /// Reuses a prebuilt resolvent (e.g. across a noise-level sweep).
    pub fn with_shift(problem: &'a Problem, shift: ShiftSolver, options: SineOptions) -> Result<Self> {
        if shift.gamma() != options.gamma {
            return Err(Error::invalid("shift solver gamma differs from options"));
        }
        if !(options.eps_breakdown >= 0.0) {
            return Err(Error::invalid("breakdown threshold must be >= 0"));
        }
        let op_norm = problem.operator().norm_estimate()?;
        Ok(Self {
            problem,
            shift,
            op_norm,
            options,
        })
    }

    pub fn shift(&self) -> &ShiftSolver {
        &self.shift
    }

    pub fn operator_norm(&self) -> f64 {
        self.op_norm
    }

    pub fn init(&self) -> Result<SineState> {
        SineState::init(
            self.problem,
            self.options.x0.as_ref(),
            self.op_norm,
            self.options.keep_history,
        )
    }

    pub fn is_breakdown(&self, state: &SineState) -> bool {
        detect_breakdown(
            state,
            self.problem.operator(),
            self.options.eps_breakdown,
            state.breakdown_scale(),
        )
    }

    pub fn step(&self, state: &mut SineState) -> Result<()> {
        sine_step(state, self.problem.operator(), &self.shift)
    }

    /// Iterates until the discrepancy principle holds, breakdown, or the cap.
    pub fn run(&self, rule: &StoppingRule) -> Result<RunReport> {
        rule.validate()?;
        let started = Instant::now();
        let it = Bound {
            solver: self,
            state: self.init()?,
        };
        drive(
            it,
            self.problem,
            SolverKind::Sine,
            Some(self.options.gamma),
            rule.tau,
            Until::Rule(rule),
            started,
        )
    }

    /// Exactly `steps` steps (fewer on breakdown), ignoring the discrepancy
    /// principle. `tau` is recorded in the report only.
    pub fn run_steps(&self, steps: usize, tau: f64) -> Result<RunReport> {
        let started = Instant::now();
        let it = Bound {
            solver: self,
            state: self.init()?,
        };
        drive(
            it,
            self.problem,
            SolverKind::Sine,
            Some(self.options.gamma),
            tau,
            Until::Steps(steps),
            started,
        )
    }
}

struct Bound<'s, 'a> {
    solver: &'s SineSolver<'a>,
    state: SineState,
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

/// SINE with the discrepancy principle.
pub fn run_sine(problem: &Problem, options: &SineOptions, rule: &StoppingRule) -> Result<RunReport> {
    SineSolver::new(problem, options.clone())?.run(rule)
}
