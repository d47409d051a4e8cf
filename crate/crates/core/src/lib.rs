//! Iterative regularization of ill-posed linear systems `T x = y^delta` by
//! residual minimization over Krylov spaces of the normal equation.
//!
//! * [`sine`]: minimization over the shift-and-invert (resolvent) space
//!   spanned by `(I + T*T/gamma)^{-k} T*y^delta`.
//! * [`cgne`]: the polynomial-Krylov baseline (CGLS form).
//! * [`diagnostics`]: Ritz values, interlacing, residual rational functions
//!   and orthogonality audits over retained run history.
//! * [`problem`]: the multiplication operator on L2(0,1), seeded random
//!   problems and file loaders.
//! * [`experiment`]: solve/compare/rate-check/diagnose drivers behind the CLI.
//!
//! Both solvers stop by the discrepancy principle.

pub mod cgne;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod operator;
pub mod problem;
pub mod run;
pub mod sample;
pub mod shift;
pub mod sine;
pub mod space;

pub use cgne::{run_cgne, CgneSolver, CgneState};
pub use error::{Error, Result};
pub use operator::LinearOperator;
pub use problem::{multiplication_problem, Decay, NoiseMode, Problem, RandomProblem};
pub use run::{discrepancy_met, RunHistory, RunReport, SolverKind, StoppingRule, Termination};
pub use shift::ShiftSolver;
pub use sine::{run_sine, SineOptions, SineSolver, SineState};
pub use space::InnerProductSpace;
