//! Application of the resolvent `(I + T*T/gamma)^{-1}`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::operator::LinearOperator;

/// Relative residual target of the inner CG solve for matrix-free operators.
pub const INNER_TOLERANCE: f64 = 1e-13;

#[derive(Clone)]
enum Strategy {
    /// Componentwise division by `1 + (T T*)_ii / gamma`.
    Diagonal(DVector<f64>),
    /// Cholesky factor of `W (I + T*T/gamma)`, which is symmetric in the
    /// Euclidean sense even when the domain carries weights.
    Factored {
        factor: Cholesky<f64, Dyn>,
        weights: Option<DVector<f64>>,
    },
    InnerCg { tolerance: f64, max_iters: usize },
}

/// Solver for `(I + T*T/gamma) x = v`. Built once per `gamma` and reused.
#[derive(Clone)]
pub struct ShiftSolver {
    gamma: f64,
    operator: LinearOperator,
    strategy: Strategy,
}

impl std::fmt::Debug for ShiftSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let strategy = match &self.strategy {
            Strategy::Diagonal(_) => "diagonal",
            Strategy::Factored { .. } => "cholesky",
            Strategy::InnerCg { .. } => "inner-cg",
        };
        f.debug_struct("ShiftSolver")
            .field("gamma", &self.gamma)
            .field("strategy", &strategy)
            .finish()
    }
}

impl ShiftSolver {
    pub fn new(operator: &LinearOperator, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!("shift gamma must be positive, got {gamma}")));
        }
        let strategy = if let Some(gram) = operator.diagonal_gram() {
            Strategy::Diagonal(gram.map(|g| 1.0 + g / gamma))
        } else if let Some(matrix) = operator.as_dense() {
            Self::factor_dense(operator, matrix, gamma)?
        } else {
            Strategy::InnerCg {
                tolerance: INNER_TOLERANCE,
                max_iters: 10 * operator.domain_dim(),
            }
        };
        Ok(Self {
            gamma,
            operator: operator.clone(),
            strategy,
        })
    }

    /// Matrix-free inner CG with a custom tolerance and iteration cap.
    pub fn with_inner_cg(
        operator: &LinearOperator,
        gamma: f64,
        tolerance: f64,
        max_iters: usize,
    ) -> Result<Self> {
        let mut solver = Self::new(operator, gamma)?;
        solver.strategy = Strategy::InnerCg {
            tolerance,
            max_iters,
        };
        Ok(solver)
    }

    fn factor_dense(op: &LinearOperator, a: &DMatrix<f64>, gamma: f64) -> Result<Strategy> {
        let domain = op.domain();
        let range = op.range();
        // G = W_d + A^T W_r A / gamma
        let mut wa = a.clone();
        if range.weights().is_some() {
            for (j, mut row) in wa.row_iter_mut().enumerate() {
                row *= range.weight(j);
            }
        }
        let mut g = a.tr_mul(&wa) / gamma;
        for i in 0..g.nrows() {
            g[(i, i)] += domain.weight(i);
        }
        let g = (&g + g.transpose()) * 0.5;
        let factor = Cholesky::new(g).ok_or_else(|| {
            Error::Numerical(format!(
                "Cholesky factorization of I + T*T/gamma failed (gamma = {gamma:e}); \
                 the matrix lost positive definiteness to rounding"
            ))
        })?;
        Ok(Strategy::Factored {
            factor,
            weights: domain.weights().cloned(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `(I + T*T/gamma) v`.
    pub fn apply_shifted(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let normal = self.operator.apply_normal(v)?;
        Ok(v + normal / self.gamma)
    }

    /// `(I + T*T/gamma)^{-1} v`.
    pub fn resolvent_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.operator.domain().check("resolvent input", v)?;
        match &self.strategy {
            Strategy::Diagonal(denom) => Ok(v.component_div(denom)),
            Strategy::Factored { factor, weights } => {
                let rhs = match weights {
                    Some(w) => v.component_mul(w),
                    None => v.clone(),
                };
                Ok(factor.solve(&rhs))
            }
            Strategy::InnerCg {
                tolerance,
                max_iters,
            } => self.inner_cg(v, *tolerance, *max_iters),
        }
    }

    /// CG on the shifted normal operator, which is self-adjoint and
    /// coercive in the domain inner product.
    fn inner_cg(&self, v: &DVector<f64>, tolerance: f64, max_iters: usize) -> Result<DVector<f64>> {
        let space = self.operator.domain();
        let v_norm = space.norm(v);
        let mut x = DVector::zeros(v.len());
        if v_norm == 0.0 {
            return Ok(x);
        }
        let target = tolerance * v_norm;
        let mut r = v.clone();
        let mut p = r.clone();
        let mut rr = space.dot(&r, &r);
        for _ in 0..max_iters {
            if rr.sqrt() <= target {
                return Ok(x);
            }
            let ap = self.apply_shifted(&p)?;
            let alpha = rr / space.dot(&p, &ap);
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            let rr_next = space.dot(&r, &r);
            p *= rr_next / rr;
            p += &r;
            rr = rr_next;
        }
        // recurrence residual can drift; confirm against the true residual
        let true_res = space.norm(&(v - self.apply_shifted(&x)?));
        if true_res <= target {
            Ok(x)
        } else {
            Err(Error::InnerSolve {
                iterations: max_iters,
                residual: true_res / v_norm,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{gaussian_matrix, gaussian_vector};
    use crate::space::InnerProductSpace;
    use std::sync::Arc;

    fn relative_residual(solver: &ShiftSolver, op: &LinearOperator, v: &DVector<f64>) -> f64 {
        let x = solver.resolvent_apply(v).unwrap();
        let back = solver.apply_shifted(&x).unwrap();
        op.domain().norm(&(back - v)) / op.domain().norm(v)
    }

    #[test]
    fn rejects_nonpositive_gamma() {
        let op = LinearOperator::diagonal(vec![1.0]).unwrap();
        assert!(ShiftSolver::new(&op, 0.0).is_err());
        assert!(ShiftSolver::new(&op, -1.0).is_err());
        assert!(ShiftSolver::new(&op, f64::NAN).is_err());
    }

    #[test]
    fn diagonal_resolvent() {
        let op = LinearOperator::diagonal(vec![2.0]).unwrap();
        let solver = ShiftSolver::new(&op, 1.0).unwrap();
        let x = solver.resolvent_apply(&DVector::from_element(1, 5.0)).unwrap();
        assert_eq!(x[0], 1.0);

        let op = LinearOperator::diagonal(vec![0.5, 1.0, 3.0]).unwrap();
        let solver = ShiftSolver::new(&op, 0.25).unwrap();
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = solver.resolvent_apply(&v).unwrap();
        for i in 0..3 {
            let di: f64 = [0.5, 1.0, 3.0][i];
            assert_eq!(x[i], v[i] / (1.0 + di * di / 0.25));
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let op = LinearOperator::dense(gaussian_matrix(6, 4, 1)).unwrap();
        let solver = ShiftSolver::new(&op, 1.0).unwrap();
        assert_eq!(solver.resolvent_apply(&DVector::zeros(4)).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn dense_residual_and_large_gamma_limit() {
        let op = LinearOperator::dense(gaussian_matrix(30, 20, 2)).unwrap();
        let v = gaussian_vector(20, 3);
        let solver = ShiftSolver::new(&op, 1.0).unwrap();
        assert!(relative_residual(&solver, &op, &v) <= 1e-12);

        let far = ShiftSolver::new(&op, 1e12).unwrap();
        let x = far.resolvent_apply(&v).unwrap();
        assert!((x - &v).norm() / v.norm() <= 1e-10);
    }

    #[test]
    fn dense_matches_explicit_inverse() {
        let a = gaussian_matrix(10, 10, 5);
        let op = LinearOperator::dense(a.clone()).unwrap();
        let gamma = 0.7;
        let shifted = DMatrix::identity(10, 10) + a.tr_mul(&a) / gamma;
        let inverse = shifted.try_inverse().unwrap();
        let solver = ShiftSolver::new(&op, gamma).unwrap();
        for seed in 0..4 {
            let v = gaussian_vector(10, 100 + seed);
            let x = solver.resolvent_apply(&v).unwrap();
            let oracle = &inverse * &v;
            assert!((x - &oracle).norm() <= 1e-12 * oracle.norm());
        }
    }

    #[test]
    fn weighted_dense_residual() {
        let domain = InnerProductSpace::weighted((0..12).map(|i| 0.1 + i as f64 * 0.05).collect())
            .unwrap();
        let range = InnerProductSpace::midpoint(15);
        let op = LinearOperator::dense_weighted(gaussian_matrix(15, 12, 8), domain, range).unwrap();
        let solver = ShiftSolver::new(&op, 0.05).unwrap();
        let v = gaussian_vector(12, 4);
        assert!(relative_residual(&solver, &op, &v) <= 1e-12);
        // symmetric positive definite in the weighted product
        let x = solver.resolvent_apply(&v).unwrap();
        assert!(op.domain().dot(&x, &v) > 0.0);
    }

    #[test]
    fn matrix_free_inner_cg() {
        let a = Arc::new(gaussian_matrix(25, 15, 12));
        let at = a.clone();
        let op = LinearOperator::matrix_free(
            InnerProductSpace::euclidean(15),
            InnerProductSpace::euclidean(25),
            Arc::new(move |x| &*a * x),
            Arc::new(move |y| at.tr_mul(y)),
        )
        .unwrap();
        let solver = ShiftSolver::new(&op, 2.0).unwrap();
        let v = gaussian_vector(15, 6);
        assert!(relative_residual(&solver, &op, &v) <= 1e-12);
    }

    #[test]
    fn matrix_free_reports_non_convergence() {
        let a = Arc::new(gaussian_matrix(25, 15, 12));
        let at = a.clone();
        let op = LinearOperator::matrix_free(
            InnerProductSpace::euclidean(15),
            InnerProductSpace::euclidean(25),
            Arc::new(move |x| &*a * x),
            Arc::new(move |y| at.tr_mul(y)),
        )
        .unwrap();
        let solver = ShiftSolver::with_inner_cg(&op, 1e-3, 1e-13, 2).unwrap();
        match solver.resolvent_apply(&gaussian_vector(15, 1)) {
            Err(Error::InnerSolve { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-13);
            }
            other => panic!("expected InnerSolve error, got {other:?}"),
        }
    }
}
