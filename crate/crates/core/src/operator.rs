//! Linear operators between weighted inner-product spaces.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::space::InnerProductSpace;

/// Caller-supplied action of a matrix-free operator or its adjoint.
pub type ApplyFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

const NORM_SEED: u64 = 0x5eed_0f_7a11;
const NORM_MAX_ITERS: usize = 50;
const NORM_REL_CHANGE: f64 = 1e-6;

#[derive(Clone)]
enum Backend {
    Dense {
        matrix: DMatrix<f64>,
        /// `W_domain^{-1} A^T W_range`; plain transpose without weights.
        adjoint: DMatrix<f64>,
    },
    Diagonal {
        diag: DVector<f64>,
        adjoint: DVector<f64>,
    },
    MatrixFree {
        forward: ApplyFn,
        adjoint: ApplyFn,
    },
}

/// A bounded linear map `T: X -> Y` together with its Hilbert-space adjoint.
///
/// Immutable after construction; clones share matrix-free closures.
#[derive(Clone)]
pub struct LinearOperator {
    domain: InnerProductSpace,
    range: InnerProductSpace,
    backend: Backend,
}

impl fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.backend {
            Backend::Dense { .. } => "dense",
            Backend::Diagonal { .. } => "diagonal",
            Backend::MatrixFree { .. } => "matrix-free",
        };
        f.debug_struct("LinearOperator")
            .field("backend", &kind)
            .field("domain_dim", &self.domain.dim())
            .field("range_dim", &self.range.dim())
            .finish()
    }
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if let Some((i, v)) = values.into_iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} entry {i} is not finite ({v})")));
    }
    Ok(())
}

impl LinearOperator {
    /// Dense operator with Euclidean inner products on both sides.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        Self::dense_weighted(
            matrix,
            InnerProductSpace::euclidean(cols),
            InnerProductSpace::euclidean(rows),
        )
    }

    pub fn dense_weighted(
        matrix: DMatrix<f64>,
        domain: InnerProductSpace,
        range: InnerProductSpace,
    ) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("operator dimensions must be positive"));
        }
        check_len("dense operator domain", cols, domain.dim())?;
        check_len("dense operator range", rows, range.dim())?;
        check_finite("matrix", matrix.iter().copied())?;

        let mut adjoint = matrix.transpose();
        if domain.weights().is_some() || range.weights().is_some() {
            for i in 0..cols {
                for j in 0..rows {
                    adjoint[(i, j)] *= range.weight(j) / domain.weight(i);
                }
            }
        }
        Ok(Self {
            domain,
            range,
            backend: Backend::Dense { matrix, adjoint },
        })
    }

    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        Self::diagonal_weighted(
            diag,
            InnerProductSpace::euclidean(n),
            InnerProductSpace::euclidean(n),
        )
    }

    /// Square diagonal operator. The adjoint picks up `w_range / w_domain`.
    pub fn diagonal_weighted(
        diag: Vec<f64>,
        domain: InnerProductSpace,
        range: InnerProductSpace,
    ) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::invalid("operator dimensions must be positive"));
        }
        check_len("diagonal operator domain", diag.len(), domain.dim())?;
        check_len("diagonal operator range", diag.len(), range.dim())?;
        check_finite("diagonal", diag.iter().copied())?;

        let diag = DVector::from_vec(diag);
        let adjoint = if domain.weights().is_none() && range.weights().is_none() {
            diag.clone()
        } else {
            DVector::from_fn(diag.len(), |i, _| {
                diag[i] * (range.weight(i) / domain.weight(i))
            })
        };
        Ok(Self {
            domain,
            range,
            backend: Backend::Diagonal { diag, adjoint },
        })
    }

    /// Operator given only through its action. `adjoint` must already be the
    /// adjoint with respect to the weighted products of `domain` and `range`.
    pub fn matrix_free(
        domain: InnerProductSpace,
        range: InnerProductSpace,
        forward: ApplyFn,
        adjoint: ApplyFn,
    ) -> Result<Self> {
        if domain.dim() == 0 || range.dim() == 0 {
            return Err(Error::invalid("operator dimensions must be positive"));
        }
        Ok(Self {
            domain,
            range,
            backend: Backend::MatrixFree { forward, adjoint },
        })
    }

    pub fn domain(&self) -> &InnerProductSpace {
        &self.domain
    }

    pub fn range(&self) -> &InnerProductSpace {
        &self.range
    }

    pub fn domain_dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn range_dim(&self) -> usize {
        self.range.dim()
    }

    /// Underlying matrix of a dense operator.
    pub fn as_dense(&self) -> Option<&DMatrix<f64>> {
        match &self.backend {
            Backend::Dense { matrix, .. } => Some(matrix),
            _ => None,
        }
    }

    /// Entries of a diagonal operator.
    pub fn as_diagonal(&self) -> Option<&DVector<f64>> {
        match &self.backend {
            Backend::Diagonal { diag, .. } => Some(diag),
            _ => None,
        }
    }

    /// Eigenvalues of `T T*` for a diagonal operator, coordinate by coordinate.
    pub fn diagonal_gram(&self) -> Option<DVector<f64>> {
        match &self.backend {
            Backend::Diagonal { diag, adjoint } => Some(diag.component_mul(adjoint)),
            _ => None,
        }
    }

    pub fn is_matrix_free(&self) -> bool {
        matches!(self.backend, Backend::MatrixFree { .. })
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("apply input", self.domain.dim(), x.len())?;
        let y = match &self.backend {
            Backend::Dense { matrix, .. } => matrix * x,
            Backend::Diagonal { diag, .. } => diag.component_mul(x),
            Backend::MatrixFree { forward, .. } => forward(x),
        };
        check_len("apply output", self.range.dim(), y.len())?;
        Ok(y)
    }

    pub fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("apply_adjoint input", self.range.dim(), y.len())?;
        let x = match &self.backend {
            Backend::Dense { adjoint, .. } => adjoint * y,
            Backend::Diagonal { adjoint, .. } => adjoint.component_mul(y),
            Backend::MatrixFree { adjoint, .. } => adjoint(y),
        };
        check_len("apply_adjoint output", self.domain.dim(), x.len())?;
        Ok(x)
    }

    /// `T* T x`.
    pub fn apply_normal(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.apply_adjoint(&self.apply(x)?)
    }

    /// Estimate of the operator norm `||T||`.
    ///
    /// Exact for diagonal operators; otherwise power iteration on `T*T` from a
    /// fixed pseudo-random start vector, at most 50 sweeps or until the
    /// Rayleigh quotient changes by less than 1e-6 relative.
    pub fn norm_estimate(&self) -> Result<f64> {
        if let Some(gram) = self.diagonal_gram() {
            return Ok(gram.iter().fold(0.0_f64, |m, g| m.max(g.abs())).sqrt());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(NORM_SEED);
        let n = self.domain.dim();
        let mut v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let nv = self.domain.norm(&v);
        v /= nv;

        let mut estimate = 0.0_f64;
        for _ in 0..NORM_MAX_ITERS {
            let tv = self.apply(&v)?;
            let rayleigh = self.range.dot(&tv, &tv);
            let next = self.apply_adjoint(&tv)?;
            let len = self.domain.norm(&next);
            if rayleigh == 0.0 || len == 0.0 {
                return Ok(estimate.sqrt());
            }
            let change = (rayleigh - estimate).abs() / rayleigh;
            estimate = rayleigh;
            if change < NORM_REL_CHANGE {
                break;
            }
            v = next / len;
        }
        Ok(estimate.sqrt())
    }
}
