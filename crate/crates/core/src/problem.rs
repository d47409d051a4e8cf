//! Test problems: the multiplication operator on L2(0,1), seeded random
//! dense problems with prescribed singular values, and problems loaded from
//! files.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::io;
use crate::operator::LinearOperator;
use crate::sample;
use crate::space::InnerProductSpace;

/// Source-set metadata `x = (T*T)^mu w`, `||w|| <= rho`. Stored, not enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceCondition {
    pub mu: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// A constant shift of every entry.
    #[default]
    Constant,
    /// A seeded Gaussian direction.
    Random,
}

/// Linear system `T x = y^delta` with noise level `delta`.
#[derive(Debug, Clone)]
pub struct Problem {
    operator: LinearOperator,
    y_delta: DVector<f64>,
    delta: f64,
    y_exact: Option<DVector<f64>>,
    truth: Option<DVector<f64>>,
    source: Option<SourceCondition>,
}

impl Problem {
    pub fn new(operator: LinearOperator, y_delta: DVector<f64>, delta: f64) -> Result<Self> {
        check_len("problem data", operator.range_dim(), y_delta.len())?;
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::invalid(format!("noise level must be >= 0, got {delta}")));
        }
        if y_delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data vector contains non-finite entries"));
        }
        Ok(Self {
            operator,
            y_delta,
            delta,
            y_exact: None,
            truth: None,
            source: None,
        })
    }

    pub fn with_truth(mut self, truth: DVector<f64>) -> Result<Self> {
        check_len("problem truth", self.operator.domain_dim(), truth.len())?;
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn with_exact_data(mut self, y: DVector<f64>) -> Result<Self> {
        check_len("problem exact data", self.operator.range_dim(), y.len())?;
        self.y_exact = Some(y);
        Ok(self)
    }

    pub fn with_source(mut self, source: SourceCondition) -> Self {
        self.source = Some(source);
        self
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.operator
    }

    pub fn y_delta(&self) -> &DVector<f64> {
        &self.y_delta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn y_exact(&self) -> Option<&DVector<f64>> {
        self.y_exact.as_ref()
    }

    pub fn truth(&self) -> Option<&DVector<f64>> {
        self.truth.as_ref()
    }

    pub fn source(&self) -> Option<SourceCondition> {
        self.source
    }

    /// Weighted-norm distance to the truth, if known.
    pub fn error_of(&self, x: &DVector<f64>) -> Option<f64> {
        self.truth
            .as_ref()
            .map(|t| self.operator.domain().norm(&(x - t)))
    }
}

/// Perturbation of weighted norm `delta`.
///
/// Constant mode is `delta / sqrt(sum w_i)` in every entry; on the midpoint
/// grid of (0,1) that is exactly `delta`. Random mode is a seeded Gaussian
/// direction rescaled to norm `delta`.
pub fn noise_vector(
    dim: usize,
    delta: f64,
    mode: NoiseMode,
    seed: u64,
    space: &InnerProductSpace,
) -> Result<DVector<f64>> {
    check_len("noise dimension", space.dim(), dim)?;
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(DVector::zeros(dim));
    }
    Ok(match mode {
        NoiseMode::Constant => DVector::from_element(dim, delta / space.total_weight().sqrt()),
        NoiseMode::Random => {
            let mut rng = sample::rng(seed);
            let e = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let scale = delta / space.norm(&e);
            e * scale
        }
    })
}

/// `y` plus [`noise_vector`]; `delta = 0` returns `y` unchanged.
pub fn add_noise(
    y: &DVector<f64>,
    delta: f64,
    mode: NoiseMode,
    seed: u64,
    space: &InnerProductSpace,
) -> Result<DVector<f64>> {
    space.check("noise target", y)?;
    let noise = noise_vector(y.len(), delta, mode, seed, space)?;
    if delta == 0.0 {
        return Ok(y.clone());
    }
    Ok(y + noise)
}

/// `T f(t) = t f(t)` on L2(0,1), sampled on the midpoint grid
/// `t_i = (i - 1/2)/n` with weights `1/n`, truth `t^exponent` and constant
/// perturbation of norm `delta`.
pub fn multiplication_problem(n: usize, exponent: f64, delta: f64) -> Result<Problem> {
    multiplication_problem_with_noise(n, exponent, delta, NoiseMode::Constant, 0)
}

/// [`multiplication_problem`] with a chosen perturbation.
pub fn multiplication_problem_with_noise(
    n: usize,
    exponent: f64,
    delta: f64,
    noise: NoiseMode,
    seed: u64,
) -> Result<Problem> {
    if n < 2 {
        return Err(Error::invalid(format!("grid size must be >= 2, got {n}")));
    }
    if !(exponent.is_finite() && exponent > 0.0) {
        return Err(Error::invalid(format!("truth exponent must be positive, got {exponent}")));
    }
    let grid = midpoint_grid(n);
    let space = InnerProductSpace::midpoint(n);
    let operator =
        LinearOperator::diagonal_weighted(grid.as_slice().to_vec(), space.clone(), space.clone())?;
    let truth = grid.map(|t| t.powf(exponent));
    let y = grid.component_mul(&truth);
    let y_delta = add_noise(&y, delta, noise, seed, &space)?;
    Ok(Problem::new(operator, y_delta, delta)?
        .with_truth(truth)?
        .with_exact_data(y)?
        .with_source(SourceCondition {
            mu: exponent / 2.0,
            rho: 1.0,
        }))
}

pub fn midpoint_grid(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| (i as f64 + 0.5) / n as f64)
}

/// Singular-value profile of a random problem, indexed from `k = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decay {
    /// `sigma_k = rate^k`
    Geometric { rate: f64 },
    /// `sigma_k = (k + 1)^(-exponent)`
    Algebraic { exponent: f64 },
}

impl Decay {
    pub fn singular_values(&self, count: usize) -> Result<Vec<f64>> {
        match *self {
            Decay::Geometric { rate } if rate > 0.0 && rate <= 1.0 => {
                Ok((0..count).map(|k| rate.powi(k as i32)).collect())
            }
            Decay::Algebraic { exponent } if exponent >= 0.0 && exponent.is_finite() => {
                Ok((0..count).map(|k| ((k + 1) as f64).powf(-exponent)).collect())
            }
            _ => Err(Error::invalid(format!("invalid singular value decay {self:?}"))),
        }
    }
}

/// Seeded dense problem `A = U diag(sigma) V^T` with Gaussian truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomProblem {
    pub rows: usize,
    pub cols: usize,
    pub decay: Decay,
    /// Noise level; zero gives exact data.
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "random_noise_mode")]
    pub noise: NoiseMode,
    #[serde(default)]
    pub seed: u64,
}

fn random_noise_mode() -> NoiseMode {
    NoiseMode::Random
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

impl RandomProblem {
    pub fn new(rows: usize, cols: usize, decay: Decay, seed: u64) -> Self {
        Self {
            rows,
            cols,
            decay,
            delta: 0.0,
            noise: NoiseMode::Random,
            seed,
        }
    }

    pub fn with_noise(mut self, delta: f64, mode: NoiseMode) -> Self {
        self.delta = delta;
        self.noise = mode;
        self
    }

    pub fn build(&self) -> Result<Problem> {
        let (rows, cols) = (self.rows, self.cols);
        if cols == 0 || rows < cols {
            return Err(Error::invalid(format!(
                "random problem needs rows >= cols >= 1, got {rows}x{cols}"
            )));
        }
        let sigma = DVector::from_vec(self.decay.singular_values(cols)?);
        let u = sample::orthonormal_columns(rows, cols, sub_seed(self.seed, 0));
        let v = sample::orthonormal_columns(cols, cols, sub_seed(self.seed, 1));
        let matrix = u * DMatrix::from_diagonal(&sigma) * v.transpose();
        let operator = LinearOperator::dense(matrix)?;
        let truth = sample::gaussian_vector(cols, sub_seed(self.seed, 2));
        let y = operator.apply(&truth)?;
        let y_delta = add_noise(
            &y,
            self.delta,
            self.noise,
            sub_seed(self.seed, 3),
            operator.range(),
        )?;
        Problem::new(operator, y_delta, self.delta)?
            .with_truth(truth)?
            .with_exact_data(y)
    }
}

/// How the operator file of [`load_problem`] is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorFormat {
    /// By file extension: `.mtx` is Matrix Market, anything else dense CSV.
    #[default]
    Auto,
    MatrixMarket,
    Csv,
    /// One-column CSV with the diagonal entries.
    Diagonal,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadConfig {
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub format: OperatorFormat,
    /// Optional one-column CSV with the exact solution.
    #[serde(default)]
    pub truth: Option<std::path::PathBuf>,
}

pub fn load_operator(path: &Path, format: OperatorFormat) -> Result<LinearOperator> {
    let is_mtx = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("mtx"));
    match format {
        OperatorFormat::Diagonal => {
            LinearOperator::diagonal(io::read_csv_vector(path)?.as_slice().to_vec())
        }
        OperatorFormat::MatrixMarket => LinearOperator::dense(io::read_matrix_market(path)?),
        OperatorFormat::Csv => LinearOperator::dense(io::read_csv_matrix(path)?),
        OperatorFormat::Auto if is_mtx => LinearOperator::dense(io::read_matrix_market(path)?),
        OperatorFormat::Auto => LinearOperator::dense(io::read_csv_matrix(path)?),
    }
}

pub fn load_problem(
    operator_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
    config: &LoadConfig,
) -> Result<Problem> {
    let operator_path = operator_path.as_ref();
    let data_path = data_path.as_ref();
    let operator = load_operator(operator_path, config.format)?;
    let data = io::read_csv_vector(data_path)?;
    if data.len() != operator.range_dim() {
        return Err(Error::invalid(format!(
            "data vector {} has {} entries but operator {} has {} rows",
            data_path.display(),
            data.len(),
            operator_path.display(),
            operator.range_dim()
        )));
    }
    let mut problem = Problem::new(operator, data, config.delta)?;
    if let Some(truth_path) = &config.truth {
        let truth = io::read_csv_vector(truth_path)?;
        if truth.len() != problem.operator().domain_dim() {
            return Err(Error::invalid(format!(
                "truth vector {} has {} entries but operator {} has {} columns",
                truth_path.display(),
                truth.len(),
                operator_path.display(),
                problem.operator().domain_dim()
            )));
        }
        problem = problem.with_truth(truth)?;
    }
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn small_multiplication_problem() {
        let p = multiplication_problem(4, 1.0, 0.0).unwrap();
        let d = p.operator().as_diagonal().unwrap();
        assert_eq!(d.as_slice(), &[0.125, 0.375, 0.625, 0.875]);
        let y = p.y_delta();
        for i in 0..4 {
            assert_eq!(y[i], d[i] * d[i]);
        }
        assert_eq!(p.y_exact().unwrap(), y);
        assert_eq!(p.source().unwrap().mu, 0.5);
    }

    #[test]
    fn multiplication_noise_has_exact_norm() {
        let p = multiplication_problem(4096, 1.0, 1e-3).unwrap();
        let noise = noise_vector(4096, 1e-3, NoiseMode::Constant, 0, p.operator().range()).unwrap();
        assert!(noise.iter().all(|&v| v == 1e-3));
        let norm = p.operator().range().norm(&noise);
        assert!((norm - 1e-3).abs() <= 1e-14 * 1e-3);
        let diff = p.y_delta() - p.y_exact().unwrap();
        let stored = p.operator().range().norm(&diff);
        assert!((stored - 1e-3).abs() <= 1e-12 * 1e-3);

        let recomputed = p.operator().apply(p.truth().unwrap()).unwrap();
        let gap = p.operator().range().norm(&(p.y_delta() - recomputed));
        assert!((gap - p.delta()).abs() <= 1e-12 * p.delta());
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(multiplication_problem(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn discretized_norms_match_continuous() {
        for n in [16usize, 128, 1000] {
            let grid = midpoint_grid(n);
            let space = InnerProductSpace::midpoint(n);
            for k in 1..=4 {
                let f = grid.map(|t| t.powi(k));
                let exact = 1.0 / ((2 * k + 1) as f64).sqrt();
                let rel = (space.norm(&f) - exact).abs() / exact;
                assert!(rel <= 10.0 / (n * n) as f64, "n={n} k={k} rel={rel}");
            }
        }
    }

    #[test]
    fn noise_modes() {
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5, 4.0]);
        let unit = InnerProductSpace::euclidean(4);
        assert_eq!(add_noise(&y, 0.0, NoiseMode::Random, 3, &unit).unwrap(), y);

        let c = add_noise(&y, 0.2, NoiseMode::Constant, 0, &unit).unwrap();
        for i in 0..4 {
            assert!(((c[i] - y[i]) - 0.1).abs() < 1e-15);
        }

        let n = noise_vector(4, 0.2, NoiseMode::Random, 17, &unit).unwrap();
        assert!((unit.norm(&n) - 0.2).abs() <= 1e-14 * 0.2);
        let r = add_noise(&y, 0.2, NoiseMode::Random, 17, &unit).unwrap();
        assert_eq!(r, &y + n);
        let weighted = InnerProductSpace::midpoint(333);
        for mode in [NoiseMode::Constant, NoiseMode::Random] {
            let n = noise_vector(333, 3e-5, mode, 5, &weighted).unwrap();
            assert!((weighted.norm(&n) - 3e-5).abs() <= 1e-14 * 3e-5);
        }
        assert!(add_noise(&y, -1.0, NoiseMode::Constant, 0, &unit).is_err());
    }

    #[test]
    fn random_problem_singular_values() {
        let p = RandomProblem::new(30, 20, Decay::Geometric { rate: 0.1 }, 5).build().unwrap();
        let mut sv: Vec<f64> = p
            .operator()
            .as_dense()
            .unwrap()
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (k, s) in sv.iter().enumerate() {
            let expected = 0.1f64.powi(k as i32);
            assert!((s - expected).abs() <= 1e-10, "k={k}: {s} vs {expected}");
        }
    }

    #[test]
    fn random_problem_is_deterministic() {
        let spec = RandomProblem::new(12, 8, Decay::Algebraic { exponent: 1.5 }, 77)
            .with_noise(1e-2, NoiseMode::Random);
        let a = spec.build().unwrap();
        let b = spec.build().unwrap();
        assert_eq!(a.operator().as_dense(), b.operator().as_dense());
        assert_eq!(a.y_delta(), b.y_delta());
        assert_eq!(a.truth(), b.truth());
        let c = RandomProblem { seed: 78, ..spec }.build().unwrap();
        assert_ne!(a.y_delta(), c.y_delta());
    }

    #[test]
    fn random_problem_rejects_bad_shapes() {
        assert!(RandomProblem::new(3, 5, Decay::Geometric { rate: 0.5 }, 0).build().is_err());
        assert!(RandomProblem::new(3, 0, Decay::Geometric { rate: 0.5 }, 0).build().is_err());
        assert!(RandomProblem::new(5, 3, Decay::Geometric { rate: 2.0 }, 0).build().is_err());
    }

    #[test]
    fn load_identity_problem() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.mtx");
        let y = dir.path().join("y.csv");
        fs::write(&a, "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n2 2 1\n")
            .unwrap();
        fs::write(&y, "1\n0\n").unwrap();
        let config = LoadConfig {
            delta: 1e-3,
            ..Default::default()
        };
        let p = load_problem(&a, &y, &config).unwrap();
        assert_eq!(p.operator().as_dense().unwrap(), &DMatrix::identity(2, 2));
        assert_eq!(p.y_delta().as_slice(), &[1.0, 0.0]);
        assert_eq!(p.delta(), 1e-3);
    }

    #[test]
    fn load_reports_both_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let y = dir.path().join("y.csv");
        fs::write(&a, "1,0\n0,1\n").unwrap();
        fs::write(&y, "1\n0\n2\n").unwrap();
        let err = load_problem(&a, &y, &LoadConfig::default()).unwrap_err().to_string();
        assert!(err.contains("3 entries") && err.contains("2 rows"), "{err}");
    }

    #[test]
    fn load_diagonal_operator() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("d.csv");
        let y = dir.path().join("y.csv");
        fs::write(&d, "1\n2\n3\n").unwrap();
        fs::write(&y, "1\n1\n1\n").unwrap();
        let config = LoadConfig {
            format: OperatorFormat::Diagonal,
            ..Default::default()
        };
        let p = load_problem(&d, &y, &config).unwrap();
        assert_eq!(p.operator().as_diagonal().unwrap().as_slice(), &[1.0, 2.0, 3.0]);
    }
}
