//! Structural checks over a retained SINE run: orthonormal bases of the
//! rational Krylov spaces, projected Gram matrices and their Ritz values,
//! interlacing of consecutive Ritz spectra, the residual rational function
//! `r_m(lambda) = prod_j (1 - lambda/lambda_j) / (1 + lambda/gamma)^(m-1)`,
//! and orthogonality audits of the recurrence vectors.
//!
//! Everything here is a separate pass over history snapshots; nothing runs
//! inside the solver loop.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::problem::Problem;
use crate::run::{RunHistory, RunReport, StoppingRule};
use crate::sine::{SineOptions, SineSolver};
use crate::space::InnerProductSpace;

/// Relative slack on each strict inequality of the interlacing chain.
pub const INTERLACING_SLACK: f64 = 1e-10;
/// Relative slack on the upper bound `lambda <= ||T||^2`.
pub const RITZ_UPPER_SLACK: f64 = 1e-6;
/// A basis vector is numerically dependent when Gram-Schmidt leaves less
/// than this fraction of its norm.
pub const RANK_LOSS_TOLERANCE: f64 = 1e-12;

/// Orthonormal basis `v_0, ..., v_{m-1}` with nested spans
/// `span{v_0..v_l} = span{w_0..w_l}`.
#[derive(Debug, Clone)]
pub struct KrylovBasis {
    vectors: Vec<DVector<f64>>,
}

impl KrylovBasis {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    /// Gram matrix of the basis in `space`.
    pub fn gram(&self, space: &InnerProductSpace) -> DMatrix<f64> {
        let m = self.len();
        DMatrix::from_fn(m, m, |i, j| space.dot(&self.vectors[i], &self.vectors[j]))
    }
}

/// Modified Gram-Schmidt with one full reorthogonalization pass.
pub fn build_basis(raw: &[DVector<f64>], space: &InnerProductSpace) -> Result<KrylovBasis> {
    let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(raw.len());
    for (k, w) in raw.iter().enumerate() {
        space.check("basis vector", w)?;
        let original = space.norm(w);
        if original == 0.0 {
            return Err(Error::Numerical(format!("basis vector {k} is zero")));
        }
        let mut v = w.clone();
        for _pass in 0..2 {
            for u in &vectors {
                let c = space.dot(&v, u);
                v.axpy(-c, u, 1.0);
            }
        }
        let remaining = space.norm(&v);
        if remaining <= RANK_LOSS_TOLERANCE * original {
            return Err(Error::Numerical(format!(
                "basis vector {k} is numerically dependent on its predecessors \
                 (relative remainder {:.3e}); breakdown tolerance and basis do not agree",
                remaining / original
            )));
        }
        vectors.push(v / remaining);
    }
    Ok(KrylovBasis { vectors })
}

/// `S = (<T*T v_i, v_j>)`, symmetrized as `(S + S^T)/2`.
pub fn projected_gram(basis: &KrylovBasis, op: &LinearOperator) -> Result<DMatrix<f64>> {
    let normal: Vec<DVector<f64>> = basis
        .vectors
        .iter()
        .map(|v| op.apply_normal(v))
        .collect::<Result<_>>()?;
    let m = basis.len();
    let s = DMatrix::from_fn(m, m, |j, i| op.domain().dot(&normal[i], &basis.vectors[j]));
    Ok((&s + s.transpose()) * 0.5)
}

/// Ascending, strictly positive Ritz values of one projected matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RitzSpectrum {
    values: Vec<f64>,
}

impl RitzSpectrum {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("Ritz values must be positive, found {v}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All values in `(0, norm_sq * (1 + slack)]`.
    pub fn within(&self, norm_sq: f64) -> bool {
        self.values
            .iter()
            .all(|&v| v > 0.0 && v <= norm_sq * (1.0 + RITZ_UPPER_SLACK))
    }
}

/// Eigenvalues of a small symmetric positive definite matrix.
pub fn ritz_values(s: &DMatrix<f64>) -> Result<RitzSpectrum> {
    if !s.is_square() || s.is_empty() {
        return Err(Error::invalid(format!(
            "projected matrix must be square and non-empty, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let asym = (s - s.transpose()).amax();
    if asym > 1e-12 * s.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::invalid(format!("projected matrix is not symmetric ({asym:e})")));
    }
    let eig = SymmetricEigen::new(s.clone());
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid(format!(
            "projected matrix is not positive definite (eigenvalues {values:?})"
        )));
    }
    RitzSpectrum::new(values)
}

fn lt(a: f64, b: f64) -> bool {
    a < b + INTERLACING_SLACK * b.abs().max(a.abs())
}

/// `0 < next_1 < prev_1 < next_2 < ... < prev_{m-1} < next_m`.
pub fn check_interlacing(prev: &RitzSpectrum, next: &RitzSpectrum) -> Result<bool> {
    if next.len() != prev.len() + 1 {
        return Err(Error::invalid(format!(
            "interlacing needs spectra of sizes m-1 and m, got {} and {}",
            prev.len(),
            next.len()
        )));
    }
    let (p, n) = (&prev.values, &next.values);
    if !(n[0] > 0.0) {
        return Ok(false);
    }
    Ok((0..p.len()).all(|k| lt(n[k], p[k]) && lt(p[k], n[k + 1])))
}

/// Residual rational function of step `m`, determined by its zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualFunction {
    /// Shift; `f64::INFINITY` gives the CGNE residual polynomial.
    pub gamma: f64,
    pub zeros: Vec<f64>,
}

impl ResidualFunction {
    pub fn new(gamma: f64, spectrum: &RitzSpectrum) -> Self {
        Self {
            gamma,
            zeros: spectrum.values.clone(),
        }
    }

    pub fn m(&self) -> usize {
        self.zeros.len()
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let p: f64 = self.zeros.iter().map(|z| 1.0 - lambda / z).product();
        let denominator = (1.0 + lambda / self.gamma).powi(self.m() as i32 - 1);
        p / denominator
    }

    /// `|r_m'(0)| = sum_j 1/lambda_j + (m - 1)/gamma`.
    pub fn rprime_at_zero(&self) -> f64 {
        let m = self.m();
        let sum: f64 = self.zeros.iter().map(|z| 1.0 / z).sum();
        if m == 0 {
            return 0.0;
        }
        sum + (m - 1) as f64 / self.gamma
    }
}

pub fn residual_function_eval(rf: &ResidualFunction, lambda: f64) -> f64 {
    rf.eval(lambda)
}

pub fn rprime_at_zero(rf: &ResidualFunction) -> f64 {
    rf.rprime_at_zero()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOrthogonality {
    pub m: usize,
    /// `max_j |<r_m, q_j>| / (||r_0|| ||q_j||)`
    pub galerkin: f64,
    /// `max_j |<q_m, q_j>| / (||q_m|| ||q_j||)`
    pub conjugacy: f64,
    /// `max_j |<T*r_m, w_j>| / (||T|| ||r_0|| ||w_j||)`
    pub normal_galerkin: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub steps: Vec<StepOrthogonality>,
    pub max_galerkin: f64,
    pub max_conjugacy: f64,
    pub max_normal_galerkin: f64,
}

impl OrthogonalityReport {
    pub fn max_violation(&self) -> f64 {
        self.max_galerkin
            .max(self.max_conjugacy)
            .max(self.max_normal_galerkin)
    }
}

/// Normalized orthogonality violations for every recorded step `m >= 1`
/// against all `j < m`. Never fails on large violations; it only reports.
pub fn orthogonality_audit(history: &RunHistory, op: &LinearOperator) -> Result<OrthogonalityReport> {
    let mut report = OrthogonalityReport::default();
    if history.len() < 2 {
        return Ok(report);
    }
    let range = op.range();
    let domain = op.domain();
    let op_norm = op.norm_estimate()?;
    let r0_norm = range.norm(&history.residual(0));

    let images: Vec<DVector<f64>> = (0..history.images.len()).map(|j| history.image(j)).collect();
    let dirs: Vec<DVector<f64>> = (0..history.directions.len()).map(|j| history.direction(j)).collect();
    let image_norms: Vec<f64> = images.iter().map(|q| range.norm(q)).collect();
    let dir_norms: Vec<f64> = dirs.iter().map(|w| domain.norm(w)).collect();
    let ratio = |num: f64, den: f64| if den > 0.0 { num.abs() / den } else { 0.0 };

    for m in 1..history.len() {
        let r = history.residual(m);
        let tr = op.apply_adjoint(&r)?;
        let mut step = StepOrthogonality {
            m,
            ..Default::default()
        };
        for j in 0..m.min(images.len()) {
            step.galerkin = step
                .galerkin
                .max(ratio(range.dot(&r, &images[j]), r0_norm * image_norms[j]));
            step.normal_galerkin = step.normal_galerkin.max(ratio(
                domain.dot(&tr, &dirs[j]),
                op_norm * r0_norm * dir_norms[j],
            ));
            if m < images.len() {
                step.conjugacy = step.conjugacy.max(ratio(
                    range.dot(&images[m], &images[j]),
                    image_norms[m] * image_norms[j],
                ));
            }
        }
        report.max_galerkin = report.max_galerkin.max(step.galerkin);
        report.max_conjugacy = report.max_conjugacy.max(step.conjugacy);
        report.max_normal_galerkin = report.max_normal_galerkin.max(step.normal_galerkin);
        report.steps.push(step);
    }
    Ok(report)
}

/// Ritz spectra of `Q_1, ..., Q_m` for the first `m` recorded directions.
pub fn ritz_sequence(history: &RunHistory, op: &LinearOperator, m: usize) -> Result<Vec<RitzSpectrum>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    if history.directions.len() < m {
        return Err(Error::invalid(format!(
            "history holds {} directions, {m} requested",
            history.directions.len()
        )));
    }
    let raw: Vec<DVector<f64>> = (0..m).map(|j| history.direction(j)).collect();
    let basis = build_basis(&raw, op.domain())?;
    let s = projected_gram(&basis, op)?;
    (1..=m)
        .map(|l| ritz_values(&s.view((0, 0), (l, l)).into_owned()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub m: usize,
    pub ritz_values: Vec<f64>,
    /// Interlacing against step `m - 1`; absent for `m = 1`.
    pub interlaces_previous: Option<bool>,
    pub within_bounds: bool,
    pub rprime_at_zero: f64,
    /// `|r_m'(0)| >= m / ||T||^2` up to slack.
    pub rprime_lower_bound: bool,
}

/// Componentwise check of `r_m = r_m(T T*) r_0` on diagonal operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualIdentity {
    /// `||r_m - r_m(TT*) r_0|| / ||r_0||` for `m = 1..`.
    pub relative_gaps: Vec<f64>,
    pub max_relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub gamma: f64,
    pub stopping_index: usize,
    pub operator_norm: f64,
    pub spectra: Vec<SpectrumRecord>,
    pub all_interlacing: bool,
    pub all_within_bounds: bool,
    pub rprime_increasing: bool,
    pub orthogonality: OrthogonalityReport,
    pub residual_identity: Option<ResidualIdentity>,
}

/// Relative gaps between the run's residuals and the residual function
/// applied to the initial residual, coordinate by coordinate.
pub fn residual_identity(
    history: &RunHistory,
    op: &LinearOperator,
    gamma: f64,
    spectra: &[RitzSpectrum],
) -> Option<ResidualIdentity> {
    let gram = op.diagonal_gram()?;
    let r0 = history.residual(0);
    let scale = op.range().norm(&r0).max(f64::MIN_POSITIVE);
    let relative_gaps: Vec<f64> = spectra
        .iter()
        .enumerate()
        .map(|(k, spectrum)| {
            let rf = ResidualFunction::new(gamma, spectrum);
            let predicted = DVector::from_fn(r0.len(), |i, _| rf.eval(gram[i]) * r0[i]);
            op.range().norm(&(history.residual(k + 1) - predicted)) / scale
        })
        .collect();
    let max_relative_gap = relative_gaps.iter().copied().fold(0.0, f64::max);
    Some(ResidualIdentity {
        relative_gaps,
        max_relative_gap,
    })
}

/// Full diagnostics for a run that retained its history.
pub fn analyze(report: &RunReport, op: &LinearOperator) -> Result<DiagnosticsReport> {
    let history = report.history.as_ref().ok_or_else(|| {
        Error::invalid("run history missing; rerun with history retention enabled (--history)")
    })?;
    let gamma = report
        .gamma
        .ok_or_else(|| Error::invalid("diagnostics need a SINE run (gamma missing)"))?;
    let m = report.stopping_index;
    let spectra = ritz_sequence(history, op, m)?;
    let op_norm = op.norm_estimate()?;
    let norm_sq = op_norm * op_norm;

    let mut records = Vec::with_capacity(spectra.len());
    for (k, spectrum) in spectra.iter().enumerate() {
        let rf = ResidualFunction::new(gamma, spectrum);
        let rprime = rf.rprime_at_zero();
        let interlaces_previous = match k {
            0 => None,
            _ => Some(check_interlacing(&spectra[k - 1], spectrum)?),
        };
        records.push(SpectrumRecord {
            m: k + 1,
            ritz_values: spectrum.values.clone(),
            interlaces_previous,
            within_bounds: spectrum.within(norm_sq),
            rprime_at_zero: rprime,
            rprime_lower_bound: rprime * norm_sq * (1.0 + RITZ_UPPER_SLACK) >= (k + 1) as f64,
        });
    }
    let rprime_increasing = records
        .windows(2)
        .all(|w| w[1].rprime_at_zero > w[0].rprime_at_zero);

    Ok(DiagnosticsReport {
        gamma,
        stopping_index: m,
        operator_norm: op_norm,
        all_interlacing: records.iter().all(|r| r.interlaces_previous.unwrap_or(true)),
        all_within_bounds: records.iter().all(|r| r.within_bounds),
        rprime_increasing,
        orthogonality: orthogonality_audit(history, op)?,
        residual_identity: residual_identity(history, op, gamma, &spectra),
        spectra: records,
    })
}

/// Runs SINE with history retention and analyzes the result.
pub fn diagnose(
    problem: &Problem,
    gamma: f64,
    rule: &StoppingRule,
) -> Result<(RunReport, DiagnosticsReport)> {
    let options = SineOptions::new(gamma).with_history(true);
    let report = SineSolver::new(problem, options)?.run(rule)?;
    let diagnostics = analyze(&report, problem.operator())?;
    Ok((report, diagnostics))
}
