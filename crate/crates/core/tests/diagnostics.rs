use nalgebra::{DMatrix, DVector, SymmetricEigen};
use sine_core::diagnostics::{
    analyze, build_basis, diagnose, orthogonality_audit, projected_gram, ritz_sequence, ResidualFunction,
};
use sine_core::*;

fn sine_run(problem: &Problem, gamma: f64, steps: usize) -> RunReport {
    let rule = StoppingRule::new(1.001, 1e-300).unwrap().with_max_iters(steps);
    SineSolver::new(problem, SineOptions::new(gamma).with_history(true))
        .unwrap()
        .run(&rule)
        .unwrap()
}

fn random(rows: usize, cols: usize, rate: f64, delta: f64, seed: u64) -> Problem {
    RandomProblem::new(rows, cols, Decay::Geometric { rate }, seed)
        .with_noise(delta, NoiseMode::Random)
        .build()
        .unwrap()
}

fn hilbert(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64)
}

#[test]
fn basis_is_orthonormal_with_nested_spans() {
    let p = random(40, 25, 0.7, 1e-3, 3);
    let report = sine_run(&p, 1e-2, 6);
    let h = report.history.as_ref().unwrap();
    let raw: Vec<DVector<f64>> = (0..6).map(|j| h.direction(j)).collect();
    let basis = build_basis(&raw, p.operator().domain()).unwrap();
    assert_eq!(basis.len(), 6);
    let gram = basis.gram(p.operator().domain());
    assert!((gram - DMatrix::identity(6, 6)).amax() <= 1e-12);

    for (l, w) in raw.iter().enumerate() {
        let mut rest = w.clone();
        for v in &basis.vectors()[..=l] {
            rest -= v * v.dot(w);
        }
        assert!(rest.norm() <= 1e-10 * w.norm(), "l = {l}");
    }
}

#[test]
fn ritz_values_match_dense_projection() {
    let p = random(30, 20, 0.6, 1e-3, 7);
    let report = sine_run(&p, 1e-2, 5);
    let h = report.history.as_ref().unwrap();
    let spectra = ritz_sequence(h, p.operator(), 5).unwrap();

    let a = p.operator().as_dense().unwrap();
    let w = DMatrix::from_columns(&(0..5).map(|j| h.direction(j)).collect::<Vec<_>>());
    let q = w.qr().q();
    let norm_sq = a.singular_values()[0].powi(2);
    for (k, spectrum) in spectra.iter().enumerate() {
        let v = q.columns(0, k + 1);
        let s = v.transpose() * a.transpose() * a * v;
        let mut expected: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
        expected.sort_by(f64::total_cmp);
        let got = spectrum.values();
        assert_eq!(got.len(), k + 1);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() <= 1e-10 * norm_sq, "m = {}: {g} vs {e}", k + 1);
        }
        assert!(got.iter().all(|&x| x > 0.0 && x <= norm_sq * (1.0 + 1e-12)));
    }
}

#[test]
fn projected_gram_is_symmetric_positive() {
    let p = random(20, 12, 0.5, 1e-2, 1);
    let report = sine_run(&p, 1e-1, 4);
    let h = report.history.as_ref().unwrap();
    let raw: Vec<DVector<f64>> = (0..4).map(|j| h.direction(j)).collect();
    let basis = build_basis(&raw, p.operator().domain()).unwrap();
    let s = projected_gram(&basis, p.operator()).unwrap();
    assert!((&s - s.transpose()).amax() <= 1e-14 * s.amax());
    assert!(s.cholesky().is_some());
}

#[test]
fn residual_function_and_derivative_along_a_run() {
    let p = random(40, 30, 0.8, 1e-4, 2);
    let rule = StoppingRule::for_problem(1.001, &p).unwrap();
    let (report, d) = diagnose(&p, 1e-2, &rule).unwrap();
    assert_eq!(d.stopping_index, report.stopping_index);
    assert!(d.stopping_index >= 3);
    assert!(d.all_interlacing && d.all_within_bounds && d.rprime_increasing);
    assert!(d.spectra.iter().all(|s| s.rprime_lower_bound));
    for s in &d.spectra {
        let spectrum = sine_core::diagnostics::RitzSpectrum::new(s.ritz_values.clone()).unwrap();
        let rf = ResidualFunction::new(d.gamma, &spectrum);
        assert_eq!(rf.eval(0.0), 1.0);
        for &theta in spectrum.values() {
            assert!(rf.eval(theta).abs() <= 1e-12);
        }
    }
}

#[test]
fn diagonal_run_satisfies_residual_identity() {
    let p = multiplication_problem(1024, 1.0, 1e-4).unwrap();
    let rule = StoppingRule::for_problem(1.001, &p).unwrap();
    let (_, d) = diagnose(&p, 1e-3, &rule).unwrap();
    let identity = d.residual_identity.unwrap();
    assert_eq!(identity.relative_gaps.len(), d.stopping_index);
    assert!(identity.max_relative_gap <= 1e-8, "{}", identity.max_relative_gap);
}

#[test]
fn hilbert_audit_reports_without_failing() {
    let a = hilbert(12);
    let y = a.column_sum();
    let p = Problem::new(LinearOperator::dense(a).unwrap(), y, 1e-12).unwrap();
    let report = sine_run(&p, 1e-6, 11);
    let h = report.history.as_ref().unwrap();
    let audit = orthogonality_audit(h, p.operator()).unwrap();
    assert_eq!(audit.steps.len(), h.len() - 1);
    assert!(audit.max_violation().is_finite());
    // A nearly dependent basis may be rejected, but never with a panic.
    let _ = analyze(&report, p.operator());
}

#[test]
fn analyze_needs_history_and_gamma() {
    let p = random(10, 8, 0.5, 1e-2, 0);
    let rule = StoppingRule::for_problem(1.001, &p).unwrap();
    let plain = SineSolver::new(&p, SineOptions::new(1e-2)).unwrap().run(&rule).unwrap();
    let err = analyze(&plain, p.operator()).unwrap_err().to_string();
    assert!(err.contains("history"));
    let cg = CgneSolver::new(&p).unwrap().with_history(true).run(&rule).unwrap();
    assert!(analyze(&cg, p.operator()).is_err());
}
