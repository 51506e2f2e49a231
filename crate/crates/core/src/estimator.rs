//! The count estimate `e^(g(z)) (2 pi)^(-dim L / 2) det(q|_L)^(-1/2)` with the
//! hypothesis inequalities and relative-error constant evaluated verbatim.

use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

use crate::maxent::{solve_bernoulli, solve_geometric, MaxEntropySolution, SolveError};
use crate::polytope::{build_constraints, validate_margins, MarginSpec, Mode, ValidationError};
use crate::quadform::{build_q, restricted_spectrum, RestrictedSpectrum, SpectrumError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EstimateError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

impl EstimateError {
    pub fn kind(&self) -> &'static str {
        match self {
            EstimateError::Validation(e) => e.kind(),
            EstimateError::Solve(e) => e.kind(),
            EstimateError::Spectrum(_) => "SpectrumDegenerate",
        }
    }
}

/// The explicit error constant is an asymptotic large-`k` expression; it
/// applies for `k >= N(r, R, omega, nu)` with `N` never made explicit, so the
/// report carries this caveat instead of a fabricated threshold.
pub const GAMMA_CAVEAT: &str =
    "gamma is the large-k expression, valid for k >= N(r, R, omega, nu) with N not explicit";

/// Witnesses and the two hypothesis inequalities, evaluated verbatim.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub omega: f64,
    pub k: f64,
    pub ineq1_lhs: f64,
    pub ineq1_rhs: f64,
    pub ineq1_ok: bool,
    pub ineq2_lhs: f64,
    pub ineq2_rhs: f64,
    pub ineq2_ok: bool,
    /// `omega k >= 2`.
    pub omega_k_ok: bool,
    /// `R > 1`; integer mode only, vacuous in binary mode.
    #[serde(rename = "R_ok")]
    pub big_r_ok: bool,
    /// The mode's explicit large-`k` error constant.
    pub gamma: f64,
    /// `gamma k^(-nu + 2.5)`.
    pub rel_error_bound: f64,
    pub satisfied: bool,
    pub gamma_caveat: String,
}

/// Evaluates the mode's hypothesis inequalities for a solved point.
///
/// Witnesses are taken from the solution itself: `r`/`R` are the extremes of
/// the mode's weights `alpha`, the tightest admissible choice. Integer mode
/// raises `R` to just above one when the data sits below it (the asymptotic
/// regime assumes `R > 1`, and any upper bound may be enlarged); binary mode has no
/// `R` hypothesis and fixes the shared-diagnostic value at the admissible
/// bound `1/4`.
pub fn hypothesis_check(mode: Mode, z: &[f64], dims: &[usize]) -> HypothesisReport {
    let nu = dims.len() as f64;
    let k = dims.iter().copied().max().unwrap() as f64;
    let k_min = dims.iter().copied().min().unwrap() as f64;
    let omega = k_min / k;
    let two_nu = 2.0_f64.powf(nu);

    let alphas: Vec<f64> = z.iter().map(|&v| mode.alpha(v)).collect();
    let r = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let raw_big_r = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let (big_r, big_r_ok, ineq1_lhs, ineq1_rhs, ineq2_lhs, ineq2_rhs, gamma) = match mode {
        Mode::Integer => {
            let big_r = raw_big_r.max(1.0 + 1e-12);
            let ineq1_lhs = 8.0 * PI * PI * two_nu * nu * nu
                / (omega.powf(nu) * (1.0 + 0.4 * PI * PI * r).ln())
                * (0.5 * nu * nu * k * k.ln() + 0.5 * nu * k * big_r.ln())
                * k.powf(1.0 - nu);
            let ineq1_rhs = 1.0 / (4.0 * nu * nu * big_r);
            let ineq2_lhs = 64.0 * PI * PI * two_nu * nu.powi(6) * big_r * big_r
                / (omega.powf(nu) * r)
                * k.ln()
                * k.powf(2.0 - nu);
            let ineq2_rhs = 0.75;
            let gamma =
                256.0 * big_r * big_r * PI.powi(4) * 4.0_f64.powf(nu) * nu.powi(8)
                    / omega.powf(2.0 * nu);
            (big_r, big_r > 1.0, ineq1_lhs, ineq1_rhs, ineq2_lhs, ineq2_rhs, gamma)
        }
        Mode::Binary => {
            let big_r = 0.25;
            let ineq1_lhs =
                10.0 * nu.powi(4) * two_nu / (r * omega.powf(nu)) * k.ln() * k.powf(2.0 - nu);
            let ineq1_rhs = 1.0 / (4.0 * nu * nu);
            let ineq2_lhs = 20.0 * nu.powi(6) * two_nu / (r * r * omega.powf(nu))
                * k.ln()
                * k.powf(2.0 - nu);
            let ineq2_rhs = 0.75;
            let gamma = 400.0 * nu.powi(12) * two_nu / (r * r * omega.powf(2.0 * nu));
            (big_r, true, ineq1_lhs, ineq1_rhs, ineq2_lhs, ineq2_rhs, gamma)
        }
    };

    let ineq1_ok = ineq1_lhs <= ineq1_rhs;
    let ineq2_ok = ineq2_lhs <= ineq2_rhs;
    let omega_k_ok = omega * k >= 2.0;
    let satisfied = ineq1_ok && ineq2_ok && omega_k_ok && big_r_ok;
    HypothesisReport {
        r,
        big_r,
        omega,
        k,
        ineq1_lhs,
        ineq1_rhs,
        ineq1_ok,
        ineq2_lhs,
        ineq2_rhs,
        ineq2_ok,
        omega_k_ok,
        big_r_ok,
        gamma,
        rel_error_bound: gamma * k.powf(2.5 - nu),
        satisfied,
        gamma_caveat: GAMMA_CAVEAT.to_string(),
    }
}

/// The assembled estimate, in log form plus the exponentiated value when it
/// fits a double.
#[derive(Debug, Clone)]
pub struct CountEstimate {
    pub mode: Mode,
    /// `g(z) - (dim L / 2) ln(2 pi) - logdet / 2`.
    pub log_estimate: f64,
    /// `exp(log_estimate)` if representable, `None` when capped.
    pub estimate: Option<f64>,
    pub hypothesis: HypothesisReport,
    pub solution: MaxEntropySolution,
    pub spectrum: RestrictedSpectrum,
}

impl CountEstimate {
    pub fn log10_estimate(&self) -> f64 {
        self.log_estimate / std::f64::consts::LN_10
    }
}

fn estimate(spec: &MarginSpec, mode: Mode, tol: f64) -> Result<CountEstimate, EstimateError> {
    validate_margins(spec, mode)?;
    let cs = build_constraints(spec)?;
    let solution = match mode {
        Mode::Integer => solve_geometric(&cs, tol)?,
        Mode::Binary => solve_bernoulli(&cs, tol)?,
    };
    let qf = build_q(&solution, &cs);
    let spectrum = restricted_spectrum(&qf, &cs)?;
    let dim_l = cs.dim_l() as f64;
    let log_estimate =
        solution.gz - 0.5 * dim_l * (2.0 * PI).ln() - 0.5 * spectrum.logdet;
    let estimate_value =
        if log_estimate < 709.0 { Some(log_estimate.exp()) } else { None };
    let hypothesis = hypothesis_check(mode, &solution.z, spec.dims.as_slice());
    Ok(CountEstimate {
        mode,
        log_estimate,
        estimate: estimate_value,
        hypothesis,
        solution,
        spectrum,
    })
}

/// Gaussian max-entropy estimate of `|P cap Z^n|`.
pub fn estimate_integer(spec: &MarginSpec, tol: f64) -> Result<CountEstimate, EstimateError> {
    estimate(spec, Mode::Integer, tol)
}

/// Gaussian max-entropy estimate of `|P cap {0,1}^n|`.
pub fn estimate_binary(spec: &MarginSpec, tol: f64) -> Result<CountEstimate, EstimateError> {
    estimate(spec, Mode::Binary, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(margin: f64) -> MarginSpec {
        MarginSpec::new(vec![2, 2, 2], vec![vec![margin; 2]; 3])
    }

    #[test]
    fn integer_cube_composition() {
        let est = estimate_integer(&cube(4.0), 1e-10).unwrap();
        let expect = 16.0 * 2.0_f64.ln() - 2.0 * (2.0 * PI).ln() - 0.5 * 1024.0_f64.ln();
        assert!((est.log_estimate - expect).abs() < 1e-9, "{}", est.log_estimate);
        assert!(!est.hypothesis.satisfied, "k = 2 must fail the hypotheses");
        assert!(est.estimate.unwrap() > 0.0);
    }

    #[test]
    fn binary_cube_composition() {
        let est = estimate_binary(&cube(2.0), 1e-10).unwrap();
        let expect = 8.0 * 2.0_f64.ln() - 2.0 * (2.0 * PI).ln() - 0.5 * 0.25_f64.ln();
        assert!((est.log_estimate - expect).abs() < 1e-9);
        assert!((est.hypothesis.r - 0.25).abs() < 1e-12);
        assert!((est.hypothesis.big_r - 0.25).abs() < 1e-12);
        assert!(!est.hypothesis.satisfied);
        // closed form e^(8 ln 2) / ((2 pi)^2 * 1/2)
        let closed = (8.0 * 2.0_f64.ln()).exp() / ((2.0 * PI).powi(2) * 0.5);
        assert!((est.estimate.unwrap() - closed).abs() < 1e-9 * closed);
    }

    #[test]
    fn hypothesis_example_fails_ineq1() {
        // nu = 3, k = 2, omega = 1, alpha constant 2 (z = 1): LHS >> 1/72
        let report = hypothesis_check(Mode::Integer, &[1.0; 8], &[2, 2, 2]);
        assert!((report.r - 2.0).abs() < 1e-12);
        assert!((report.big_r - 2.0).abs() < 1e-12);
        assert!((report.ineq1_rhs - 1.0 / 72.0).abs() < 1e-12);
        assert!(report.ineq1_lhs > 1.0);
        assert!(!report.ineq1_ok);
        assert!(report.omega_k_ok);
        assert!(report.big_r_ok);
    }

    #[test]
    fn binary_gamma_exact_value() {
        let report = hypothesis_check(Mode::Binary, &[0.5; 8], &[2, 2, 2]);
        let expect = 400.0 * 3.0_f64.powi(12) * 8.0 / (0.25 * 0.25);
        assert!((report.gamma - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn polystochastic_entropy_closed_form() {
        for (nu, k) in [(3usize, 2usize), (3, 3), (3, 4), (4, 2)] {
            for c in [1.0, 2.5] {
                let margin = c * (k as f64).powi(nu as i32 - 1);
                let spec = MarginSpec::new(vec![k; nu], vec![vec![margin; k]; nu]);
                let est = estimate_integer(&spec, 1e-10).unwrap();
                let n: f64 = (k as f64).powi(nu as i32);
                let g_expect = n * ((c + 1.0) * (c + 1.0).ln() - c * c.ln());
                assert!(
                    (est.solution.gz - g_expect).abs() < 1e-8 * g_expect.abs().max(1.0),
                    "nu={nu} k={k} c={c}: g = {} want {g_expect}",
                    est.solution.gz
                );
                for &z in &est.solution.z {
                    assert!((z - c).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn hypothesis_improves_with_k() {
        let mut last_lhs = f64::INFINITY;
        let mut last_bound = f64::INFINITY;
        for k in [10usize, 20, 40] {
            let margin = (k as f64).powi(2);
            let spec = MarginSpec::new(vec![k; 3], vec![vec![margin; k]; 3]);
            let est = estimate_integer(&spec, 1e-10).unwrap();
            let h = &est.hypothesis;
            assert!(h.ineq2_lhs < last_lhs, "ineq2 lhs must decrease with k");
            assert!(h.rel_error_bound < last_bound, "error bound must decrease with k");
            last_lhs = h.ineq2_lhs;
            last_bound = h.rel_error_bound;
        }
    }

    #[test]
    fn log_estimate_invariant_under_margin_permutation() {
        let spec = MarginSpec::new(
            vec![3, 2, 2],
            vec![vec![4.0, 2.0, 3.0], vec![5.0, 4.0], vec![6.0, 3.0]],
        );
        let mut permuted = spec.clone();
        permuted.margins[0].swap(0, 2);
        permuted.margins[1].swap(0, 1);
        let a = estimate_integer(&spec, 1e-10).unwrap();
        let b = estimate_integer(&permuted, 1e-10).unwrap();
        assert!((a.log_estimate - b.log_estimate).abs() < 1e-9);
    }

    #[test]
    fn satisfied_requires_every_inequality() {
        for mode in [Mode::Integer, Mode::Binary] {
            let z = match mode {
                Mode::Integer => vec![1.0; 8],
                Mode::Binary => vec![0.5; 8],
            };
            let report = hypothesis_check(mode, &z, &[2, 2, 2]);
            assert_eq!(
                report.satisfied,
                report.ineq1_ok && report.ineq2_ok && report.omega_k_ok && report.big_r_ok
            );
        }
    }

    #[test]
    fn huge_counts_are_capped() {
        // g(z) = 1000 * 2 ln 2 alone exceeds the f64 exponent range
        let spec = MarginSpec::new(vec![10, 10, 10], vec![vec![100.0; 10]; 3]);
        let est = estimate_integer(&spec, 1e-10).unwrap();
        assert!(est.estimate.is_none());
        assert!(est.log_estimate > 709.0);
        assert!(est.log_estimate.is_finite());
        assert!(est.log10_estimate().is_finite());
    }

    #[test]
    fn errors_propagate() {
        let bad = MarginSpec::new(
            vec![2, 2, 2],
            vec![vec![4.0, 4.0], vec![4.0, 4.0], vec![4.0, 3.0]],
        );
        assert!(matches!(
            estimate_integer(&bad, 1e-10),
            Err(EstimateError::Validation(ValidationError::UnequalTotals { .. }))
        ));
        let boundary = MarginSpec::new(
            vec![2, 2, 2],
            vec![vec![4.0, 2.0], vec![3.0, 3.0], vec![3.0, 3.0]],
        );
        // margin 4 equals the slice capacity; validation passes (<=) but the
        // interior is empty, so the solver reports infeasibility
        assert!(matches!(
            estimate_binary(&boundary, 1e-10),
            Err(EstimateError::Solve(SolveError::Infeasible(_)))
        ));
    }
}
