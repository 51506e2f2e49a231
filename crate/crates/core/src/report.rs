//! Batch front end: run the estimation pipeline with optional exact,
//! quadrature and diagnostics stages, and emit one machine-readable report
//! document per invocation.
//!
//! Reports are byte-for-byte reproducible for a fixed config and seed; the
//! optional timing block is the one exception and is off by default.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::diagnostics::{
    check_correlation_bounds, check_gaussian_tail, check_kernel_projection_norms,
    check_third_degree_term, check_variance_bound, model_from_spectrum, CorrelationReport,
    KernelProjectionReport, TailReport, ThirdDegreeReport, VarianceReport,
};
use crate::estimator::{estimate_binary, estimate_integer, CountEstimate, EstimateError,
    HypothesisReport};
use crate::exec::ExecMode;
use crate::oracle::{
    count_binary_exact, count_integer_exact, quadrature_count, IntegrandContext, OracleError,
};
use crate::polytope::{build_constraints, MarginSpec, Mode};
use crate::quadform::{build_q, check_eigenvalue_bounds, EigenvalueBoundReport, Witnesses};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MC_DRAWS: usize = 100_000;

/// One batch run: which pipelines to execute and where the report goes.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: PathBuf,
    pub tol: f64,
    /// Run the exact enumeration oracle.
    pub exact: bool,
    /// Verify the integral representation at this grid size per axis.
    pub verify_integral: Option<usize>,
    /// Run the diagnostics suite.
    pub diagnostics: bool,
    pub seed: u64,
    /// Node budget for the exact oracle.
    pub budget: u64,
    /// Report destination; stdout when absent.
    pub output: Option<PathBuf>,
    /// Include wall-clock timings (not reproducible byte-for-byte).
    pub timings: bool,
}

impl RunConfig {
    pub fn new(mode: Mode, input: PathBuf) -> Self {
        RunConfig {
            mode,
            input,
            tol: DEFAULT_TOL,
            exact: false,
            verify_integral: None,
            diagnostics: false,
            seed: 0,
            budget: crate::oracle::DEFAULT_BUDGET,
            output: None,
            timings: false,
        }
    }
}

/// Exit code plus the rendered report (or error) document.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub document: String,
}

#[derive(Serialize)]
struct SolutionBlock {
    g_z: f64,
    kkt_residual: f64,
    z_min: f64,
    z_max: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct SpectrumBlock {
    dim_l: usize,
    logdet: f64,
    eigen_min: f64,
    eigen_max: f64,
}

#[derive(Serialize)]
struct EstimateBlock {
    log_e: f64,
    log10: f64,
    /// Raw count when it fits a double; `null` with `capped = true` otherwise.
    value: Option<f64>,
    capped: bool,
}

#[derive(Serialize)]
struct ExactBlock {
    count: String,
}

#[derive(Serialize)]
struct QuadratureBlock {
    value: f64,
    rel_error: f64,
    grid: usize,
    imag_ratio: f64,
    refinement_gap: f64,
}

#[derive(Serialize)]
struct DiagnosticsBlock {
    eigenvalue_bounds: EigenvalueBoundReport,
    variance: VarianceReport,
    correlations: CorrelationReport,
    kernel_projection: KernelProjectionReport,
    gaussian_tail: TailReport,
    third_degree: ThirdDegreeReport,
    all_pass: bool,
}

#[derive(Serialize)]
struct TimingsBlock {
    estimate_ms: f64,
    exact_ms: Option<f64>,
    quadrature_ms: Option<f64>,
    diagnostics_ms: Option<f64>,
    total_ms: f64,
}

#[derive(Serialize)]
struct Report {
    input_echo: MarginSpec,
    mode: Mode,
    solution: SolutionBlock,
    spectrum: SpectrumBlock,
    estimate: EstimateBlock,
    hypothesis: HypothesisReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<ExactBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quadrature: Option<QuadratureBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<DiagnosticsBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings_ms: Option<TimingsBlock>,
}

#[derive(Serialize)]
struct ErrorBody {
    kind: String,
    message: String,
}

#[derive(Serialize)]
struct ErrorDocument {
    error: ErrorBody,
}

fn render<T: Serialize>(value: &T) -> String {
    let mut doc = serde_json::to_string_pretty(value).expect("report serialization");
    doc.push('\n');
    doc
}

fn error_outcome(exit_code: i32, kind: &str, message: String) -> RunOutcome {
    let doc = ErrorDocument { error: ErrorBody { kind: kind.to_string(), message } };
    RunOutcome { exit_code, document: render(&doc) }
}

fn estimate_exit_code(err: &EstimateError) -> i32 {
    match err {
        EstimateError::Validation(_) => 2,
        EstimateError::Solve(_) | EstimateError::Spectrum(_) => 3,
    }
}

fn oracle_exit_code(err: &OracleError) -> i32 {
    match err {
        OracleError::Validation(_) | OracleError::NonIntegerMargins { .. } => 2,
        OracleError::BudgetExceeded { .. } | OracleError::QuadratureDimTooLarge { .. } => 4,
        _ => 3,
    }
}

fn grid_is_valid(grid: usize) -> bool {
    grid.is_power_of_two() && (16..=512).contains(&grid)
}

/// Executes the configured pipelines against the input document and renders
/// one report. Errors become exit codes 2 (validation), 3 (solver or
/// numerics) and 4 (budget), each with a machine-readable error object.
pub fn run(config: &RunConfig) -> RunOutcome {
    let started = Instant::now();
    let raw = match std::fs::read_to_string(&config.input) {
        Ok(raw) => raw,
        Err(e) => {
            return error_outcome(2, "InputUnreadable", format!("{}: {e}", config.input.display()))
        }
    };
    let spec: MarginSpec = match serde_json::from_str(&raw) {
        Ok(spec) => spec,
        Err(e) => return error_outcome(2, "ParseError", e.to_string()),
    };
    if let Some(grid) = config.verify_integral {
        if !grid_is_valid(grid) {
            return error_outcome(
                2,
                "InvalidGrid",
                format!("grid must be a power of two in [16, 512], got {grid}"),
            );
        }
    }
    run_spec(config, &spec, started)
}

fn run_spec(config: &RunConfig, spec: &MarginSpec, started: Instant) -> RunOutcome {
    let exec = ExecMode::Parallel;

    let estimate_started = Instant::now();
    let estimate_result = match config.mode {
        Mode::Integer => estimate_integer(spec, config.tol),
        Mode::Binary => estimate_binary(spec, config.tol),
    };
    let est: CountEstimate = match estimate_result {
        Ok(est) => est,
        Err(e) => return error_outcome(estimate_exit_code(&e), e.kind(), e.to_string()),
    };
    let estimate_ms = estimate_started.elapsed().as_secs_f64() * 1e3;

    let mut exact_block = None;
    let mut exact_ms = None;
    if config.exact {
        let stage = Instant::now();
        let result = match config.mode {
            Mode::Integer => count_integer_exact(spec, config.budget, exec),
            Mode::Binary => count_binary_exact(spec, config.budget, exec),
        };
        match result {
            Ok(r) => exact_block = Some(ExactBlock { count: r.count.to_string() }),
            Err(e) => return error_outcome(oracle_exit_code(&e), e.kind(), e.to_string()),
        }
        exact_ms = Some(stage.elapsed().as_secs_f64() * 1e3);
    }

    // shared precomputation for the quadrature and diagnostics stages
    let cs = match build_constraints(spec) {
        Ok(cs) => cs,
        Err(e) => return error_outcome(2, e.kind(), e.to_string()),
    };
    let ctx = IntegrandContext::new(&cs, &est.solution);

    let mut quadrature_block = None;
    let mut quadrature_ms = None;
    if let Some(grid) = config.verify_integral {
        let stage = Instant::now();
        let fine = match quadrature_count(&ctx, grid, exec) {
            Ok(q) => q,
            Err(e) => return error_outcome(oracle_exit_code(&e), e.kind(), e.to_string()),
        };
        let coarse = match quadrature_count(&ctx, grid / 2, exec) {
            Ok(q) => q,
            Err(e) => return error_outcome(oracle_exit_code(&e), e.kind(), e.to_string()),
        };
        let refinement_gap =
            (fine.value - coarse.value).abs() / fine.value.abs().max(f64::MIN_POSITIVE);
        // the identity is always checked against the exact count; reuse the
        // exact stage's result when it already ran
        let exact_count: f64 = match &exact_block {
            Some(block) => block.count.parse().unwrap_or(f64::INFINITY),
            None => {
                let result = match config.mode {
                    Mode::Integer => count_integer_exact(spec, config.budget, exec),
                    Mode::Binary => count_binary_exact(spec, config.budget, exec),
                };
                match result {
                    Ok(r) => r.count.to_string().parse().unwrap_or(f64::INFINITY),
                    Err(e) => return error_outcome(oracle_exit_code(&e), e.kind(), e.to_string()),
                }
            }
        };
        let rel_error = (fine.value - exact_count).abs() / exact_count.max(f64::MIN_POSITIVE);
        quadrature_block = Some(QuadratureBlock {
            value: fine.value,
            rel_error,
            grid,
            imag_ratio: fine.imag_ratio,
            refinement_gap,
        });
        quadrature_ms = Some(stage.elapsed().as_secs_f64() * 1e3);
    }

    let mut diagnostics_block = None;
    let mut diagnostics_ms = None;
    if config.diagnostics {
        let stage = Instant::now();
        let qf = build_q(&est.solution, &cs);
        let witnesses = Witnesses::from_alpha(&qf.alpha, cs.dims());
        let model = model_from_spectrum(&est.spectrum);
        let eigenvalue_bounds = check_eigenvalue_bounds(&cs, &est.spectrum, &witnesses);
        let variance = check_variance_bound(&model, &cs, &witnesses);
        let correlations = check_correlation_bounds(&model, &cs, &witnesses);
        let kernel_projection = check_kernel_projection_norms(cs.dims());
        let gaussian_tail = check_gaussian_tail(&model, &cs, &witnesses);
        let third_degree =
            check_third_degree_term(&model, &ctx, config.seed, MC_DRAWS, exec);
        let all_pass = eigenvalue_bounds.ok
            && variance.pass
            && correlations.pass
            && kernel_projection.pass
            && gaussian_tail.pass
            && third_degree.pass;
        diagnostics_block = Some(DiagnosticsBlock {
            eigenvalue_bounds,
            variance,
            correlations,
            kernel_projection,
            gaussian_tail,
            third_degree,
            all_pass,
        });
        diagnostics_ms = Some(stage.elapsed().as_secs_f64() * 1e3);
    }

    let z_min = est.solution.z.iter().copied().fold(f64::INFINITY, f64::min);
    let z_max = est.solution.z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let report = Report {
        input_echo: spec.clone(),
        mode: config.mode,
        solution: SolutionBlock {
            g_z: est.solution.gz,
            kkt_residual: est.solution.kkt_residual,
            z_min,
            z_max,
            iterations: est.solution.iterations,
        },
        spectrum: SpectrumBlock {
            dim_l: est.spectrum.eigenvalues.len(),
            logdet: est.spectrum.logdet,
            eigen_min: *est.spectrum.eigenvalues.last().unwrap(),
            eigen_max: est.spectrum.eigenvalues[0],
        },
        estimate: EstimateBlock {
            log_e: est.log_estimate,
            log10: est.log10_estimate(),
            value: est.estimate,
            capped: est.estimate.is_none(),
        },
        hypothesis: est.hypothesis.clone(),
        exact: exact_block,
        quadrature: quadrature_block,
        diagnostics: diagnostics_block,
        timings_ms: config.timings.then(|| TimingsBlock {
            estimate_ms,
            exact_ms,
            quadrature_ms,
            diagnostics_ms,
            total_ms: started.elapsed().as_secs_f64() * 1e3,
        }),
    };
    RunOutcome { exit_code: 0, document: render(&report) }
}

/// Writes the document to the configured destination (stdout when absent).
pub fn write_report(config: &RunConfig, outcome: &RunOutcome) -> std::io::Result<()> {
    match &config.output {
        Some(path) => std::fs::write(path, &outcome.document),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(outcome.document.as_bytes())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_spec(dir: &std::path::Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("transport-count-test-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn full_report_is_reproducible() {
        let dir = temp_dir("repro");
        let input = write_spec(
            &dir,
            "cube.json",
            r#"{"nu": 3, "dims": [2, 2, 2], "margins": [[2, 2], [2, 2], [2, 2]]}"#,
        );
        let mut config = RunConfig::new(Mode::Binary, input);
        config.exact = true;
        config.verify_integral = Some(16);
        config.diagnostics = true;
        config.seed = 17;
        let a = run(&config);
        let b = run(&config);
        assert_eq!(a.exit_code, 0, "{}", a.document);
        assert_eq!(a.document, b.document, "reports must be byte-identical");
        assert!(a.document.contains("\"hypothesis\""));
        assert!(a.document.contains("\"count\": \"8\""));
    }

    #[test]
    fn validation_error_maps_to_exit_2() {
        let dir = temp_dir("badtotals");
        let input = write_spec(
            &dir,
            "bad.json",
            r#"{"nu": 3, "dims": [2, 2, 2], "margins": [[4, 4], [4, 4], [4, 3]]}"#,
        );
        let config = RunConfig::new(Mode::Integer, input);
        let outcome = run(&config);
        assert_eq!(outcome.exit_code, 2);
        assert!(outcome.document.contains("\"kind\": \"UnequalTotals\""));
    }

    #[test]
    fn solver_failure_maps_to_exit_3() {
        let dir = temp_dir("boundary");
        let input = write_spec(
            &dir,
            "boundary.json",
            r#"{"nu": 3, "dims": [2, 2, 2], "margins": [[4, 2], [3, 3], [3, 3]]}"#,
        );
        let config = RunConfig::new(Mode::Binary, input);
        let outcome = run(&config);
        assert_eq!(outcome.exit_code, 3);
        assert!(outcome.document.contains("\"kind\": \"Infeasible\""));
    }

    #[test]
    fn budget_exhaustion_maps_to_exit_4() {
        let dir = temp_dir("budget");
        let input = write_spec(
            &dir,
            "big.json",
            r#"{"nu": 3, "dims": [3, 3, 3], "margins": [[9, 9, 9], [9, 9, 9], [9, 9, 9]]}"#,
        );
        let mut config = RunConfig::new(Mode::Integer, input);
        config.exact = true;
        config.budget = 10;
        let outcome = run(&config);
        assert_eq!(outcome.exit_code, 4);
        assert!(outcome.document.contains("\"kind\": \"BudgetExceeded\""));
    }

    #[test]
    fn bad_grid_rejected() {
        let dir = temp_dir("grid");
        let input = write_spec(
            &dir,
            "cube.json",
            r#"{"nu": 3, "dims": [2, 2, 2], "margins": [[4, 4], [4, 4], [4, 4]]}"#,
        );
        let mut config = RunConfig::new(Mode::Integer, input);
        config.verify_integral = Some(48);
        let outcome = run(&config);
        assert_eq!(outcome.exit_code, 2);
        assert!(outcome.document.contains("InvalidGrid"));
    }

    #[test]
    fn timings_are_opt_in() {
        let dir = temp_dir("timings");
        let input = write_spec(
            &dir,
            "cube.json",
            r#"{"nu": 3, "dims": [2, 2, 2], "margins": [[4, 4], [4, 4], [4, 4]]}"#,
        );
        let mut config = RunConfig::new(Mode::Integer, input);
        let without = run(&config);
        assert!(!without.document.contains("timings_ms"));
        config.timings = true;
        let with = run(&config);
        assert!(with.document.contains("timings_ms"));
    }
}
