//! Maximum-entropy programs over the transportation polytope.
//!
//! Integer mode maximizes `g(x) = sum (x_j + 1) ln(x_j + 1) - x_j ln x_j`
//! over `{x >= 0 : Ax = b}`; the maximizer is the mean of a product of
//! independent geometric variables matched to the margins. Binary mode
//! maximizes the Bernoulli entropy `sum x ln(1/x) + (1 - x) ln(1/(1 - x))`
//! over `P` intersected with the unit cube.
//!
//! Both programs are solved through their smooth strictly convex duals with
//! damped Newton steps on multipliers supported on `L`, backtracking on the
//! primal residual `||Az - b||_inf`.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::polytope::{ConstraintSystem, Mode};

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    #[error("no interior point: {0}")]
    Infeasible(String),
    #[error("Newton iteration did not converge within {max_iters} steps (residual {residual})")]
    NoConvergence { max_iters: usize, residual: f64 },
    #[error("entropy argument out of domain: {0}")]
    OutOfDomain(String),
}

impl SolveError {
    pub fn kind(&self) -> &'static str {
        match self {
            SolveError::Infeasible(_) => "Infeasible",
            SolveError::NoConvergence { .. } => "NoConvergence",
            SolveError::OutOfDomain(_) => "OutOfDomain",
        }
    }
}

/// Solution of a max-entropy program.
#[derive(Debug, Clone)]
pub struct MaxEntropySolution {
    pub mode: Mode,
    /// The max-entropy point `z`, one value per cell.
    pub z: Vec<f64>,
    /// Dual multipliers, length `K`, zero on the dropped rows.
    pub lambda: DVector<f64>,
    /// Entropy value `g(z)`.
    pub gz: f64,
    /// Final `||Az - b||_inf`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Geometric entropy `sum (x_j + 1) ln(x_j + 1) - x_j ln x_j` in nats, with
/// `0 ln 0 := 0`.
pub fn entropy_geometric(x: &[f64]) -> Result<f64, SolveError> {
    let mut total = 0.0;
    for &v in x {
        if v < 0.0 {
            return Err(SolveError::OutOfDomain(format!("negative entry {v}")));
        }
        total += xlnx(v + 1.0) - xlnx(v);
    }
    Ok(total)
}

/// Bernoulli entropy `sum x ln(1/x) + (1 - x) ln(1/(1 - x))` in nats, zero at
/// the endpoints.
pub fn entropy_bernoulli(x: &[f64]) -> Result<f64, SolveError> {
    let mut total = 0.0;
    for &v in x {
        if !(0.0..=1.0).contains(&v) {
            return Err(SolveError::OutOfDomain(format!("entry {v} outside [0, 1]")));
        }
        total += -xlnx(v) - xlnx(1.0 - v);
    }
    Ok(total)
}

/// Entropy of the mode's model at `x`.
pub fn entropy(mode: Mode, x: &[f64]) -> Result<f64, SolveError> {
    match mode {
        Mode::Integer => entropy_geometric(x),
        Mode::Binary => entropy_bernoulli(x),
    }
}

/// Stationarity map: the primal point induced by the dual value
/// `s = <a_j, lambda>`.
fn zeta_of_s(mode: Mode, s: f64) -> f64 {
    match mode {
        // ln(1 + 1/z) = s  =>  z = 1 / (e^s - 1)
        Mode::Integer => 1.0 / s.exp_m1(),
        // ln((1 - z)/z) = s  =>  z = 1 / (1 + e^s)
        Mode::Binary => 1.0 / (1.0 + s.exp()),
    }
}

struct DualState {
    z: Vec<f64>,
    residual_k: DVector<f64>,
    residual_inf: f64,
}

fn eval_dual(cs: &ConstraintSystem, mode: Mode, lambda: &DVector<f64>) -> Option<DualState> {
    let n = cs.cell_count();
    let mut z = vec![0.0; n];
    for (c, zc) in z.iter_mut().enumerate() {
        let sc = cs.column_dot(c, lambda);
        if mode == Mode::Integer && sc <= 0.0 {
            return None; // outside the geometric dual domain
        }
        *zc = zeta_of_s(mode, sc);
        if !zc.is_finite() {
            return None;
        }
    }
    let mut residual_k = cs.apply_a(&z);
    residual_k -= cs.b();
    let residual_inf = residual_k.amax();
    Some(DualState { z, residual_k, residual_inf })
}

fn solve(cs: &ConstraintSystem, mode: Mode, tol: f64) -> Result<MaxEntropySolution, SolveError> {
    let n = cs.cell_count();
    let k_total = cs.row_count();
    let dim_l = cs.dim_l();

    for row in 0..k_total {
        let v = cs.b()[row];
        if v <= 0.0 {
            return Err(SolveError::Infeasible(format!("margin row {row} is {v}")));
        }
    }
    if mode == Mode::Binary {
        // An interior point needs every margin strictly inside its slice capacity.
        for (j, &k) in cs.dims().iter().enumerate() {
            let capacity: f64 = cs
                .dims()
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, &d)| d as f64)
                .product();
            for m in 0..k {
                let v = cs.b()[cs.offset(j) + m];
                if v >= capacity {
                    return Err(SolveError::Infeasible(format!(
                        "margin {m} of direction {j} is {v}, at or above capacity {capacity}"
                    )));
                }
            }
        }
    }

    // Start from multipliers that make z the constant mean cell value. Only
    // direction-1 rows are loaded, so every cell sees the same dual value and
    // the start is exact on polystochastic instances.
    let mean = cs.b().iter().take(cs.dims()[0]).sum::<f64>() / n as f64;
    let sigma0 = match mode {
        Mode::Integer => (1.0 + 1.0 / mean).ln(),
        Mode::Binary => {
            let c = mean.clamp(1e-12, 1.0 - 1e-12);
            ((1.0 - c) / c).ln()
        }
    };
    let mut lambda = DVector::zeros(k_total);
    for m in 0..cs.dims()[0] {
        lambda[m] = sigma0;
    }

    let mut state = eval_dual(cs, mode, &lambda)
        .ok_or_else(|| SolveError::Infeasible("initial dual point out of domain".into()))?;
    let tol_abs = tol * cs.b().amax().max(1.0);

    for iter in 0..MAX_ITERS {
        if state.residual_inf <= tol_abs {
            let gz = entropy(mode, &state.z)?;
            return Ok(MaxEntropySolution {
                mode,
                z: state.z,
                lambda,
                gz,
                kkt_residual: state.residual_inf,
                iterations: iter,
            });
        }

        // Reduced Hessian on L: sum over cells of alpha_c (Qa_c)(Qa_c)^T.
        let mut hess = DMatrix::zeros(dim_l, dim_l);
        for c in 0..n {
            let alpha = mode.alpha(state.z[c]);
            let rows = cs.rows_of_cell(c);
            for &ri in rows {
                let Some(li) = cs.l_coord_of_row(ri) else { continue };
                for &rj in rows {
                    let Some(lj) = cs.l_coord_of_row(rj) else { continue };
                    hess[(li, lj)] += alpha;
                }
            }
        }
        let grad_l = cs.restrict_l(&state.residual_k);
        let chol = Cholesky::new(hess).ok_or(SolveError::NoConvergence {
            max_iters: iter,
            residual: state.residual_inf,
        })?;
        let dir_l = chol.solve(&grad_l);
        let dir = cs.embed_l(&dir_l);

        // Backtrack on the primal residual, halving until the step lands in
        // the dual domain and strictly improves.
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-18 {
            let candidate = &lambda + &dir * step;
            if let Some(next) = eval_dual(cs, mode, &candidate) {
                if next.residual_inf < state.residual_inf {
                    accepted = Some((candidate, next));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, next)) => {
                lambda = candidate;
                state = next;
            }
            None => {
                return Err(SolveError::NoConvergence {
                    max_iters: iter,
                    residual: state.residual_inf,
                })
            }
        }
    }
    Err(SolveError::NoConvergence { max_iters: MAX_ITERS, residual: state.residual_inf })
}

/// Max-entropy point for counting integer points. Cell values are means of
/// independent geometric variables; all strictly positive.
pub fn solve_geometric(cs: &ConstraintSystem, tol: f64) -> Result<MaxEntropySolution, SolveError> {
    solve(cs, Mode::Integer, tol)
}

/// Max-entropy point for counting binary points. Cell values are means of
/// independent Bernoulli variables; all strictly inside `(0, 1)`.
pub fn solve_bernoulli(cs: &ConstraintSystem, tol: f64) -> Result<MaxEntropySolution, SolveError> {
    solve(cs, Mode::Binary, tol)
}

impl MaxEntropySolution {
    /// Max-norm violation of the stationarity identity relating `z` and the
    /// multipliers. Useful as an independent optimality probe.
    pub fn stationarity_residual(&self, cs: &ConstraintSystem) -> f64 {
        let mut worst: f64 = 0.0;
        for c in 0..cs.cell_count() {
            let s = cs.column_dot(c, &self.lambda);
            let lhs = match self.mode {
                Mode::Integer => (1.0 + 1.0 / self.z[c]).ln(),
                Mode::Binary => ((1.0 - self.z[c]) / self.z[c]).ln(),
            };
            worst = worst.max((lhs - s).abs());
        }
        worst
    }
}
