//! Tensor-product quadrature of `F(t)` over the periodic cube.
//!
//! `A` and `b` are integral, so the integrand is `2 pi`-periodic in every
//! retained coordinate and the equal-weight rule converges super-algebraically
//! under grid doubling. The count identity checked here is
//! `count = (2 pi)^(-dim L) e^(g(z)) integral_Pi F(t) dt`.
//!
//! The scan orders cells by their highest retained coordinate and keeps prefix
//! products per coordinate level, so advancing the odometer only re-evaluates
//! factors whose coordinates actually changed. Chunks are split on the
//! outermost coordinate and combined in index order, which keeps parallel and
//! sequential results bitwise identical.

use num_complex::Complex64;
use num_traits::ToPrimitive;

use crate::exec::ExecMode;
use crate::maxent::{solve_bernoulli, solve_geometric};
use crate::oracle::enumerate::{count_binary_exact, count_integer_exact, CountResult};
use crate::oracle::integrand::IntegrandContext;
use crate::oracle::OracleError;
use crate::polytope::{build_constraints, MarginSpec, Mode};

/// Relative agreement required between successive grid halvings.
const REFINEMENT_TOL: f64 = 1e-4;
/// Tensor grids beyond this many axes are out of budget.
const MAX_QUAD_DIM: usize = 5;

#[derive(Debug, Clone)]
pub struct QuadratureOutcome {
    pub grid: usize,
    /// `e^(g(z))` times the real part of the grid mean of `F`.
    pub value: f64,
    /// Raw grid mean of `F` before the entropy factor.
    pub mean: Complex64,
    /// `|imag| / |real|` of the mean.
    pub imag_ratio: f64,
}

struct CellFactor {
    /// Retained coordinates, ascending; the last one decides the level.
    coords: Vec<u32>,
    zeta: f64,
}

struct GridScan {
    m: usize,
    dim_l: usize,
    mode: Mode,
    /// `e^(i tau_i)` for the shared axis grid.
    exp_tab: Vec<Complex64>,
    /// `e^(-i b_c tau_i)` per coordinate.
    btab: Vec<Vec<Complex64>>,
    /// Cells grouped by their highest coordinate.
    groups: Vec<Vec<CellFactor>>,
}

impl GridScan {
    fn new(ctx: &IntegrandContext<'_>, m: usize) -> Self {
        let dim_l = ctx.dim_l();
        let h = 2.0 * std::f64::consts::PI / m as f64;
        let tau = |i: usize| -std::f64::consts::PI + i as f64 * h;
        let exp_tab: Vec<Complex64> =
            (0..m).map(|i| Complex64::from_polar(1.0, tau(i))).collect();
        let btab: Vec<Vec<Complex64>> = ctx
            .b_l()
            .iter()
            .map(|&b| (0..m).map(|i| Complex64::from_polar(1.0, -b * tau(i))).collect())
            .collect();
        let mut groups: Vec<Vec<CellFactor>> = (0..dim_l).map(|_| Vec::new()).collect();
        let cs = ctx.constraints();
        for c in 0..cs.cell_count() {
            let coords: Vec<u32> = ctx.coords_of_cell(c).to_vec();
            let top = *coords.last().unwrap() as usize;
            groups[top].push(CellFactor { coords, zeta: ctx.zeta(c) });
        }
        GridScan { m, dim_l, mode: ctx.mode(), exp_tab, btab, groups }
    }

    #[inline]
    fn cell_factor(&self, cell: &CellFactor, idx: &[usize]) -> Complex64 {
        let mut e = Complex64::new(1.0, 0.0);
        for &lc in &cell.coords {
            e *= self.exp_tab[idx[lc as usize]];
        }
        let z = cell.zeta;
        match self.mode {
            Mode::Integer => {
                // |1 + z - z e^(i phi)| >= 1 for z > 0, so no pole here
                let re = 1.0 + z - z * e.re;
                let im = -z * e.im;
                let inv = 1.0 / (re * re + im * im);
                Complex64::new(re * inv, -im * inv)
            }
            Mode::Binary => Complex64::new(1.0 - z + z * e.re, z * e.im),
        }
    }

    /// Recomputes prefix products from level `from` upward.
    #[inline]
    fn refresh(&self, from: usize, idx: &[usize], prefix: &mut [Complex64]) {
        for g in from..self.dim_l {
            let mut level = prefix[g] * self.btab[g][idx[g]];
            for cell in &self.groups[g] {
                level *= self.cell_factor(cell, idx);
            }
            prefix[g + 1] = level;
        }
    }

    /// Sum of the integrand over the slab with fixed outermost index.
    fn chunk_sum(&self, outer: usize) -> Complex64 {
        let mut idx = vec![0usize; self.dim_l];
        idx[0] = outer;
        let mut prefix = vec![Complex64::new(1.0, 0.0); self.dim_l + 1];
        self.refresh(0, &idx, &mut prefix);

        // Kahan-compensated accumulation; slabs hold up to m^(dim_l - 1) terms.
        let mut sum = Complex64::new(0.0, 0.0);
        let mut comp = Complex64::new(0.0, 0.0);
        loop {
            let term = prefix[self.dim_l];
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;

            let mut p = self.dim_l - 1;
            loop {
                if p == 0 {
                    return sum;
                }
                idx[p] += 1;
                if idx[p] < self.m {
                    break;
                }
                idx[p] = 0;
                p -= 1;
            }
            self.refresh(p, &idx, &mut prefix);
        }
    }
}

/// `(2 pi)^(-dim L) e^(g(z)) integral_Pi F(t) dt` by the equal-weight rule with
/// `grid` nodes per axis.
pub fn quadrature_count(
    ctx: &IntegrandContext<'_>,
    grid: usize,
    exec: ExecMode,
) -> Result<QuadratureOutcome, OracleError> {
    if ctx.dim_l() > MAX_QUAD_DIM {
        return Err(OracleError::QuadratureDimTooLarge { dim_l: ctx.dim_l(), max: MAX_QUAD_DIM });
    }
    assert!(grid >= 2, "need at least two nodes per axis");
    let scan = GridScan::new(ctx, grid);
    let partials = exec.map_indexed(grid, |outer| scan.chunk_sum(outer));
    let mut total = Complex64::new(0.0, 0.0);
    for p in partials {
        total += p;
    }
    let mean = total / (grid as f64).powi(ctx.dim_l() as i32);
    let value = ctx.gz().exp() * mean.re;
    let imag_ratio = mean.im.abs() / mean.re.abs().max(f64::MIN_POSITIVE);
    Ok(QuadratureOutcome { grid, value, mean, imag_ratio })
}

/// Outcome of checking the integral representation against the exact count.
#[derive(Debug, Clone)]
pub struct IntegralCheckReport {
    pub grid: usize,
    /// Quadrature count at the requested grid.
    pub quadrature_count: f64,
    /// Quadrature count at half the grid, for the refinement check.
    pub coarse_count: f64,
    /// `|fine - coarse| / |fine|`.
    pub refinement_gap: f64,
    pub exact: CountResult,
    /// `|quadrature - exact| / exact`.
    pub rel_error: f64,
    pub imag_ratio: f64,
}

/// Runs the full identity check: solve the max-entropy point, integrate `F`
/// on two grids, compare against the exact counter.
pub fn verify_integral_representation(
    spec: &MarginSpec,
    mode: Mode,
    grid: usize,
    budget: u64,
    exec: ExecMode,
) -> Result<IntegralCheckReport, OracleError> {
    let cs = build_constraints(spec)?;
    if cs.dim_l() > MAX_QUAD_DIM {
        return Err(OracleError::QuadratureDimTooLarge { dim_l: cs.dim_l(), max: MAX_QUAD_DIM });
    }
    let solution = match mode {
        Mode::Integer => solve_geometric(&cs, 1e-12)?,
        Mode::Binary => solve_bernoulli(&cs, 1e-12)?,
    };
    let ctx = IntegrandContext::new(&cs, &solution);
    let fine = quadrature_count(&ctx, grid, exec)?;
    let coarse = quadrature_count(&ctx, grid / 2, exec)?;
    let refinement_gap = (fine.value - coarse.value).abs() / fine.value.abs().max(f64::MIN_POSITIVE);
    if refinement_gap > REFINEMENT_TOL {
        return Err(OracleError::QuadratureNotConverged {
            fine: fine.value,
            coarse: coarse.value,
            gap: refinement_gap,
        });
    }
    let exact = match mode {
        Mode::Integer => count_integer_exact(spec, budget, exec)?,
        Mode::Binary => count_binary_exact(spec, budget, exec)?,
    };
    let exact_f = exact.count.to_f64().unwrap_or(f64::INFINITY);
    let rel_error = (fine.value - exact_f).abs() / exact_f.max(f64::MIN_POSITIVE);
    Ok(IntegralCheckReport {
        grid,
        quadrature_count: fine.value,
        coarse_count: coarse.value,
        refinement_gap,
        exact,
        rel_error,
        imag_ratio: fine.imag_ratio,
    })
}
