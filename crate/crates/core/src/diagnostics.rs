//! Deterministic verification of the restricted Gaussian's bounds: per-coordinate
//! variances, margin-sum correlations, kernel projection norms, the tail
//! union bound, and the third-degree (Wick) term.
//!
//! Everything is computed exactly through the covariance matrix of the
//! restricted Gaussian; seeded Monte Carlo appears only as a cross-check with
//! a deterministically partitioned sample stream.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::exec::ExecMode;
use crate::oracle::IntegrandContext;
use crate::polytope::{kernel_basis, ConstraintSystem};
use crate::quadform::{restricted_spectrum, QuadraticForm, RestrictedSpectrum, SpectrumError, Witnesses};

/// Draws per Monte Carlo chunk; the chunk index selects the ChaCha stream, so
/// the sample set is independent of thread count.
const MC_CHUNK: usize = 4096;

/// The restricted Gaussian with density proportional to `e^(-q(t))` on `L`.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    /// `dim L x dim L` covariance, the inverse of `QBQ` on `L`.
    pub covariance: DMatrix<f64>,
    /// Sampling factor `V diag(1/sqrt(lambda))`: `t = factor g` with standard
    /// normal `g` has covariance exactly `covariance`.
    factor: DMatrix<f64>,
}

/// Builds the covariance model from the restricted spectrum (eigen-reciprocal
/// inverse on the in-`L` eigenspace).
pub fn covariance_model(
    qf: &QuadraticForm,
    cs: &ConstraintSystem,
) -> Result<GaussianModel, SpectrumError> {
    let spectrum = restricted_spectrum(qf, cs)?;
    Ok(model_from_spectrum(&spectrum))
}

pub fn model_from_spectrum(spectrum: &RestrictedSpectrum) -> GaussianModel {
    let dim_l = spectrum.eigenvalues.len();
    let v = &spectrum.eigenvectors;
    let inv_diag = DMatrix::from_diagonal(&DVector::from_iterator(
        dim_l,
        spectrum.eigenvalues.iter().map(|&l| 1.0 / l),
    ));
    let covariance = v * &inv_diag * v.transpose();
    let sqrt_diag = DMatrix::from_diagonal(&DVector::from_iterator(
        dim_l,
        spectrum.eigenvalues.iter().map(|&l| 1.0 / l.sqrt()),
    ));
    let factor = v * sqrt_diag;
    GaussianModel { covariance, factor }
}

impl GaussianModel {
    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// Fills `out` with `count` seeded draws starting at the given stream.
    fn sample_into(&self, seed: u64, stream: u64, count: usize, out: &mut Vec<DVector<f64>>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let dim = self.dim();
        for _ in 0..count {
            let g = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            out.push(&self.factor * g);
        }
    }

    /// `count` seeded draws, chunked so parallel and sequential runs see the
    /// identical sample set.
    pub fn sample(&self, seed: u64, count: usize, exec: ExecMode) -> Vec<DVector<f64>> {
        let chunks = count.div_ceil(MC_CHUNK);
        let per_chunk = exec.map_indexed(chunks, |i| {
            let take = MC_CHUNK.min(count - i * MC_CHUNK);
            let mut out = Vec::with_capacity(take);
            self.sample_into(seed, 1 + i as u64, take, &mut out);
            out
        });
        per_chunk.into_iter().flatten().collect()
    }
}

/// Per-coordinate variance against `14 nu^4 R / (w^(6 nu - 3) r^2) k^(1-nu)`.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub bound: f64,
    pub max_variance: f64,
    pub ratio: f64,
    pub pass: bool,
}

pub fn check_variance_bound(
    model: &GaussianModel,
    cs: &ConstraintSystem,
    w: &Witnesses,
) -> VarianceReport {
    let nu = cs.nu() as f64;
    let bound = 14.0 * nu.powi(4) * w.big_r / (w.omega.powf(6.0 * nu - 3.0) * w.r * w.r)
        * w.k.powf(1.0 - nu);
    let max_variance =
        (0..model.dim()).map(|i| model.covariance[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    let ratio = max_variance / bound;
    VarianceReport { bound, max_variance, ratio, pass: ratio <= 1.0 + 1e-12 }
}

/// Margin-sum correlations `E <a_c, t><a_d, t>` against the proof constant
/// `14 nu^4 R^2 / (r^3 w^(7 nu - 5))`, at `k^(1-nu)` for arbitrary index
/// tuples and `k^(-nu)` for tuples differing in every direction.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationReport {
    pub bound_any: f64,
    pub bound_distinct: f64,
    pub max_any: f64,
    pub max_distinct: f64,
    pub pairs_checked: usize,
    pub pass: bool,
}

pub fn check_correlation_bounds(
    model: &GaussianModel,
    cs: &ConstraintSystem,
    w: &Witnesses,
) -> CorrelationReport {
    let nu = cs.nu() as f64;
    let gamma = 14.0 * nu.powi(4) * w.big_r * w.big_r
        / (w.r.powi(3) * w.omega.powf(7.0 * nu - 5.0));
    let bound_any = gamma * w.k.powf(1.0 - nu);
    let bound_distinct = gamma * w.k.powf(-nu);

    let n = cs.cell_count();
    // restricted margin-sum indicators, one column per cell
    let mut a_l = DMatrix::zeros(cs.dim_l(), n);
    for c in 0..n {
        for &row in cs.rows_of_cell(c) {
            if let Some(lc) = cs.l_coord_of_row(row) {
                a_l[(lc, c)] = 1.0;
            }
        }
    }
    let gram = a_l.transpose() * &model.covariance * a_l;

    // all pairs at desk scale, strided subsample beyond it
    let stride = if n <= 2048 { 1 } else { n / 2048 + 1 };
    let mut max_any: f64 = 0.0;
    let mut max_distinct: f64 = 0.0;
    let mut pairs_checked = 0;
    let multis: Vec<Vec<usize>> = (0..n).map(|c| cs.multi_index(c)).collect();
    let mut c = 0;
    while c < n {
        let mut d = 0;
        while d < n {
            let value = gram[(c, d)].abs();
            max_any = max_any.max(value);
            if multis[c].iter().zip(&multis[d]).all(|(a, b)| a != b) {
                max_distinct = max_distinct.max(value);
            }
            pairs_checked += 1;
            d += stride;
        }
        c += stride;
    }
    let pass = max_any <= bound_any * (1.0 + 1e-12) && max_distinct <= bound_distinct * (1.0 + 1e-12);
    CorrelationReport { bound_any, bound_distinct, max_any, max_distinct, pairs_checked, pass }
}

/// `||T e_j||_inf` for every standard basis vector, against
/// `[w^(2 nu - 1) / (2k), 1 / (w^(2 nu - 1) k)]`.
#[derive(Debug, Clone, Serialize)]
pub struct KernelProjectionReport {
    pub lower: f64,
    pub upper: f64,
    pub min_norm: f64,
    pub max_norm: f64,
    pub pass: bool,
}

pub fn check_kernel_projection_norms(dims: &[usize]) -> KernelProjectionReport {
    let nu = dims.len() as f64;
    let k = dims.iter().copied().max().unwrap() as f64;
    let omega = dims.iter().copied().min().unwrap() as f64 / k;
    let lower = omega.powf(2.0 * nu - 1.0) / (2.0 * k);
    let upper = 1.0 / (omega.powf(2.0 * nu - 1.0) * k);

    let kb = kernel_basis(dims);
    let k_total: usize = dims.iter().sum();
    let mut min_norm = f64::INFINITY;
    let mut max_norm = f64::NEG_INFINITY;
    for j in 0..k_total {
        let e = DVector::from_fn(k_total, |i, _| if i == j { 1.0 } else { 0.0 });
        let norm = kb.project(&e).amax();
        min_norm = min_norm.min(norm);
        max_norm = max_norm.max(norm);
    }
    let pass = min_norm >= lower - 1e-12 && max_norm <= upper + 1e-12;
    KernelProjectionReport { lower, upper, min_norm, max_norm, pass }
}

/// Union-bound Gaussian tail in the closed form
/// `nu k exp(-delta^2 k^(nu-1) / Gamma)`, `Gamma = 2 nu^4 R / (w^(6nu-3) r^2)`.
/// Passing uniformly in `delta` amounts to `2 max_j Var_j <= Gamma k^(1-nu)`
/// together with the coordinate count not exceeding `nu k`.
#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub gamma: f64,
    /// `2 max_j Var_j / (Gamma k^(1-nu))`; at most one for a uniform pass.
    pub exponent_ratio: f64,
    pub coordinate_count_ok: bool,
    pub pass: bool,
}

pub fn check_gaussian_tail(
    model: &GaussianModel,
    cs: &ConstraintSystem,
    w: &Witnesses,
) -> TailReport {
    let nu = cs.nu() as f64;
    let gamma = 2.0 * nu.powi(4) * w.big_r / (w.omega.powf(6.0 * nu - 3.0) * w.r * w.r);
    let max_var =
        (0..model.dim()).map(|i| model.covariance[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    let exponent_ratio = 2.0 * max_var / (gamma * w.k.powf(1.0 - nu));
    let coordinate_count_ok = cs.dim_l() as f64 <= nu * w.k;
    let pass = exponent_ratio <= 1.0 + 1e-12 && coordinate_count_ok;
    TailReport { gamma, exponent_ratio, coordinate_count_ok, pass }
}

/// Third-degree term: exact sixth-moment value of `E U^2` via the pairing
/// identity `E w1^3 w2^3 = 9 s1^2 s2^2 c12 + 6 c12^3`, cross-checked by a
/// seeded Monte Carlo estimate of `E e^(iU)`.
#[derive(Debug, Clone, Serialize)]
pub struct ThirdDegreeReport {
    /// Exact `E U^2` from the Wick sum.
    pub e_u_sq: f64,
    /// Analytic bound `|E e^(iU) - 1| <= E U^2 / 2`.
    pub analytic_bound: f64,
    pub mc_real: f64,
    pub mc_imag: f64,
    pub mc_std_err: f64,
    /// `|MC - 1|`.
    pub deviation: f64,
    pub draws: usize,
    pub pass: bool,
}

pub fn check_third_degree_term(
    model: &GaussianModel,
    ctx: &IntegrandContext<'_>,
    seed: u64,
    draws: usize,
    exec: ExecMode,
) -> ThirdDegreeReport {
    let cs = ctx.constraints();
    let n = cs.cell_count();
    let coef = ctx.cubic_coefficients();

    // margin-sum gram matrix through the covariance
    let mut a_l = DMatrix::zeros(cs.dim_l(), n);
    for c in 0..n {
        for &row in cs.rows_of_cell(c) {
            if let Some(lc) = cs.l_coord_of_row(row) {
                a_l[(lc, c)] = 1.0;
            }
        }
    }
    let gram = a_l.transpose() * &model.covariance * &a_l;
    let mut e_u_sq = 0.0;
    for c in 0..n {
        for d in 0..n {
            let rho = gram[(c, d)];
            let s_c = gram[(c, c)];
            let s_d = gram[(d, d)];
            e_u_sq += coef[c] * coef[d] * (9.0 * s_c * s_d * rho + 6.0 * rho * rho * rho);
        }
    }
    let analytic_bound = 0.5 * e_u_sq;

    // seeded Monte Carlo of E e^{iU}; W maps standard normals to margin sums
    let w_map = a_l.transpose() * &model.factor;
    let chunks = draws.div_ceil(MC_CHUNK);
    let partials = exec.map_indexed(chunks, |i| {
        let take = MC_CHUNK.min(draws - i * MC_CHUNK);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(1 + i as u64);
        let dim = model.dim();
        let mut sum = Complex64::new(0.0, 0.0);
        let mut sum_sq = Complex64::new(0.0, 0.0); // componentwise squares
        for _ in 0..take {
            let g = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let phi = &w_map * g;
            let mut u = 0.0;
            for c in 0..n {
                u += coef[c] * phi[c] * phi[c] * phi[c];
            }
            let e = Complex64::from_polar(1.0, u);
            sum += e;
            sum_sq += Complex64::new(e.re * e.re, e.im * e.im);
        }
        (sum, sum_sq)
    });
    let mut sum = Complex64::new(0.0, 0.0);
    let mut sum_sq = Complex64::new(0.0, 0.0);
    for (s, s2) in partials {
        sum += s;
        sum_sq += s2;
    }
    let nf = draws as f64;
    let mean = sum / nf;
    let var_re = (sum_sq.re / nf - mean.re * mean.re).max(0.0);
    let var_im = (sum_sq.im / nf - mean.im * mean.im).max(0.0);
    let mc_std_err = ((var_re + var_im) / nf).sqrt();
    let deviation = (mean - Complex64::new(1.0, 0.0)).norm();
    let pass = deviation <= analytic_bound + 3.0 * mc_std_err;
    ThirdDegreeReport {
        e_u_sq,
        analytic_bound,
        mc_real: mean.re,
        mc_imag: mean.im,
        mc_std_err,
        deviation,
        draws,
        pass,
    }
}
