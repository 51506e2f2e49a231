//! The Gaussian quadratic form `q(t) = 1/2 sum_cells alpha_cell <a_cell, t>^2`
//! and its spectrum restricted to the subspace `L`.
//!
//! The weights come from the max-entropy point: `alpha = z + z^2` in integer
//! mode, `alpha = z - z^2` in binary mode, but every positive weight vector is
//! admissible. The matrix `B = sum alpha a a^T` always has the block-constant
//! kernel of dimension `nu - 1`; restricted to `L` the form is positive
//! definite and `det(q|_L)` is the product of the `dim L` eigenvalues of `QBQ`
//! whose eigenvectors lie in `L`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::maxent::MaxEntropySolution;
use crate::polytope::{kernel_basis, ConstraintSystem, Mode};

/// Relative cutoff declaring an in-`L` eigenvalue non-positive.
const SPECTRUM_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SpectrumError {
    #[error("restricted spectrum degenerate: only {positive} of {expected} eigenvalues are positive")]
    SpectrumDegenerate { positive: usize, expected: usize },
}

/// Per-cell weights and the assembled `K x K` matrix `B`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub alpha: Vec<f64>,
    pub matrix: DMatrix<f64>,
    /// Mode the weights came from, when built from a solved point.
    pub mode: Option<Mode>,
}

/// Assembles `q` from a max-entropy solution: `alpha = z + z^2` (integer) or
/// `alpha = z - z^2` (binary).
pub fn build_q(solution: &MaxEntropySolution, cs: &ConstraintSystem) -> QuadraticForm {
    let alpha: Vec<f64> = solution.z.iter().map(|&z| solution.mode.alpha(z)).collect();
    let mut qf = QuadraticForm::from_alpha(alpha, cs);
    qf.mode = Some(solution.mode);
    qf
}

impl QuadraticForm {
    /// Assembles `B = sum_cells alpha_cell a_cell a_cell^T` from raw weights.
    pub fn from_alpha(alpha: Vec<f64>, cs: &ConstraintSystem) -> Self {
        assert_eq!(alpha.len(), cs.cell_count());
        let k_total = cs.row_count();
        let mut matrix = DMatrix::zeros(k_total, k_total);
        for (c, &a) in alpha.iter().enumerate() {
            let rows = cs.rows_of_cell(c);
            for &ri in rows {
                for &rj in rows {
                    matrix[(ri, rj)] += a;
                }
            }
        }
        QuadraticForm { alpha, matrix, mode: None }
    }

    /// `q(t) = 1/2 <t, Bt>` for a full-length vector.
    pub fn evaluate(&self, t: &DVector<f64>) -> f64 {
        0.5 * t.dot(&(&self.matrix * t))
    }

    pub fn min_alpha(&self) -> f64 {
        self.alpha.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_alpha(&self) -> f64 {
        self.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Eigenvalues of `QBQ` attached to eigenvectors lying in `L`, descending.
/// The `nu - 1` zero eigenpairs along the dropped coordinates are excluded
/// positionally by eigendecomposing the retained principal block.
#[derive(Debug, Clone)]
pub struct RestrictedSpectrum {
    /// `dim L` strictly positive eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors in `L` coordinates, one column per eigenvalue.
    pub eigenvectors: DMatrix<f64>,
    /// `ln det(q|_L) = sum ln(lambda)`.
    pub logdet: f64,
}

/// Diagonalizes `q|_L`.
pub fn restricted_spectrum(
    qf: &QuadraticForm,
    cs: &ConstraintSystem,
) -> Result<RestrictedSpectrum, SpectrumError> {
    let dim_l = cs.dim_l();
    let retained = cs.retained_rows();
    let block = DMatrix::from_fn(dim_l, dim_l, |i, j| qf.matrix[(retained[i], retained[j])]);
    let eigen = SymmetricEigen::new(block);

    let mut order: Vec<usize> = (0..dim_l).collect();
    order.sort_by(|&i, &j| {
        match eigen.eigenvalues[j].partial_cmp(&eigen.eigenvalues[i]).unwrap() {
            std::cmp::Ordering::Equal => {
                // stable tie-break: lexicographic on the eigenvector entries
                let ci = eigen.eigenvectors.column(i);
                let cj = eigen.eigenvectors.column(j);
                ci.iter().partial_cmp(cj.iter()).unwrap()
            }
            other => other,
        }
    });

    let eigenvalues: Vec<f64> = order.iter().map(|&i| eigen.eigenvalues[i]).collect();
    let max = eigenvalues[0];
    let positive = eigenvalues.iter().filter(|&&l| l > SPECTRUM_REL_TOL * max.max(0.0)).count();
    if positive < dim_l {
        return Err(SpectrumError::SpectrumDegenerate { positive, expected: dim_l });
    }
    let eigenvectors = DMatrix::from_fn(dim_l, dim_l, |i, j| eigen.eigenvectors[(i, order[j])]);
    let logdet = eigenvalues.iter().map(|&l| l.ln()).sum();
    Ok(RestrictedSpectrum { eigenvalues, eigenvectors, logdet })
}

/// Witness constants parameterizing the spectral bounds:
/// `r <= alpha <= R` and `omega k <= k_j <= k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witnesses {
    pub r: f64,
    pub big_r: f64,
    pub omega: f64,
    pub k: f64,
}

impl Witnesses {
    /// Tightest witnesses for a given weight vector and shape.
    pub fn from_alpha(alpha: &[f64], dims: &[usize]) -> Self {
        let r = alpha.iter().copied().fold(f64::INFINITY, f64::min);
        let big_r = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = dims.iter().copied().max().unwrap() as f64;
        let k_min = dims.iter().copied().min().unwrap() as f64;
        Witnesses { r, big_r, omega: k_min / k, k }
    }
}

/// One eigenvalue group of the restricted-eigenspace partition.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GroupReport {
    pub lower: f64,
    pub upper: f64,
    pub min_seen: f64,
    pub max_seen: f64,
    pub ok: bool,
}

fn group_report(values: &[f64], lower: f64, upper: f64) -> GroupReport {
    let min_seen = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max_seen = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // tiny relative slack for eigenvalue roundoff
    let slack = 1e-9 * upper.abs().max(1.0);
    let ok = min_seen >= lower - slack && max_seen <= upper + slack;
    GroupReport { lower, upper, min_seen, max_seen, ok }
}

/// Verdict of the three-group eigenvalue partition, plus the kernel-distance
/// bound on the small group when it is spectrally separated.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EigenvalueBoundReport {
    /// The single top eigenvalue, in `[r w^(nu-1) nu k^(nu-1) / 2, R nu k^(nu-1)]`.
    pub largest: GroupReport,
    /// The `dim L - nu` bulk eigenvalues, in `[r w^(nu-1) k^(nu-1), R k^(nu-1)]`.
    pub bulk: GroupReport,
    /// The `nu - 1` smallest, in `[r w^(nu-1) k^(nu-2) / (nu(nu-1)), R k^(nu-2) / w]`.
    pub small: GroupReport,
    /// Squared distance of each small eigenvector to `ker(B)`, checked against
    /// `(R/r) w^-nu / k` only when the small group is separated by a relative
    /// gap above 1e-6.
    pub kernel_distance: Option<GroupReport>,
    pub ok: bool,
}

/// Checks the restricted-eigenspace partition for a spectrum produced under
/// the given witnesses.
pub fn check_eigenvalue_bounds(
    cs: &ConstraintSystem,
    spectrum: &RestrictedSpectrum,
    w: &Witnesses,
) -> EigenvalueBoundReport {
    let nu = cs.nu() as f64;
    let dim_l = spectrum.eigenvalues.len();
    let small_count = cs.nu() - 1;
    let (r, big_r, omega, k) = (w.r, w.big_r, w.omega, w.k);

    let pow_km1 = k.powf(nu - 1.0);
    let pow_km2 = k.powf(nu - 2.0);
    let omega_pow = omega.powf(nu - 1.0);

    let largest = group_report(
        &spectrum.eigenvalues[..1],
        0.5 * r * omega_pow * nu * pow_km1,
        big_r * nu * pow_km1,
    );
    let bulk = group_report(
        &spectrum.eigenvalues[1..dim_l - small_count],
        r * omega_pow * pow_km1,
        big_r * pow_km1,
    );
    let small_values = &spectrum.eigenvalues[dim_l - small_count..];
    let small = group_report(
        small_values,
        r * omega_pow * pow_km2 / (nu * (nu - 1.0)),
        big_r * pow_km2 / omega,
    );

    // Distance-to-kernel bound, only meaningful when the small group does not
    // mix with the bulk under degeneracy.
    let gap_ok = {
        let bulk_min = spectrum.eigenvalues[dim_l - small_count - 1];
        let small_max = small_values[0];
        (bulk_min - small_max) > 1e-6 * bulk_min.abs().max(1.0)
    };
    let kernel_distance = if gap_ok {
        let kb = kernel_basis(cs.dims());
        let mut dists = Vec::with_capacity(small_count);
        for idx in dim_l - small_count..dim_l {
            let v_l = DVector::from_iterator(dim_l, spectrum.eigenvectors.column(idx).iter().copied());
            let v = cs.embed_l(&v_l);
            let tv = kb.project(&v);
            let dist_sq = (v.norm_squared() - tv.norm_squared()).max(0.0);
            dists.push(dist_sq);
        }
        Some(group_report(&dists, 0.0, (big_r / r) * omega.powf(-nu) / k))
    } else {
        None
    };

    let ok = largest.ok
        && bulk.ok
        && small.ok
        && kernel_distance.as_ref().map(|g| g.ok).unwrap_or(true);
    EigenvalueBoundReport { largest, bulk, small, kernel_distance, ok }
}

/// `ln integral_L e^(-q) = (dim L / 2) ln(2 pi) - logdet / 2`.
pub fn gaussian_log_integral(spectrum: &RestrictedSpectrum) -> f64 {
    let dim_l = spectrum.eigenvalues.len() as f64;
    0.5 * dim_l * (2.0 * std::f64::consts::PI).ln() - 0.5 * spectrum.logdet
}

/// Closed-form lower bound on `ln integral_L e^(-q)`:
/// `-(1/4) nu^2 k ln k - (1/2) nu k ln R`, valid for any `R >= max alpha`.
pub fn lower_bound_gaussian_log_integral(nu: usize, k: f64, big_r: f64) -> f64 {
    let nu = nu as f64;
    -0.25 * nu * nu * k * k.ln() - 0.5 * nu * k * big_r.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maxent::{solve_bernoulli, solve_geometric};
    use crate::polytope::{build_constraints, MarginSpec};

    fn cube_cs() -> ConstraintSystem {
        build_constraints(&MarginSpec::new(vec![2, 2, 2], vec![vec![4.0; 2]; 3])).unwrap()
    }

    fn uniform_qf(cs: &ConstraintSystem, a: f64) -> QuadraticForm {
        QuadraticForm::from_alpha(vec![a; cs.cell_count()], cs)
    }

    #[test]
    fn alpha_from_solutions() {
        let cs = cube_cs();
        let sol = solve_geometric(&cs, 1e-10).unwrap();
        let qf = build_q(&sol, &cs);
        for &a in &qf.alpha {
            assert!((a - 2.0).abs() < 1e-10);
        }

        let cs_b =
            build_constraints(&MarginSpec::new(vec![2, 2, 2], vec![vec![2.0; 2]; 3])).unwrap();
        let sol_b = solve_bernoulli(&cs_b, 1e-10).unwrap();
        let qf_b = build_q(&sol_b, &cs_b);
        for &a in &qf_b.alpha {
            assert!((a - 0.25).abs() < 1e-10);
        }
    }

    #[test]
    fn matrix_entries_for_uniform_weights() {
        let cs = cube_cs();
        let qf = uniform_qf(&cs, 1.0);
        for i in 0..6 {
            assert_eq!(qf.matrix[(i, i)], 4.0);
        }
        // same direction, different margin: never co-occur
        assert_eq!(qf.matrix[(0, 1)], 0.0);
        // cross-direction entries count shared cells
        assert_eq!(qf.matrix[(0, 2)], 2.0);
        assert_eq!(qf.matrix[(0, 4)], 2.0);
        assert_eq!(qf.matrix[(2, 4)], 2.0);
    }

    #[test]
    fn cube_spectrum_closed_form() {
        let cs = cube_cs();
        let qf = uniform_qf(&cs, 1.0);
        let spec = restricted_spectrum(&qf, &cs).unwrap();
        let s17 = 17.0_f64.sqrt();
        let expect = [5.0 + s17, 4.0, 2.0, 5.0 - s17];
        assert_eq!(spec.eigenvalues.len(), 4);
        for (got, want) in spec.eigenvalues.iter().zip(expect) {
            assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
        }
        assert!((spec.logdet - 64.0_f64.ln()).abs() < 1e-9);

        // doubling every weight doubles every eigenvalue
        let qf2 = uniform_qf(&cs, 2.0);
        let spec2 = restricted_spectrum(&qf2, &cs).unwrap();
        for (a, b) in spec2.eigenvalues.iter().zip(&spec.eigenvalues) {
            assert!((a - 2.0 * b).abs() < 1e-9);
        }
        assert!((spec2.logdet - 1024.0_f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn full_qbq_has_two_zero_modes() {
        // the dropped coordinates carry the nu - 1 zero eigenpairs of QBQ
        let cs = cube_cs();
        let qf = uniform_qf(&cs, 1.0);
        let mut qbq = qf.matrix.clone();
        for &row in cs.removed_rows() {
            qbq.row_mut(row).fill(0.0);
            qbq.column_mut(row).fill(0.0);
        }
        let eigen = SymmetricEigen::new(qbq.clone());
        let zeros = eigen.eigenvalues.iter().filter(|l| l.abs() < 1e-10).count();
        assert_eq!(zeros, 2);
        // trace equals the eigenvalue sum of the restricted block
        let spec = restricted_spectrum(&qf, &cs).unwrap();
        let trace: f64 = (0..6).map(|i| qbq[(i, i)]).sum();
        let sum: f64 = spec.eigenvalues.iter().sum();
        assert!((trace - sum).abs() < 1e-9 * trace.abs());
    }

    #[test]
    fn kernel_annihilated_for_any_weights() {
        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for dims in [vec![2, 2, 2], vec![3, 3, 3], vec![4, 3, 2]] {
            let n: usize = dims.iter().product();
            let spec = MarginSpec::new(
                dims.clone(),
                dims.iter().map(|&k| vec![(n / k) as f64; k]).collect(),
            );
            let cs = build_constraints(&spec).unwrap();
            let alpha: Vec<f64> =
                (0..cs.cell_count()).map(|_| rng.random_range(0.25..4.0)).collect();
            let qf = QuadraticForm::from_alpha(alpha, &cs);
            for u in kernel_basis(&dims).vectors.iter() {
                let bu = &qf.matrix * u;
                assert!(bu.amax() < 1e-10, "kernel vector not annihilated");
            }
        }
    }

    #[test]
    fn spectrum_invariant_under_margin_relabel() {
        let spec = MarginSpec::new(vec![3, 2, 2], vec![vec![2.0; 3], vec![3.0; 2], vec![3.0; 2]]);
        let cs = build_constraints(&spec).unwrap();
        let mut alpha = vec![0.0; cs.cell_count()];
        for (c, a) in alpha.iter_mut().enumerate() {
            let m = cs.multi_index(c);
            *a = 0.3 + (m[0] as f64) * 0.7 + (m[1] as f64) * 0.11 + (m[2] as f64) * 1.3;
        }
        let s1 = restricted_spectrum(&QuadraticForm::from_alpha(alpha.clone(), &cs), &cs).unwrap();

        // swap labels 0 and 2 within direction 0
        let mut alpha_p = vec![0.0; cs.cell_count()];
        for (c, &a) in alpha.iter().enumerate() {
            let mut m = cs.multi_index(c);
            m[0] = match m[0] {
                0 => 2,
                2 => 0,
                other => other,
            };
            alpha_p[cs.flat_index(&m)] = a;
        }
        let s2 = restricted_spectrum(&QuadraticForm::from_alpha(alpha_p, &cs), &cs).unwrap();
        for (a, b) in s1.eigenvalues.iter().zip(&s2.eigenvalues) {
            assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn cube_bounds_partition() {
        let cs = cube_cs();
        let qf = uniform_qf(&cs, 1.0);
        let spectrum = restricted_spectrum(&qf, &cs).unwrap();
        let w = Witnesses::from_alpha(&qf.alpha, cs.dims());
        assert_eq!(w, Witnesses { r: 1.0, big_r: 1.0, omega: 1.0, k: 2.0 });
        let report = check_eigenvalue_bounds(&cs, &spectrum, &w);
        assert!(report.largest.ok, "largest: {:?}", report.largest);
        assert!(report.bulk.ok, "bulk: {:?}", report.bulk);
        assert!(report.small.ok, "small: {:?}", report.small);
        assert!(report.ok);
        // the stated intervals for nu=3, k=2, r=R=omega=1
        assert!((report.small.lower - 1.0 / 3.0).abs() < 1e-12);
        assert!((report.small.upper - 2.0).abs() < 1e-12);
        assert!((report.largest.lower - 6.0).abs() < 1e-12);
        assert!((report.largest.upper - 12.0).abs() < 1e-12);
        assert!((report.bulk.lower - 4.0).abs() < 1e-12);
        assert!((report.bulk.upper - 4.0).abs() < 1e-12);
    }

    #[test]
    fn randomized_bounds_hold() {
        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let dims = vec![
                rng.random_range(2..=6usize),
                rng.random_range(2..=5usize),
                rng.random_range(2..=4usize),
            ];
            let (r, big_r) = *[(0.25, 1.0), (0.25, 4.0), (1.0, 4.0)].choose(&mut rng).unwrap();
            let n: usize = dims.iter().product();
            let spec = MarginSpec::new(
                dims.clone(),
                dims.iter().map(|&k| vec![(n / k) as f64; k]).collect(),
            );
            let cs = build_constraints(&spec).unwrap();
            let alpha: Vec<f64> =
                (0..cs.cell_count()).map(|_| rng.random_range(r..big_r)).collect();
            let qf = QuadraticForm::from_alpha(alpha, &cs);
            let spectrum = restricted_spectrum(&qf, &cs).unwrap();
            let k = *dims.iter().max().unwrap() as f64;
            let omega = *dims.iter().min().unwrap() as f64 / k;
            let w = Witnesses { r, big_r, omega, k };
            let report = check_eigenvalue_bounds(&cs, &spectrum, &w);
            assert!(report.ok, "dims {dims:?} r {r} R {big_r}: {report:?}");
        }
    }

    #[test]
    fn log_integral_matches_grid_quadrature() {
        let cs = cube_cs();
        let qf = uniform_qf(&cs, 1.0);
        let spectrum = restricted_spectrum(&qf, &cs).unwrap();
        let analytic = gaussian_log_integral(&spectrum);
        assert!(
            (analytic - (2.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * 64.0_f64.ln())).abs()
                < 1e-12
        );

        // independent oracle: rectangle rule over a truncated box in L coords
        let retained = cs.retained_rows();
        let block =
            DMatrix::from_fn(4, 4, |i, j| qf.matrix[(retained[i], retained[j])]);
        let half = 8.0;
        let m = 64usize;
        let h = 2.0 * half / m as f64;
        let coord = |i: usize| -half + (i as f64 + 0.5) * h;
        let mut total = 0.0;
        for i0 in 0..m {
            for i1 in 0..m {
                for i2 in 0..m {
                    for i3 in 0..m {
                        let t = DVector::from_vec(vec![
                            coord(i0),
                            coord(i1),
                            coord(i2),
                            coord(i3),
                        ]);
                        let q = 0.5 * t.dot(&(&block * &t));
                        total += (-q).exp();
                    }
                }
            }
        }
        let numeric = total * h.powi(4);
        let rel = (numeric.ln() - analytic).abs();
        assert!(rel < 1e-3, "quadrature log {} vs analytic {analytic}", numeric.ln());

        // scaling all weights by c lowers the log integral by (dimL/2) ln c
        let qf4 = uniform_qf(&cs, 4.0);
        let spec4 = restricted_spectrum(&qf4, &cs).unwrap();
        let shifted = gaussian_log_integral(&spec4);
        assert!((analytic - shifted - 2.0 * 4.0_f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn closed_form_lower_bound_holds() {
        assert!(
            (lower_bound_gaussian_log_integral(3, 2.0, 2.0)
                - (-2.25 * 2.0 * 2.0_f64.ln() - 3.0 * 2.0_f64.ln()))
            .abs()
                < 1e-12
        );
        assert!(
            (lower_bound_gaussian_log_integral(3, 4.0, 1.0) - (-9.0 * 4.0_f64.ln())).abs() < 1e-12
        );

        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..20 {
            let dims = vec![
                rng.random_range(2..=5usize),
                rng.random_range(2..=4usize),
                rng.random_range(2..=4usize),
            ];
            let n: usize = dims.iter().product();
            let spec = MarginSpec::new(
                dims.clone(),
                dims.iter().map(|&k| vec![(n / k) as f64; k]).collect(),
            );
            let cs = build_constraints(&spec).unwrap();
            let alpha: Vec<f64> =
                (0..cs.cell_count()).map(|_| rng.random_range(0.5..2.0)).collect();
            let qf = QuadraticForm::from_alpha(alpha, &cs);
            let spectrum = restricted_spectrum(&qf, &cs).unwrap();
            let k = *dims.iter().max().unwrap() as f64;
            let bound = lower_bound_gaussian_log_integral(3, k, qf.max_alpha());
            assert!(gaussian_log_integral(&spectrum) >= bound);
        }
    }
}
