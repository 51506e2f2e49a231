//! Constraint systems for multi-index transportation polytopes.
//!
//! A `nu`-index transportation polytope is the set of nonnegative
//! `k_1 x ... x k_nu` arrays whose sums over each coordinate slice match the
//! prescribed margins. The constraints form an overdetermined 0/1 system
//! `A x = b`; dropping one redundant margin row per direction `j >= 2` leaves
//! the full-rank system `QA x = Qb` supported on the subspace `L`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for comparing margin totals across directions.
const TOTAL_TOL: f64 = 1e-9;

/// Counting mode: integer points (geometric entropy) or binary points
/// (Bernoulli entropy).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Integer,
    Binary,
}

impl Mode {
    /// Name of the max-entropy model attached to this mode.
    pub fn entropy_model(self) -> &'static str {
        match self {
            Mode::Integer => "geometric",
            Mode::Binary => "bernoulli",
        }
    }

    /// Per-cell quadratic-form weight derived from the max-entropy point.
    pub fn alpha(self, zeta: f64) -> f64 {
        match self {
            Mode::Integer => zeta + zeta * zeta,
            Mode::Binary => zeta - zeta * zeta,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Integer => write!(f, "integer"),
            Mode::Binary => write!(f, "binary"),
        }
    }
}

/// Problem input: array dimensions and the margin vector of every direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    /// Number of directions, `nu >= 3`.
    pub nu: usize,
    /// Extents `k_1..k_nu`, each at least 2.
    pub dims: Vec<usize>,
    /// `margins[j]` has length `dims[j]`; entry `m` is the required sum over
    /// all cells whose `j`-th index equals `m`.
    pub margins: Vec<Vec<f64>>,
}

impl MarginSpec {
    pub fn new(dims: Vec<usize>, margins: Vec<Vec<f64>>) -> Self {
        MarginSpec { nu: dims.len(), dims, margins }
    }

    /// Total cell count `n = k_1 * ... * k_nu`.
    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row count `K = k_1 + ... + k_nu`.
    pub fn row_count(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Grand total `N`, read off the first direction.
    pub fn total(&self) -> f64 {
        self.margins.first().map(|m| m.iter().sum()).unwrap_or(0.0)
    }

    /// Slice capacity `k'_j`: the number of cells in one margin slice of
    /// direction `j`, i.e. the product of every other extent.
    pub fn slice_capacity(&self, j: usize) -> f64 {
        self.dims
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, &k)| k as f64)
            .product()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ValidationError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("margin totals differ: direction {direction} sums to {total}, direction 0 sums to {expected}")]
    UnequalTotals { direction: usize, total: f64, expected: f64 },
    #[error("margin {index} of direction {direction} is not strictly positive ({value})")]
    NonPositiveMargin { direction: usize, index: usize, value: f64 },
    #[error("margin {index} of direction {direction} is {value}, above the slice capacity {capacity}")]
    BinaryCapacityExceeded { direction: usize, index: usize, value: f64, capacity: f64 },
}

impl ValidationError {
    /// Stable machine-readable tag mirroring the variant name.
    pub fn kind(&self) -> &'static str {
        match self {
            ValidationError::DimensionMismatch(_) => "DimensionMismatch",
            ValidationError::UnequalTotals { .. } => "UnequalTotals",
            ValidationError::NonPositiveMargin { .. } => "NonPositiveMargin",
            ValidationError::BinaryCapacityExceeded { .. } => "BinaryCapacityExceeded",
        }
    }
}

/// Structural consistency shared by every pipeline: shapes line up, extents
/// are nondegenerate, margins are finite and totals agree across directions.
pub fn check_structure(spec: &MarginSpec) -> Result<(), ValidationError> {
    if spec.nu < 3 {
        return Err(ValidationError::DimensionMismatch(format!(
            "need at least 3 directions, got {}",
            spec.nu
        )));
    }
    if spec.dims.len() != spec.nu {
        return Err(ValidationError::DimensionMismatch(format!(
            "nu = {} but dims has length {}",
            spec.nu,
            spec.dims.len()
        )));
    }
    if spec.margins.len() != spec.nu {
        return Err(ValidationError::DimensionMismatch(format!(
            "nu = {} but margins has length {}",
            spec.nu,
            spec.margins.len()
        )));
    }
    for (j, &k) in spec.dims.iter().enumerate() {
        if k < 2 {
            return Err(ValidationError::DimensionMismatch(format!(
                "direction {j} has extent {k}; every extent must be at least 2"
            )));
        }
        if spec.margins[j].len() != k {
            return Err(ValidationError::DimensionMismatch(format!(
                "direction {j} has extent {k} but {} margins",
                spec.margins[j].len()
            )));
        }
    }
    for (j, row) in spec.margins.iter().enumerate() {
        for (m, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(ValidationError::DimensionMismatch(format!(
                    "margin {m} of direction {j} is not finite"
                )));
            }
        }
    }
    let expected: f64 = spec.margins[0].iter().sum();
    for j in 1..spec.nu {
        let total: f64 = spec.margins[j].iter().sum();
        if (total - expected).abs() > TOTAL_TOL * expected.abs().max(1.0) {
            return Err(ValidationError::UnequalTotals { direction: j, total, expected });
        }
    }
    Ok(())
}

/// Full estimation-mode validation. All margins must be strictly positive so
/// an interior point exists; binary mode additionally requires every margin
/// to fit inside its slice capacity `k'_j`.
pub fn validate_margins(spec: &MarginSpec, mode: Mode) -> Result<(), ValidationError> {
    check_structure(spec)?;
    for (j, row) in spec.margins.iter().enumerate() {
        for (m, &v) in row.iter().enumerate() {
            if v <= 0.0 {
                return Err(ValidationError::NonPositiveMargin { direction: j, index: m, value: v });
            }
        }
    }
    if mode == Mode::Binary {
        for (j, row) in spec.margins.iter().enumerate() {
            let capacity = spec.slice_capacity(j);
            for (m, &v) in row.iter().enumerate() {
                if v > capacity {
                    return Err(ValidationError::BinaryCapacityExceeded {
                        direction: j,
                        index: m,
                        value: v,
                        capacity,
                    });
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("expected a vector of length {expected}, got {got}")]
pub struct LengthMismatch {
    pub expected: usize,
    pub got: usize,
}

/// The assembled constraint system `A x = b` together with the index maps and
/// the subspace `L` obtained by dropping the last margin row of every
/// direction `j >= 2`.
///
/// Cells are ordered row-major with the last index varying fastest. The
/// column of cell `(m_1, ..., m_nu)` has ones exactly at rows
/// `m_1, k_1 + m_2, ..., k_1 + ... + k_(nu-1) + m_nu`.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    dims: Vec<usize>,
    /// Row offset of each direction block: `offsets[j] = k_1 + ... + k_(j-1)`.
    offsets: Vec<usize>,
    /// Full margin vector of length `K`.
    b: DVector<f64>,
    /// The `nu - 1` dropped row indices, ascending.
    removed_rows: Vec<usize>,
    /// The `dim L` retained row indices, ascending.
    retained_rows: Vec<usize>,
    /// Row index -> position in `retained_rows`, `None` for dropped rows.
    l_coord_of_row: Vec<Option<usize>>,
    /// Flattened incidence: rows of cell `c` are
    /// `cell_rows[c * nu .. (c + 1) * nu]`.
    cell_rows: Vec<usize>,
}

/// Builds the constraint system for a structurally consistent spec.
/// Estimation callers are expected to run [`validate_margins`] first.
pub fn build_constraints(spec: &MarginSpec) -> Result<ConstraintSystem, ValidationError> {
    check_structure(spec)?;
    let nu = spec.nu;
    let dims = spec.dims.clone();
    let n = spec.cell_count();
    let k_total = spec.row_count();

    let mut offsets = Vec::with_capacity(nu);
    let mut acc = 0;
    for &k in &dims {
        offsets.push(acc);
        acc += k;
    }

    let mut b = DVector::zeros(k_total);
    for (j, row) in spec.margins.iter().enumerate() {
        for (m, &v) in row.iter().enumerate() {
            b[offsets[j] + m] = v;
        }
    }

    let removed_rows: Vec<usize> = (1..nu).map(|j| offsets[j] + dims[j] - 1).collect();
    let mut l_coord_of_row = vec![None; k_total];
    let mut retained_rows = Vec::with_capacity(k_total - nu + 1);
    for (row, coord) in l_coord_of_row.iter_mut().enumerate() {
        if !removed_rows.contains(&row) {
            *coord = Some(retained_rows.len());
            retained_rows.push(row);
        }
    }

    let mut cell_rows = Vec::with_capacity(n * nu);
    let mut multi = vec![0usize; nu];
    for _ in 0..n {
        for j in 0..nu {
            cell_rows.push(offsets[j] + multi[j]);
        }
        // odometer, last index fastest
        for j in (0..nu).rev() {
            multi[j] += 1;
            if multi[j] < dims[j] {
                break;
            }
            multi[j] = 0;
        }
    }

    Ok(ConstraintSystem {
        dims,
        offsets,
        b,
        removed_rows,
        retained_rows,
        l_coord_of_row,
        cell_rows,
    })
}

impl ConstraintSystem {
    pub fn nu(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Cell count `n`.
    pub fn cell_count(&self) -> usize {
        self.cell_rows.len() / self.dims.len()
    }

    /// Row count `K`.
    pub fn row_count(&self) -> usize {
        self.b.len()
    }

    /// `dim L = K - nu + 1`.
    pub fn dim_l(&self) -> usize {
        self.retained_rows.len()
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn removed_rows(&self) -> &[usize] {
        &self.removed_rows
    }

    pub fn retained_rows(&self) -> &[usize] {
        &self.retained_rows
    }

    /// Row offset of direction `j`.
    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    /// The rows hit by cell `c`, one per direction.
    pub fn rows_of_cell(&self, c: usize) -> &[usize] {
        let nu = self.dims.len();
        &self.cell_rows[c * nu..(c + 1) * nu]
    }

    /// Position of row `row` inside the retained-row list, if retained.
    pub fn l_coord_of_row(&self, row: usize) -> Option<usize> {
        self.l_coord_of_row[row]
    }

    /// Flat index of a multi-index, last index fastest.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.dims.len());
        let mut flat = 0;
        for (j, &m) in multi.iter().enumerate() {
            debug_assert!(m < self.dims[j]);
            flat = flat * self.dims[j] + m;
        }
        flat
    }

    /// Multi-index of a flat cell index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut multi = vec![0usize; self.dims.len()];
        for j in (0..self.dims.len()).rev() {
            multi[j] = flat % self.dims[j];
            flat /= self.dims[j];
        }
        multi
    }

    /// Dense `K x n` constraint matrix.
    pub fn matrix_a(&self) -> DMatrix<f64> {
        let n = self.cell_count();
        let mut a = DMatrix::zeros(self.row_count(), n);
        for c in 0..n {
            for &row in self.rows_of_cell(c) {
                a[(row, c)] = 1.0;
            }
        }
        a
    }

    /// Orthogonal projection onto `L`: zeroes the dropped coordinates.
    pub fn project_l(&self, v: &DVector<f64>) -> Result<DVector<f64>, LengthMismatch> {
        if v.len() != self.row_count() {
            return Err(LengthMismatch { expected: self.row_count(), got: v.len() });
        }
        let mut out = v.clone();
        for &row in &self.removed_rows {
            out[row] = 0.0;
        }
        Ok(out)
    }

    /// Embeds `dim L` coordinates into `R^K`, zeros at the dropped rows.
    pub fn embed_l(&self, t: &DVector<f64>) -> DVector<f64> {
        assert_eq!(t.len(), self.dim_l());
        let mut out = DVector::zeros(self.row_count());
        for (lc, &row) in self.retained_rows.iter().enumerate() {
            out[row] = t[lc];
        }
        out
    }

    /// Restricts a length-`K` vector to its `dim L` retained coordinates.
    pub fn restrict_l(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim_l(), self.retained_rows.iter().map(|&row| v[row]))
    }

    /// `A x` for a cell vector `x`.
    pub fn apply_a(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.cell_count());
        let mut out = DVector::zeros(self.row_count());
        for (c, &v) in x.iter().enumerate() {
            for &row in self.rows_of_cell(c) {
                out[row] += v;
            }
        }
        out
    }

    /// `<a_c, w>` for the column of cell `c`.
    pub fn column_dot(&self, c: usize, w: &DVector<f64>) -> f64 {
        self.rows_of_cell(c).iter().map(|&row| w[row]).sum()
    }

    /// Numeric rank of the row-reduced system `QA` at the given singular
    /// value tolerance.
    pub fn numeric_rank(&self, tol: f64) -> usize {
        let mut qa = self.matrix_a();
        for &row in &self.removed_rows {
            qa.row_mut(row).fill(0.0);
        }
        qa.singular_values().iter().filter(|&&s| s > tol).count()
    }
}

/// Orthogonal basis of the common kernel of every margin quadratic form.
///
/// `vectors[l]` is zero on direction blocks before `l`, constant
/// `-(k'_(l+1) + ... + k'_nu)` on block `l`, and constant `k'_j` on each
/// block `j > l`. These block-constant vectors with zero block sum span
/// `ker(B)` for every positive weight vector `alpha`.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    pub vectors: Vec<DVector<f64>>,
    /// `k'_j` per direction.
    pub slice_capacities: Vec<f64>,
}

pub fn kernel_basis(dims: &[usize]) -> KernelBasis {
    let nu = dims.len();
    let k_total: usize = dims.iter().sum();
    let slice_capacities: Vec<f64> = (0..nu)
        .map(|j| {
            dims.iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, &k)| k as f64)
                .product()
        })
        .collect();
    let mut offsets = Vec::with_capacity(nu);
    let mut acc = 0;
    for &k in dims {
        offsets.push(acc);
        acc += k;
    }

    let mut vectors = Vec::with_capacity(nu - 1);
    for l in 0..nu - 1 {
        let mut u = DVector::zeros(k_total);
        let tail: f64 = slice_capacities[l + 1..].iter().sum();
        for m in 0..dims[l] {
            u[offsets[l] + m] = -tail;
        }
        for j in l + 1..nu {
            for m in 0..dims[j] {
                u[offsets[j] + m] = slice_capacities[j];
            }
        }
        vectors.push(u);
    }
    KernelBasis { vectors, slice_capacities }
}

impl KernelBasis {
    /// Orthogonal projection `T` onto the kernel, applied to `v`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for u in &self.vectors {
            let coeff = u.dot(v) / u.dot(u);
            out += u * coeff;
        }
        out
    }
}
