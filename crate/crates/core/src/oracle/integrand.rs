//! The characteristic-function integrand `F(t)` whose integral over the
//! periodic cube `Pi = L cap [-pi, pi]^K` exactly encodes the count, together
//! with the cubic phase `f(t)` and quartic remainder bound used in the local
//! expansion `ln F ~ -q +/- i f + h` near the origin.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::maxent::MaxEntropySolution;
use crate::oracle::OracleError;
use crate::polytope::{ConstraintSystem, Mode};

/// Denominator magnitude below which the integer-mode factor is a pole.
const POLE_TOL: f64 = 1e-14;

/// Everything needed to evaluate `F`, `f` and the `h` bound at points of
/// `L` given in retained coordinates.
pub struct IntegrandContext<'a> {
    cs: &'a ConstraintSystem,
    mode: Mode,
    z: Vec<f64>,
    gz: f64,
    /// Retained-coordinate positions of each cell's rows, flattened; the
    /// dropped rows contribute zero phase and are omitted.
    cell_coords: Vec<u32>,
    cell_starts: Vec<u32>,
    /// Margin values on the retained rows, in `L` coordinate order.
    b_l: Vec<f64>,
}

impl<'a> IntegrandContext<'a> {
    pub fn new(cs: &'a ConstraintSystem, solution: &MaxEntropySolution) -> Self {
        let n = cs.cell_count();
        let mut cell_coords = Vec::with_capacity(n * cs.nu());
        let mut cell_starts = Vec::with_capacity(n + 1);
        cell_starts.push(0);
        for c in 0..n {
            for &row in cs.rows_of_cell(c) {
                if let Some(lc) = cs.l_coord_of_row(row) {
                    cell_coords.push(lc as u32);
                }
            }
            cell_starts.push(cell_coords.len() as u32);
        }
        let b_l: Vec<f64> = cs.retained_rows().iter().map(|&row| cs.b()[row]).collect();
        IntegrandContext {
            cs,
            mode: solution.mode,
            z: solution.z.clone(),
            gz: solution.gz,
            cell_coords,
            cell_starts,
            b_l,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn gz(&self) -> f64 {
        self.gz
    }

    /// Max-entropy value of cell `c`.
    pub fn zeta(&self, c: usize) -> f64 {
        self.z[c]
    }

    pub fn constraints(&self) -> &ConstraintSystem {
        self.cs
    }

    pub fn dim_l(&self) -> usize {
        self.cs.dim_l()
    }

    /// Retained-coordinate list of cell `c`.
    pub fn coords_of_cell(&self, c: usize) -> &[u32] {
        &self.cell_coords[self.cell_starts[c] as usize..self.cell_starts[c + 1] as usize]
    }

    /// Margin values over the retained rows.
    pub fn b_l(&self) -> &[f64] {
        &self.b_l
    }

    fn phase(&self, c: usize, t: &DVector<f64>) -> f64 {
        self.coords_of_cell(c).iter().map(|&lc| t[lc as usize]).sum()
    }

    /// Cubic coefficients `beta^3 = alpha (2 zeta +/- 1) / 6` per cell, so the
    /// cubic phase is `f(t) = sum beta^3 <a, t>^3`.
    pub fn cubic_coefficients(&self) -> Vec<f64> {
        self.z
            .iter()
            .map(|&z| {
                let alpha = self.mode.alpha(z);
                let odd = match self.mode {
                    Mode::Integer => 2.0 * z + 1.0,
                    Mode::Binary => 2.0 * z - 1.0,
                };
                alpha * odd / 6.0
            })
            .collect()
    }

    /// `q(t) = 1/2 sum alpha <a, t>^2` on the embedded point.
    pub fn quadratic(&self, t: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for (c, &z) in self.z.iter().enumerate() {
            let phi = self.phase(c, t);
            total += self.mode.alpha(z) * phi * phi;
        }
        0.5 * total
    }

    /// Evaluates `F(t)` for `t` in retained coordinates, `||t||_inf <= pi`.
    ///
    /// Integer mode: `e^(-i<t,b>) prod 1 / (1 + z - z e^(i<a,t>))`.
    /// Binary mode: `e^(-i<t,b>) prod (1 - z + z e^(i<a,t>))`.
    pub fn eval_f(&self, t: &DVector<f64>) -> Result<Complex64, OracleError> {
        assert_eq!(t.len(), self.dim_l());
        assert!(t.amax() <= std::f64::consts::PI + 1e-12, "eval_f needs ||t||_inf <= pi");
        let mut product = Complex64::new(1.0, 0.0);
        for (c, &z) in self.z.iter().enumerate() {
            let phi = self.phase(c, t);
            let e = Complex64::from_polar(1.0, phi);
            product *= match self.mode {
                Mode::Integer => {
                    let denom = Complex64::new(1.0 + z - z * e.re, -z * e.im);
                    let norm_sq = denom.norm_sqr();
                    if norm_sq.sqrt() < POLE_TOL {
                        return Err(OracleError::PoleEncountered { cell: c });
                    }
                    denom.conj() / norm_sq
                }
                Mode::Binary => Complex64::new(1.0 - z + z * e.re, z * e.im),
            };
        }
        let b_phase: f64 = self.b_l.iter().zip(t.iter()).map(|(&b, &tc)| b * tc).sum();
        Ok(product * Complex64::from_polar(1.0, -b_phase))
    }

    fn expansion_radius(&self) -> f64 {
        let nu = self.cs.nu() as f64;
        match self.mode {
            Mode::Integer => {
                let big_r = self
                    .z
                    .iter()
                    .map(|&z| self.mode.alpha(z))
                    .fold(1.0_f64, f64::max);
                1.0 / (2.0 * nu * big_r.sqrt())
            }
            Mode::Binary => 1.0 / (2.0 * nu),
        }
    }

    /// Cubic phase `f(t) = (1/6) sum alpha (2 zeta +/- 1) <a, t>^3`, valid
    /// inside the expansion radius of the mode.
    pub fn eval_cubic_f(&self, t: &DVector<f64>) -> Result<f64, OracleError> {
        let radius = self.expansion_radius();
        if t.amax() > radius {
            return Err(OracleError::OutOfExpansionRadius { norm: t.amax(), radius });
        }
        let coef = self.cubic_coefficients();
        let mut total = 0.0;
        for (c, &b3) in coef.iter().enumerate() {
            let phi = self.phase(c, t);
            total += b3 * phi * phi * phi;
        }
        Ok(total)
    }

    /// Quartic remainder bound: `2 sum (1 + zeta^4) <a, t>^4` in integer mode,
    /// `2 sum <a, t>^4` in binary mode.
    pub fn bound_quartic_h(&self, t: &DVector<f64>) -> Result<f64, OracleError> {
        let radius = self.expansion_radius();
        if t.amax() > radius {
            return Err(OracleError::OutOfExpansionRadius { norm: t.amax(), radius });
        }
        let mut total = 0.0;
        for (c, &z) in self.z.iter().enumerate() {
            let phi = self.phase(c, t);
            let phi4 = phi * phi * phi * phi;
            total += match self.mode {
                Mode::Integer => (1.0 + z * z * z * z) * phi4,
                Mode::Binary => phi4,
            };
        }
        Ok(2.0 * total)
    }
}
