//! Per-arm uncertainty matrices `A_l` with an incrementally maintained inverse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frobenius tolerance on `A * A_inv - I` before the inverse is rebuilt.
pub const INVERSE_TOLERANCE: f64 = 1e-6;

/// Full consistency check cadence (in rank-1 updates).
const CHECK_EVERY: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmUncertainty {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    updates: u64,
}

impl ArmUncertainty {
    pub fn new(dim: usize) -> Self {
        Self {
            a: DMatrix::identity(dim, dim),
            a_inv: DMatrix::identity(dim, dim),
            updates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn check_dim(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: e.len(),
            });
        }
        Ok(())
    }

    /// `e^T A^{-1} e`.
    pub fn score(&self, e: &[f64]) -> Result<f64> {
        self.check_dim(e)?;
        let v = DVector::from_column_slice(e);
        Ok((&self.a_inv * &v).dot(&v).max(0.0))
    }

    /// `A <- A + e e^T`, with `A^{-1}` refreshed by Sherman–Morrison.
    pub fn update(&mut self, e: &[f64]) -> Result<()> {
        self.check_dim(e)?;
        if e.iter().all(|&x| x == 0.0) {
            return Ok(());
        }
        let v = DVector::from_column_slice(e);
        self.a.ger(1.0, &v, &v, 1.0);
        let u = &self.a_inv * &v;
        let denom = 1.0 + u.dot(&v);
        self.a_inv.ger(-1.0 / denom, &u, &u, 1.0);
        self.symmetrize();
        self.updates += 1;
        if self.updates % CHECK_EVERY == 0 {
            self.verify_inverse();
        }
        Ok(())
    }

    fn symmetrize(&mut self) {
        let n = self.dim();
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (self.a_inv[(i, j)] + self.a_inv[(j, i)]);
                self.a_inv[(i, j)] = m;
                self.a_inv[(j, i)] = m;
            }
        }
    }

    /// `|A * A_inv - I|_F`.
    pub fn inverse_error(&self) -> f64 {
        let n = self.dim();
        (&self.a * &self.a_inv - DMatrix::<f64>::identity(n, n)).norm()
    }

    /// Rebuilds `A_inv` by direct inversion if drift exceeds the tolerance.
    /// Returns whether a rebuild happened.
    pub fn verify_inverse(&mut self) -> bool {
        if self.inverse_error() < INVERSE_TOLERANCE {
            return false;
        }
        log::warn!("uncertainty inverse drifted; recomputing by direct inversion");
        let inv = self
            .a
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| self.a.clone().try_inverse());
        if let Some(inv) = inv {
            self.a_inv = inv;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_unit_vector() {
        let arm = ArmUncertainty::new(3);
        assert_eq!(arm.score(&[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(arm.score(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn one_update_halves_score() {
        let mut arm = ArmUncertainty::new(2);
        let e = [0.6, 0.8];
        arm.update(&e).unwrap();
        // A = I + e e^T; inverse of [[1.36, .48], [.48, 1.64]] directly
        let (a, b, d) = (1.36, 0.48, 1.64);
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let direct = e[0] * (inv[0][0] * e[0] + inv[0][1] * e[1])
            + e[1] * (inv[1][0] * e[0] + inv[1][1] * e[1]);
        assert!((direct - 0.5).abs() < 1e-12);
        assert!((arm.score(&e).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_update_is_noop() {
        let mut arm = ArmUncertainty::new(3);
        let before = arm.clone();
        arm.update(&[0.0; 3]).unwrap();
        assert_eq!(arm, before);
    }

    #[test]
    fn dimension_checked() {
        let mut arm = ArmUncertainty::new(3);
        assert!(arm.score(&[1.0]).is_err());
        assert!(arm.update(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn corrupted_inverse_is_rebuilt() {
        let mut arm = ArmUncertainty::new(3);
        arm.update(&[1.0, 2.0, 3.0]).unwrap();
        arm.a_inv[(0, 0)] += 0.1;
        assert!(arm.verify_inverse());
        assert!(arm.inverse_error() < 1e-10);
    }
}
