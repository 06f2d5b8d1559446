//! Dense linear solves for the discounted flow and value equations.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Residual target for iterative refinement.
const REFINE_TOL: f64 = 1e-11;
const MAX_REFINE: usize = 4;

/// Which side of the discounted chain to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `(I - γ Pᵀ) x = b`: discounted visitation (flow) from a start distribution.
    Flow,
    /// `(I - γ P) x = b`: discounted value of a per-state reward.
    Value,
}

/// Solves the discounted chain equation for a row-stochastic `transition` (n × n, row-major).
pub fn solve_discounted(
    transition: &[f64],
    n: usize,
    gamma: f64,
    b: &[f64],
    side: Side,
) -> Result<Vec<f64>> {
    if transition.len() != n * n || b.len() != n {
        return Err(Error::DimensionMismatch("discounted solve"));
    }
    let a = DMatrix::from_fn(n, n, |i, j| {
        let p = match side {
            Side::Flow => transition[j * n + i],
            Side::Value => transition[i * n + j],
        };
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * p
    });
    solve_dense(a, b)
}

/// LU solve with a few rounds of iterative refinement.
pub fn solve_dense(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or(Error::SolveFailed("singular system"))?;
    for _ in 0..MAX_REFINE {
        let r = &rhs - &a * &x;
        if r.amax() < REFINE_TOL {
            break;
        }
        let dx = lu.solve(&r).ok_or(Error::SolveFailed("singular system"))?;
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolveFailed("non-finite solution"));
    }
    Ok(x.iter().copied().collect())
}
