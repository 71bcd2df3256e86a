//! Small dense linear-algebra helpers shared by the solvers and their oracles.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Result of a power-iteration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when the relative change never dropped below the tolerance.
    pub converged: bool,
}

impl SpectralEstimate {
    pub fn is_approximate(&self) -> bool {
        !self.converged
    }
}

fn start_vector(n: usize) -> DVector<f64> {
    // Deterministic, not orthogonal to any coordinate direction.
    DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
}

/// Power-iteration estimate of the spectral radius of a square matrix.
///
/// The estimate is the growth factor `‖A x_k‖ / ‖x_k‖` of the normalized iterate.
/// For matrices whose dominant eigenvalue is defective the ratio converges only
/// algebraically; the result is then flagged approximate after `max_iter` steps.
pub fn spectral_radius(a: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> Result<SpectralEstimate> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(SpectralEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut x = start_vector(n);
    x /= x.norm();
    let mut y = DVector::zeros(n);
    let mut prev = f64::INFINITY;
    for k in 1..=max_iter {
        y.gemv(1.0, a, &x, 0.0);
        let growth = y.norm();
        if growth == 0.0 {
            return Ok(SpectralEstimate {
                value: 0.0,
                iterations: k,
                converged: true,
            });
        }
        if !growth.is_finite() {
            return Err(Error::Estimation("power iteration produced a non-finite iterate".into()));
        }
        std::mem::swap(&mut x, &mut y);
        x /= growth;
        if (growth - prev).abs() <= rel_tol * growth {
            return Ok(SpectralEstimate {
                value: growth,
                iterations: k,
                converged: true,
            });
        }
        prev = growth;
    }
    Ok(SpectralEstimate {
        value: prev,
        iterations: max_iter,
        converged: false,
    })
}

/// Largest singular value, via power iteration on `AᵀA`.
pub fn spectral_norm(a: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut x = start_vector(n);
    x /= x.norm();
    let mut ax = DVector::zeros(a.nrows());
    let mut ata_x = DVector::zeros(n);
    let mut prev = 0.0;
    for _ in 0..max_iter {
        ax.gemv(1.0, a, &x, 0.0);
        ata_x.gemv_tr(1.0, a, &ax, 0.0);
        let lambda = ata_x.norm();
        if lambda == 0.0 {
            return 0.0;
        }
        x.copy_from(&ata_x);
        x /= lambda;
        if (lambda - prev).abs() <= rel_tol * lambda {
            return lambda.sqrt();
        }
        prev = lambda;
    }
    prev.sqrt()
}

/// Solves `(I − W) y = b` by LU with partial pivoting.
pub fn solve_affine_fixed_point(w: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = w.nrows();
    if w.ncols() != n || b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: b.len(),
        });
    }
    let system = DMatrix::identity(n, n) - w;
    system
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("I - W is not invertible".into()))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Least-squares slope and coefficient of determination of `ys` against `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}
