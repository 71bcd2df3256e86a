//! Interbank distress contagion with exponentially fading memory,
//! `y_i(t) = f_i(t) + Σ_j ∫_0^t a_ij β e^{−γ(t−s)} y_j(s) ds`,
//! solved as one block affine fixed point on the time grid.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fixed_point::{iterate, FixedPointConfig, IterationTrace};
use crate::grid::Grid;
use crate::linalg::{spectral_radius, SpectralEstimate};

/// Relative tolerance and step budget of the power iteration behind the certificate.
pub const CERTIFICATE_TOL: f64 = 1e-8;
pub const CERTIFICATE_MAX_ITER: usize = 10_000;

/// `f(t) = amplitude · e^{−rate·t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialShock {
    pub amplitude: f64,
    pub rate: f64,
}

impl ExponentialShock {
    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (-self.rate * t).exp()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        -self.rate * self.at(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContagionNetwork {
    /// `a_ij ≥ 0`: exposure of bank `i` to distress at bank `j`.
    pub exposures: DMatrix<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub shocks: Vec<ExponentialShock>,
    pub grid: Grid,
}

impl ContagionNetwork {
    pub fn new(
        exposures: DMatrix<f64>,
        beta: f64,
        gamma: f64,
        shocks: Vec<ExponentialShock>,
        grid: Grid,
    ) -> Result<Self> {
        let n = exposures.nrows();
        if exposures.ncols() != n || shocks.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: if exposures.ncols() != n { exposures.ncols() } else { shocks.len() },
            });
        }
        if n == 0 {
            return Err(Error::config("network needs at least one bank"));
        }
        if let Some(a) = exposures.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(Error::config(format!("exposures must be finite and non-negative, found {a}")));
        }
        if !(beta > 0.0) || !(gamma > 0.0) {
            return Err(Error::config(format!("need beta > 0 and gamma > 0, got {beta} and {gamma}")));
        }
        Ok(Self {
            exposures,
            beta,
            gamma,
            shocks,
            grid,
        })
    }

    pub fn n_banks(&self) -> usize {
        self.exposures.nrows()
    }

    /// Index of `(bank i, node k)` in the stacked vector.
    pub fn index(&self, bank: usize, node: usize) -> usize {
        bank * self.grid.len() + node
    }
}

/// `W_(i,k),(j,l) = a_ij β e^{−γ(t_k − t_l)} Δt` for `t_l ≤ t_k`, and
/// `b_(i,k) = f_i(t_k)`, stacked bank by bank.
pub fn assemble_block_system(net: &ContagionNetwork) -> (DMatrix<f64>, DVector<f64>) {
    let nb = net.n_banks();
    let n = net.grid.len();
    let t = net.grid.nodes();
    let dt = net.grid.step();
    let memory = DMatrix::from_fn(n, n, |k, l| {
        if l <= k {
            (-net.gamma * (t[k] - t[l])).exp() * dt
        } else {
            0.0
        }
    });
    let mut w = DMatrix::zeros(nb * n, nb * n);
    for i in 0..nb {
        for j in 0..nb {
            let a = net.exposures[(i, j)] * net.beta;
            if a != 0.0 {
                w.view_mut((i * n, j * n), (n, n)).copy_from(&(&memory * a));
            }
        }
    }
    let b = DVector::from_fn(nb * n, |p, _| net.shocks[p / n].at(t[p % n]));
    (w, b)
}

/// Power-iteration estimate of `ρ(W)`, flagged approximate when it has not
/// settled to [`CERTIFICATE_TOL`] within [`CERTIFICATE_MAX_ITER`] steps.
pub fn spectral_certificate(w: &DMatrix<f64>) -> Result<SpectralEstimate> {
    spectral_radius(w, CERTIFICATE_TOL, CERTIFICATE_MAX_ITER)
}

/// Certificate of the block system from one time-diagonal block.
///
/// In time-major order the block matrix is lower triangular with every diagonal
/// block equal to `β Δt A`, so its spectrum is that of `β Δt A`.
pub fn block_certificate(net: &ContagionNetwork) -> Result<SpectralEstimate> {
    spectral_certificate(&(&net.exposures * (net.beta * net.grid.step())))
}

#[derive(Debug, Clone)]
pub struct ContagionSolution {
    /// Row `i` is the distress trajectory of bank `i` on the grid.
    pub y: DMatrix<f64>,
    pub spectral_radius: SpectralEstimate,
    pub trace: IterationTrace,
    /// Grid values outside `[0, 1]`; the linear model does not clip them.
    pub out_of_range: usize,
    /// Stacked fixed point, in the layout of [`assemble_block_system`].
    pub stacked: DVector<f64>,
}

impl ContagionSolution {
    pub fn trajectory(&self, bank: usize) -> Vec<f64> {
        self.y.row(bank).iter().copied().collect()
    }
}

/// Iterates `y ← b + W y` from `y = b`. A run that diverges or stalls with
/// `ρ(W) ≥ 1` reports [`Error::CertificateViolated`].
pub fn solve_contagion(net: &ContagionNetwork, fp: &FixedPointConfig) -> Result<ContagionSolution> {
    let (w, b) = assemble_block_system(net);
    let certificate = block_certificate(net)?;
    let result = iterate(
        |y| {
            let mut out = b.clone();
            out.gemv(1.0, &w, y, 1.0);
            out
        },
        &b,
        fp,
    );
    let (stacked, trace) = match result {
        Ok(r) => r,
        Err(Error::Divergence { trace, .. }) if certificate.value >= 1.0 => {
            return Err(Error::CertificateViolated {
                spectral_radius: certificate.value,
                trace,
            })
        }
        Err(e) => return Err(e),
    };
    if !trace.converged && certificate.value >= 1.0 {
        return Err(Error::CertificateViolated {
            spectral_radius: certificate.value,
            trace,
        });
    }
    let n = net.grid.len();
    let y = DMatrix::from_fn(net.n_banks(), n, |i, k| stacked[i * n + k]);
    let out_of_range = y.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    Ok(ContagionSolution {
        y,
        spectral_radius: certificate,
        trace,
        out_of_range,
        stacked,
    })
}

/// Five banks over ten years: banks 1–4 tightly linked, bank 5 weakly
/// exposed and hit by a faster-fading shock.
pub fn default_scenario() -> ContagionNetwork {
    let nb = 5;
    let exposures = DMatrix::from_fn(nb, nb, |i, j| match (i, j) {
        _ if i == j => 0.0,
        (4, _) => 0.025,
        _ => 0.15,
    });
    let rates = [0.68, 0.69, 0.71, 0.72, 1.5];
    let shocks = rates
        .iter()
        .map(|&rate| ExponentialShock { amplitude: 0.10, rate })
        .collect();
    let grid = Grid::new(0.0, 10.0, 201).expect("valid grid");
    ContagionNetwork::new(exposures, 0.5, 1.5, shocks, grid).expect("valid scenario")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_bank(n: usize, horizon: f64) -> ContagionNetwork {
        ContagionNetwork::new(
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            1.0,
            vec![ExponentialShock { amplitude: 0.1, rate: 0.5 }],
            Grid::new(0.0, horizon, n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_single_block() {
        let net = single_bank(3, 1.0);
        let (w, b) = assemble_block_system(&net);
        let e = |x: f64| (-x).exp() * 0.5;
        let expected = DMatrix::from_row_slice(3, 3, &[e(0.0), 0.0, 0.0, e(0.5), e(0.0), 0.0, e(1.0), e(0.5), e(0.0)]);
        assert!((w - expected).amax() < 1e-15);
        assert!((b[2] - 0.1 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn no_exposure_means_no_coupling() {
        let mut net = default_scenario();
        net.exposures.fill(0.0);
        let (w, b) = assemble_block_system(&net);
        assert_eq!(w.amax(), 0.0);
        let sol = solve_contagion(&net, &FixedPointConfig::new(1e-12, 50)).unwrap();
        assert_eq!(sol.stacked, b);
    }

    #[test]
    fn time_blocks_are_causal() {
        let net = default_scenario();
        let (w, _) = assemble_block_system(&net);
        let n = net.grid.len();
        for i in 0..5 {
            for j in 0..5 {
                for k in (0..n).step_by(17) {
                    for l in k + 1..n {
                        assert_eq!(w[(net.index(i, k), net.index(j, l))], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_shock_gives_zero_distress() {
        let mut net = default_scenario();
        for s in &mut net.shocks {
            s.amplitude = 0.0;
        }
        let sol = solve_contagion(&net, &FixedPointConfig::new(1e-12, 50)).unwrap();
        assert_eq!(sol.y.amax(), 0.0);
    }

    #[test]
    fn certificates_of_simple_matrices() {
        assert_eq!(spectral_certificate(&DMatrix::zeros(4, 4)).unwrap().value, 0.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.7]));
        assert!((spectral_certificate(&d).unwrap().value - 0.7).abs() < 1e-7);
    }

    #[test]
    fn block_certificate_matches_full_power_iteration() {
        let net = ContagionNetwork::new(
            DMatrix::from_row_slice(2, 2, &[0.2, 0.5, 0.4, 0.1]),
            0.8,
            1.0,
            vec![ExponentialShock { amplitude: 0.1, rate: 1.0 }; 2],
            Grid::new(0.0, 1.0, 6).unwrap(),
        )
        .unwrap();
        let (w, _) = assemble_block_system(&net);
        let full = spectral_certificate(&w).unwrap();
        let block = block_certificate(&net).unwrap();
        assert!(block.converged);
        assert!((full.value - block.value).abs() < 0.02 * block.value, "{full:?} {block:?}");
    }

    #[test]
    fn rejects_negative_exposure() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = -0.1;
        let shocks = vec![ExponentialShock { amplitude: 0.1, rate: 1.0 }; 2];
        assert!(ContagionNetwork::new(a, 1.0, 1.0, shocks, Grid::new(0.0, 1.0, 3).unwrap()).is_err());
    }

    #[test]
    fn supercritical_network_reports_certificate() {
        let net = ContagionNetwork::new(
            DMatrix::from_element(1, 1, 1.0),
            60.0,
            0.1,
            vec![ExponentialShock { amplitude: 0.1, rate: 0.0 }],
            Grid::new(0.0, 1.0, 21).unwrap(),
        )
        .unwrap();
        match solve_contagion(&net, &FixedPointConfig::new(1e-12, 2000)) {
            Err(Error::CertificateViolated { spectral_radius, .. }) => assert!(spectral_radius >= 1.0),
            other => panic!("{other:?}"),
        }
    }
}
