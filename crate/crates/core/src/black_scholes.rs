//! Black–Scholes: the down-and-out barrier BVP as a Fredholm fixed point,
//! the heat-kernel (Green's function) pricer for European calls and a
//! polynomial least-squares projection of the price curve.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use libm::erfc;

use crate::error::{Error, Result};
use crate::fixed_point::{FixedPointConfig, IterationTrace};
use crate::grid::Grid;
use crate::linalg::spectral_radius;
use crate::quadrature::{cumulative_trapezoid, gauss_legendre, integrate};

/// Default node count of the heat-kernel quadrature.
pub const DEFAULT_QUADRATURE_NODES: usize = 96;

/// Half-width, in standard deviations, of the truncated integration window.
const WINDOW_SDS: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsConfig {
    pub r: f64,
    pub sigma: f64,
    pub maturity: f64,
    pub strike: f64,
    pub barrier: f64,
    /// Nodes of the asset grid on `[barrier, strike]`.
    pub n_nodes: usize,
}

impl Default for BsConfig {
    fn default() -> Self {
        Self {
            r: 0.05,
            sigma: 0.2,
            maturity: 1.0,
            strike: 100.0,
            barrier: 80.0,
            n_nodes: 201,
        }
    }
}

impl BsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.maturity > 0.0) {
            return Err(Error::config(format!("maturity must be positive, got {}", self.maturity)));
        }
        if !(self.barrier > 0.0 && self.barrier < self.strike) {
            return Err(Error::config(format!(
                "need 0 < barrier < strike, got barrier {} and strike {}",
                self.barrier, self.strike
            )));
        }
        if !self.r.is_finite() {
            return Err(Error::config("rate must be finite"));
        }
        Ok(())
    }

    pub fn s_grid(&self) -> Result<Grid> {
        self.validate()?;
        Grid::new(self.barrier, self.strike, self.n_nodes)
    }
}

/// Piecewise kernel `t(K − S)` for `t ≤ S`, `S(K − t)` for `t ≥ S`, with `K` the strike.
pub fn greens_kernel(s: f64, t: f64, cfg: &BsConfig) -> Result<f64> {
    for x in [s, t] {
        if !(x >= cfg.barrier && x <= cfg.strike) {
            return Err(Error::Domain {
                value: x,
                lower: cfg.barrier,
                upper: cfg.strike,
            });
        }
    }
    let k = cfg.strike;
    Ok(if t <= s { t * (k - s) } else { s * (k - t) })
}

/// `W_ij = K(S_i, S_j) ΔS` built from [`greens_kernel`].
pub fn greens_layer(cfg: &BsConfig) -> Result<DMatrix<f64>> {
    let grid = cfg.s_grid()?;
    let s = grid.nodes();
    let ds = grid.step();
    let mut w = DMatrix::zeros(s.len(), s.len());
    for i in 0..s.len() {
        for j in 0..s.len() {
            w[(i, j)] = greens_kernel(s[i], s[j], cfg)? * ds;
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution {
    pub grid: Grid,
    /// Second derivative of the price on the grid.
    pub nu: DVector<f64>,
    pub v: DVector<f64>,
    pub dv: DVector<f64>,
    pub c1: f64,
    pub c2: f64,
    /// Spectral radius of the affine map `ν ↦ f(V[ν])`.
    pub spectral_radius: f64,
}

/// Price, slope and boundary constants rebuilt from `ν = V''`.
pub struct Reconstruction {
    pub v: DVector<f64>,
    pub dv: DVector<f64>,
    pub c1: f64,
    pub c2: f64,
}

/// `V(S) = ∫_H^S ∫_H^x ν dt dx + C1 S + C2` with `C1`, `C2` fixed by
/// `V(H) = 0` and `V(strike) = strike − H`.
pub fn reconstruct(nu: &DVector<f64>, grid: &Grid, cfg: &BsConfig) -> Result<Reconstruction> {
    if nu.len() != grid.len() {
        return Err(Error::Dimension {
            expected: grid.len(),
            found: nu.len(),
        });
    }
    let h = grid.step();
    let inner = cumulative_trapezoid(nu.as_slice(), h);
    let outer = cumulative_trapezoid(&inner, h);
    let (lo, hi) = (grid.lower(), grid.upper());
    let n = grid.len();
    let a = Matrix2::new(lo, 1.0, hi, 1.0);
    let rhs = Vector2::new(-outer[0], cfg.strike - cfg.barrier - outer[n - 1]);
    let c = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("boundary system for C1, C2".into()))?;
    let s = grid.nodes();
    Ok(Reconstruction {
        v: DVector::from_fn(n, |i, _| outer[i] + c[0] * s[i] + c[1]),
        dv: DVector::from_fn(n, |i, _| inner[i] + c[0]),
        c1: c[0],
        c2: c[1],
    })
}

/// Source term `(2 / σ²S²)(rV − rSV′)`, so that `ν = f` is the ODE itself.
pub fn source_term(v: &DVector<f64>, dv: &DVector<f64>, grid: &Grid, cfg: &BsConfig) -> DVector<f64> {
    let s = grid.nodes();
    DVector::from_fn(v.len(), |i, _| {
        2.0 / (cfg.sigma * cfg.sigma * s[i] * s[i]) * (cfg.r * v[i] - cfg.r * s[i] * dv[i])
    })
}

/// Layer `(W, b)` of the affine map `ν ↦ f(V[ν])`, assembled column by column.
pub fn barrier_layer(cfg: &BsConfig) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let grid = cfg.s_grid()?;
    let n = grid.len();
    let f_of = |nu: &DVector<f64>| -> Result<DVector<f64>> {
        let rec = reconstruct(nu, &grid, cfg)?;
        Ok(source_term(&rec.v, &rec.dv, &grid, cfg))
    };
    let b = f_of(&DVector::zeros(n))?;
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let col = f_of(&e)? - &b;
        w.set_column(j, &col);
    }
    Ok((w, b))
}

/// Runs the affine sweep `ν ← b + Wν` of [`barrier_layer`], rebuilding `V`
/// after every sweep, until successive prices agree.
pub fn solve_barrier_bvp(cfg: &BsConfig, fp: &FixedPointConfig) -> Result<(BvpSolution, IterationTrace)> {
    fp.validate()?;
    let grid = cfg.s_grid()?;
    let (w, b) = barrier_layer(cfg)?;
    let rho = spectral_radius(&w, 1e-10, 10_000)?.value;
    let started = Instant::now();
    let mut trace = IterationTrace::default();
    let mut nu = b.clone();
    let mut rec = reconstruct(&nu, &grid, cfg)?;
    for _ in 0..fp.max_iterations {
        // b + Wν equals the source term of the price reconstructed from ν.
        let mut next_nu = b.clone();
        next_nu.gemv(1.0, &w, &nu, 1.0);
        let next = reconstruct(&next_nu, &grid, cfg)?;
        let residual = fp.norm.of(&(&next.v - &rec.v)) / fp.norm.of(&rec.v).max(1.0);
        trace.push(residual, started);
        if !residual.is_finite() || residual > crate::fixed_point::DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence {
                trace,
                last_residual: residual,
            });
        }
        nu = next_nu;
        rec = next;
        if residual < fp.tolerance {
            trace.converged = true;
            break;
        }
    }
    Ok((
        BvpSolution {
            grid,
            nu,
            v: rec.v,
            dv: rec.dv,
            c1: rec.c1,
            c2: rec.c2,
            spectral_radius: rho,
        },
        trace,
    ))
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Closed-form European call.
pub fn black_scholes_call(s0: f64, strike: f64, r: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return (s0 - strike).max(0.0);
    }
    let sq = sigma * tau.sqrt();
    let d1 = ((s0 / strike).ln() + (r + 0.5 * sigma * sigma) * tau) / sq;
    let d2 = d1 - sq;
    s0 * norm_cdf(d1) - strike * (-r * tau).exp() * norm_cdf(d2)
}

/// European call by quadrature of the heat-kernel representation, with the
/// default number of nodes.
pub fn price_greens_function(s0: f64, strike: f64, r: f64, sigma: f64, tau: f64) -> Result<f64> {
    price_greens_function_with(s0, strike, r, sigma, tau, DEFAULT_QUADRATURE_NODES)
}

/// `V = e^{−rτ} e^{ax + bτ} ∫ G(x, τ; ξ) e^{−aξ} max(e^ξ − K, 0) dξ` with
/// `x = ln S0`, `a = −(r − σ²/2)/σ²`, `b = −σ²a²/2` and the Gaussian heat
/// kernel `G`. The integral runs over the window where the shifted kernel
/// carries mass, intersected with `ξ > ln K`.
pub fn price_greens_function_with(s0: f64, strike: f64, r: f64, sigma: f64, tau: f64, nodes: usize) -> Result<f64> {
    if !(s0 > 0.0 && strike > 0.0 && sigma > 0.0 && tau > 0.0) || nodes == 0 {
        return Err(Error::config("pricer needs positive spot, strike, volatility, maturity and nodes"));
    }
    let var = sigma * sigma * tau;
    let x = s0.ln();
    let a = -(r - 0.5 * sigma * sigma) / (sigma * sigma);
    let b = -0.5 * sigma * sigma * a * a;
    let centre = x - a * var;
    let sd = var.sqrt();
    let lower = strike.ln().max(centre - WINDOW_SDS * sd);
    let upper = centre + WINDOW_SDS * sd;
    if lower >= upper {
        return Ok(0.0);
    }
    let rule = gauss_legendre(nodes);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    let w = integrate(&rule, lower, upper, |xi| {
        let d = x - xi;
        let exponent = a * d + b * tau - d * d / (2.0 * var);
        norm * exponent.exp() * (xi.exp() - strike)
    });
    Ok((-r * tau).exp() * w)
}

/// Price curves at each `τ` over `spots`.
pub fn time_slices(spots: &[f64], strike: f64, r: f64, sigma: f64, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
    taus.iter()
        .map(|&tau| spots.iter().map(|&s| price_greens_function(s, strike, r, sigma, tau)).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalerkinConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub n_nodes: usize,
    pub strike: f64,
    pub r: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl Default for GalerkinConfig {
    fn default() -> Self {
        Self {
            s_min: 50.0,
            s_max: 150.0,
            n_nodes: 201,
            strike: 100.0,
            r: 0.05,
            sigma: 0.2,
            tau: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolynomialBasis {
    /// Powers of the mapped variable `z ∈ [−1, 1]`, fitted by normal equations.
    Monomial,
    /// Legendre polynomials in `z`, fitted by QR.
    Legendre,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinFit {
    pub basis: PolynomialBasis,
    pub coefficients: DVector<f64>,
    pub spots: Vec<f64>,
    pub reference: DVector<f64>,
    pub fitted: DVector<f64>,
    /// `‖fit − price‖₂ / ‖price‖₂` over the grid.
    pub relative_error: f64,
}

/// Largest acceptable condition estimate of the monomial normal equations.
const NORMAL_EQUATIONS_COND_LIMIT: f64 = 1e8;

fn legendre_values(z: f64, degree: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(degree + 1);
    p.push(1.0);
    if degree >= 1 {
        p.push(z);
    }
    for k in 2..=degree {
        let kf = k as f64;
        p.push(((2.0 * kf - 1.0) * z * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf);
    }
    p
}

/// Least-squares projection of the Green's-function price curve onto
/// polynomials of degree `degree`.
pub fn galerkin_projection(degree: usize, cfg: &GalerkinConfig) -> Result<GalerkinFit> {
    if degree == 0 {
        return Err(Error::config("degree must be at least 1"));
    }
    if !(cfg.s_max > cfg.s_min && cfg.s_min > 0.0) {
        return Err(Error::config("need 0 < s_min < s_max"));
    }
    let grid = Grid::new(cfg.s_min, cfg.s_max, cfg.n_nodes)?;
    let spots = grid.nodes();
    let reference = DVector::from_iterator(
        spots.len(),
        spots
            .iter()
            .map(|&s| price_greens_function(s, cfg.strike, cfg.r, cfg.sigma, cfg.tau))
            .collect::<Result<Vec<_>>>()?,
    );
    let z: Vec<f64> = spots
        .iter()
        .map(|&s| 2.0 * (s - cfg.s_min) / (cfg.s_max - cfg.s_min) - 1.0)
        .collect();
    let m = degree + 1;

    let mono = DMatrix::from_fn(spots.len(), m, |i, k| z[i].powi(k as i32));
    let gram = mono.transpose() * &mono;
    let monomial = gram.clone().cholesky().and_then(|ch| {
        let d = ch.l().diagonal();
        let (mx, mn) = d.iter().fold((0.0_f64, f64::INFINITY), |(a, b), &x| (a.max(x), b.min(x)));
        let cond = (mx / mn).powi(2);
        (cond < NORMAL_EQUATIONS_COND_LIMIT).then(|| ch.solve(&(mono.transpose() * &reference)))
    });

    let (basis, coefficients, design) = match monomial {
        Some(c) if m <= spots.len() => (PolynomialBasis::Monomial, c, mono),
        _ => {
            let design = DMatrix::from_fn(spots.len(), m, |i, k| legendre_values(z[i], degree)[k]);
            let qr = design.clone().qr();
            let qtb = qr.q().transpose() * &reference;
            let c = qr
                .r()
                .solve_upper_triangular(&qtb)
                .ok_or_else(|| Error::Singular("rank-deficient polynomial design".into()))?;
            (PolynomialBasis::Legendre, c, design)
        }
    };
    let fitted = &design * &coefficients;
    let relative_error = (&fitted - &reference).norm() / reference.norm();
    Ok(GalerkinFit {
        basis,
        coefficients,
        spots,
        reference,
        fitted,
        relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_continuous_at_seam() {
        let cfg = BsConfig::default();
        for s in [80.0, 85.5, 99.0] {
            let a = greens_kernel(s, s, &cfg).unwrap();
            assert_eq!(a, s * (cfg.strike - s));
        }
    }

    #[test]
    fn kernel_values() {
        let cfg = BsConfig::default();
        assert_eq!(greens_kernel(90.0, 80.0, &cfg).unwrap(), 80.0 * 10.0);
        assert_eq!(greens_kernel(90.0, 95.0, &cfg).unwrap(), 90.0 * 5.0);
        assert_eq!(greens_kernel(100.0, 100.0, &cfg).unwrap(), 0.0);
        assert_eq!(greens_kernel(100.0, 85.0, &cfg).unwrap(), 0.0);
        assert!(matches!(greens_kernel(79.0, 90.0, &cfg), Err(Error::Domain { .. })));
        assert!(greens_kernel(90.0, 100.5, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = BsConfig {
            barrier: 120.0,
            ..BsConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(BsConfig {
            sigma: 0.0,
            ..BsConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn reconstruction_hits_boundaries() {
        let cfg = BsConfig::default();
        let g = cfg.s_grid().unwrap();
        let nu = DVector::from_fn(g.len(), |i, _| (i as f64 * 0.1).sin());
        let rec = reconstruct(&nu, &g, &cfg).unwrap();
        assert!(rec.v[0].abs() < 1e-8);
        assert!((rec.v[g.len() - 1] - 20.0).abs() < 1e-8);
    }

    #[test]
    fn zero_rate_gives_straight_line() {
        let cfg = BsConfig {
            r: 0.0,
            ..BsConfig::default()
        };
        let (sol, _) = solve_barrier_bvp(&cfg, &FixedPointConfig::new(1e-12, 100)).unwrap();
        assert!(sol.nu.amax() == 0.0);
        for (i, s) in sol.grid.nodes().into_iter().enumerate() {
            assert!((sol.v[i] - (s - cfg.barrier)).abs() < 1e-10);
        }
    }

    #[test]
    fn barrier_map_contracts() {
        let (sol, trace) = solve_barrier_bvp(&BsConfig::default(), &FixedPointConfig::new(1e-13, 200)).unwrap();
        assert!(trace.converged);
        assert!(sol.spectral_radius < 1.0, "{}", sol.spectral_radius);
    }

    #[test]
    fn greens_pricer_short_maturity_is_intrinsic() {
        for s0 in [90.0, 99.9, 100.1, 110.0] {
            let p = price_greens_function(s0, 100.0, 0.05, 0.2, 1e-10).unwrap();
            assert!((p - (s0 - 100.0_f64).max(0.0)).abs() < 1e-8, "{s0} {p}");
        }
        // At the money the time value σS√(τ/2π) dominates the intrinsic zero.
        let atm = price_greens_function(100.0, 100.0, 0.05, 0.2, 1e-10).unwrap();
        assert!((atm - 20.0 * (1e-10 / (2.0 * std::f64::consts::PI)).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn greens_pricer_monotone_in_spot() {
        let prices: Vec<f64> = (80..=120)
            .map(|s| price_greens_function(s as f64, 100.0, 0.05, 0.2, 1.0).unwrap())
            .collect();
        assert!(prices.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn greens_pricer_rejects_bad_input() {
        assert!(price_greens_function(-1.0, 100.0, 0.05, 0.2, 1.0).is_err());
        assert!(price_greens_function(100.0, 100.0, 0.05, 0.0, 1.0).is_err());
    }

    #[test]
    fn galerkin_interpolates_at_full_degree() {
        let cfg = GalerkinConfig {
            n_nodes: 8,
            ..GalerkinConfig::default()
        };
        let fit = galerkin_projection(7, &cfg).unwrap();
        assert!(fit.relative_error < 1e-9, "{}", fit.relative_error);
    }

    #[test]
    fn galerkin_error_non_increasing_in_degree() {
        let cfg = GalerkinConfig::default();
        let errs: Vec<f64> = (1..=18).map(|d| galerkin_projection(d, &cfg).unwrap().relative_error).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{errs:?}");
        }
    }

    #[test]
    fn galerkin_degree_zero_rejected() {
        assert!(galerkin_projection(0, &GalerkinConfig::default()).is_err());
    }
}
