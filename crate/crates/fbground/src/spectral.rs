//! Closed-form and eigenvalue constants: the principal Dirichlet eigenpair,
//! the best Sobolev constant of the critical embedding, the compactness and
//! boundedness thresholds for the critical coefficient, the mountain-pass
//! radius, and the eigenray level bound.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{dirichlet_form_slices, integrate, l2_inner, laplacian_into, Field, Grid};
use crate::poisson::PoissonSolver;
use crate::util::golden_max;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("inverse power iteration did not reach tolerance within {0} iterations")]
    IterationCap(usize),
    #[error("principal eigenfunction not strictly positive at node {0}")]
    NotPositive(usize),
    #[error("unsupported dimension {0}: need N >= 3")]
    DimensionTooLow(usize),
    #[error("nonpositive input: {0}")]
    NonpositiveInput(String),
    #[error("bracketing failure in the eigenray level bound")]
    BracketingFailure,
}

/// First Dirichlet eigenvalue and L2-normalized positive eigenfunction of
/// the discrete Laplacian, by inverse power iteration with exact solves.
pub fn principal_eigen(grid: &Arc<Grid>) -> Result<(f64, Field), SpectralError> {
    let solver = PoissonSolver::new(grid);
    let n = grid.len();
    let mut v = vec![0.0; n];
    for i in 0..n {
        if grid.is_interior(i) {
            v[i] = 1.0;
        }
    }
    let mut w = vec![0.0; n];
    let mut lw = vec![0.0; n];
    let cap = 500;
    let mut lambda = 0.0;
    let mut converged = false;
    for _ in 0..cap {
        solver.solve_into(&v, &mut w);
        let norm = dot(&w, &w).sqrt();
        for x in w.iter_mut() {
            *x /= norm;
        }
        laplacian_into(grid, &w, &mut lw);
        let num = -dot(&lw, &w);
        lambda = num;
        // residual of the eigen equation in the plain node norm
        let mut res = 0.0;
        for i in 0..n {
            let r = -lw[i] - lambda * w[i];
            res += r * r;
        }
        if res.sqrt() <= 1e-10 {
            converged = true;
            v.copy_from_slice(&w);
            break;
        }
        v.copy_from_slice(&w);
    }
    if !converged {
        return Err(SpectralError::IterationCap(cap));
    }
    // sign-normalize positive, then unit trapezoid L2 norm
    let mean: f64 = v.iter().sum();
    if mean < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    let l2 = l2_inner(grid, &v, &v).sqrt();
    for x in v.iter_mut() {
        *x /= l2;
    }
    for i in 0..n {
        if grid.is_interior(i) && v[i] <= 0.0 {
            return Err(SpectralError::NotPositive(i));
        }
    }
    Ok((lambda, Field::from_values_unchecked(grid, v)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adaptive Simpson quadrature to a relative tolerance.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(_f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: usize,
        force: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(f, a, fa, m, fm, flm);
        let right = simpson(f, m, fm, b, fb, frm);
        // a minimum depth guards against symmetric error cancellation
        // fooling the Richardson acceptance test
        if depth == 0 || (force == 0 && (left + right - whole).abs() <= 15.0 * tol) {
            left + right + (left + right - whole) / 15.0
        } else {
            let nf = force.saturating_sub(1);
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1, nf)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1, nf)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(f, a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 40, 6)
}

/// Gamma at integer or half-integer argument (all that arises for N >= 3).
fn gamma_half(twice: usize) -> f64 {
    // twice = 2x; Gamma(k) = (k-1)!, Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!)
    if twice % 2 == 0 {
        let k = twice / 2;
        (1..k).map(|i| i as f64).product()
    } else {
        let k = (twice - 1) / 2;
        let mut val = std::f64::consts::PI.sqrt();
        for i in 0..k {
            val *= i as f64 + 0.5;
        }
        val
    }
}

/// Best constant of the critical Sobolev embedding, computed from the
/// extremal radial bubble profile `(1 + |x|^2)^(-(N-2)/2)` by adaptive
/// radial quadrature of its quotient. The infimum is domain independent and
/// unattained on a bounded box; the bubble attains it on the whole space.
pub fn sobolev_constant(dim: usize) -> Result<f64, SpectralError> {
    if dim < 3 {
        return Err(SpectralError::DimensionTooLow(dim));
    }
    let n = dim as f64;
    let tol = 1e-10;
    let half_pi = 0.5 * std::f64::consts::PI;
    // r = tan(theta) maps the radial integrals to a finite interval
    let i1 = adaptive_simpson(
        &|th: f64| th.sin().powf(n + 1.0) * th.cos().powf(n - 3.0),
        0.0,
        half_pi,
        tol,
    );
    let i2 = adaptive_simpson(
        &|th: f64| th.sin().powf(n - 1.0) * th.cos().powf(n - 1.0),
        0.0,
        half_pi,
        tol,
    );
    let omega = 2.0 * std::f64::consts::PI.powf(n / 2.0) / gamma_half(dim);
    let grad_sq = omega * (n - 2.0) * (n - 2.0) * i1;
    let mass = omega * i2;
    Ok(grad_sq / mass.powf((n - 2.0) / n))
}

/// Compactness and boundedness thresholds for the critical coefficient:
/// `upper = [S^(N/2) / (N (M + |box|))]^(2/(N-2))` and
/// `lower = (1 - 4/N^2)^(N/(N-2)) * upper`.
pub fn kappa_thresholds(
    m: f64,
    volume: f64,
    dim: usize,
    sobolev: f64,
) -> Result<(f64, f64), SpectralError> {
    if dim < 3 {
        return Err(SpectralError::DimensionTooLow(dim));
    }
    if !(m > 0.0) {
        return Err(SpectralError::NonpositiveInput(format!("M = {m}")));
    }
    if !(volume > 0.0) {
        return Err(SpectralError::NonpositiveInput(format!("volume = {volume}")));
    }
    if !(sobolev > 0.0) {
        return Err(SpectralError::NonpositiveInput(format!("S = {sobolev}")));
    }
    let n = dim as f64;
    let upper = (sobolev.powf(n / 2.0) / (n * (m + volume))).powf(2.0 / (n - 2.0));
    let lower = (1.0 - 4.0 / (n * n)).powf(n / (n - 2.0)) * upper;
    Ok((upper, lower))
}

/// Mountain-pass radius: the largest rho with
/// `rho^2/2 - (lambda/2 + kappa/2*) S^(-N/(N-2)) rho^(2*) >= rho^2/3`,
/// in closed form, together with the guaranteed level floor `rho^2/3`.
pub fn rho_radius(dim: usize, lambda: f64, kappa: f64, sobolev: f64) -> (f64, f64) {
    let n = dim as f64;
    let two_star = 2.0 * n / (n - 2.0);
    let coeff = lambda / 2.0 + kappa / two_star;
    let rho = (sobolev.powf(n / (n - 2.0)) / (6.0 * coeff)).powf((n - 2.0) / 4.0);
    (rho, rho * rho / 3.0)
}

/// Eigenray level bound: finite only above the principal eigenvalue.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MpassBound {
    pub finite: bool,
    /// The bound when finite; `f64::INFINITY` otherwise.
    #[serde(serialize_with = "crate::spectral::serialize_extended")]
    pub value: f64,
}

pub(crate) fn serialize_extended<S: serde::Serializer>(
    v: &f64,
    ser: S,
) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        ser.serialize_some(v)
    } else {
        ser.serialize_none()
    }
}

/// `sup_{t >= 0} integral [ lambda1 t^2 phi1^2 / 2 + 1 - lambda (t phi1 - 1)_+^2 / 2 ]`,
/// an upper bound for the mountain-pass level along the eigenray, finite for
/// `lambda > lambda1`. Bracketed by doubling, then golden-section.
pub fn mpass_upper_bound(
    lambda: f64,
    lambda1: f64,
    phi1: &Field,
) -> Result<MpassBound, SpectralError> {
    if lambda <= lambda1 {
        return Ok(MpassBound {
            finite: false,
            value: f64::INFINITY,
        });
    }
    let grid = phi1.grid().clone();
    let phi = phi1.values().to_vec();
    let objective = |t: f64| -> f64 {
        let samples: Vec<f64> = phi
            .iter()
            .map(|&p| {
                let ray = t * p;
                let plus = (ray - 1.0).max(0.0);
                0.5 * lambda1 * ray * ray + 1.0 - 0.5 * lambda * plus * plus
            })
            .collect();
        integrate(&samples, &grid, None)
    };
    let mut t_hi = 1.0;
    let mut best = objective(0.0);
    let mut doublings = 0;
    loop {
        let v = objective(t_hi);
        if v < best && v < objective(0.5 * t_hi) {
            break;
        }
        best = best.max(v);
        t_hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(SpectralError::BracketingFailure);
        }
    }
    let (_, sup) = golden_max(objective, 0.0, t_hi, 1e-9 * t_hi.max(1.0));
    Ok(MpassBound {
        finite: true,
        value: sup.max(grid.volume()),
    })
}

/// Bundle of resolved spectral constants for one domain and parameter set.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralData {
    pub dim: usize,
    pub volume: f64,
    pub lambda1: f64,
    pub sobolev: f64,
    pub lambda_star: f64,
    pub m_lambda_star: MpassBound,
    pub kappa_star_upper: f64,
    pub kappa_star_lower: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub m_lambda: MpassBound,
    pub rho: f64,
    pub rho_floor: f64,
    #[serde(skip)]
    pub phi1: Field,
}

impl SpectralData {
    /// Rayleigh quotient of a nonzero field in the face-difference form; at
    /// least the discrete principal eigenvalue by min-max.
    pub fn rayleigh(grid: &Grid, u: &Field) -> f64 {
        let num = dirichlet_form_slices(grid, u.values(), u.values());
        let den = l2_inner(grid, u.values(), u.values());
        num / den
    }

    /// Discrete quotient of the critical embedding for a nonzero field.
    pub fn sobolev_quotient(grid: &Grid, u: &Field, dim: usize) -> f64 {
        let two_star = crate::energy::critical_exponent(dim);
        let num = dirichlet_form_slices(grid, u.values(), u.values());
        let mass: Vec<f64> = u.values().iter().map(|v| v.abs().powf(two_star)).collect();
        let den = integrate(&mass, grid, None).powf(2.0 / two_star);
        num / den
    }
}
