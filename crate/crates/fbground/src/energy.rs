//! Smoothing kernel, admissible nonlinearities, the nonsmooth phase energy,
//! its C^1 regularization, the regularized gradient, and the critical-mass
//! gap bound.
//!
//! Discretization note: the Dirichlet term of every energy here is
//! accumulated per phase, `(|grad u+|^2 + |grad u-|^2)/2` with
//! `u+ = (u-1)_+`, `u- = min(u, 1)`, using the face-difference form. In the
//! continuum the two writings of the Dirichlet integral agree; on a grid the
//! per-phase form is the one that keeps the fiber algebra, the projection
//! identities, and the kernel comparison `J_eps <= J` exact, and the
//! regularized gradient below is the exact derivative of this discrete
//! functional.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::{
    dirichlet_form_slices, integrate, l2_inner, laplacian_into, Field,
};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("epsilon must be positive, got {0}")]
    NonpositiveEpsilon(f64),
    #[error("operation requires the critical nonlinearity")]
    NotCritical,
    #[error("nonlinearity violates its admissibility conditions: {0}")]
    Inadmissible(String),
}

/// Fixed polynomial smoothing profile: beta(t) = 30 t^2 (1-t)^2 on [0,1],
/// zero outside. Range [0, 1.875], unit integral, C^1 on the whole line;
/// its primitive B is the closed-form quintic 10t^3 - 15t^4 + 6t^5 clamped
/// to [0,1].
pub mod kernel {
    pub fn beta(t: f64) -> f64 {
        if t <= 0.0 || t >= 1.0 {
            0.0
        } else {
            let s = 1.0 - t;
            30.0 * t * t * s * s
        }
    }

    pub fn beta_prime(t: f64) -> f64 {
        if t <= 0.0 || t >= 1.0 {
            0.0
        } else {
            60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
        }
    }

    pub fn big_b(t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            1.0
        } else {
            t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
        }
    }
}

/// Critical Sobolev exponent 2N/(N-2).
pub fn critical_exponent(dim: usize) -> f64 {
    assert!(dim >= 3);
    2.0 * dim as f64 / (dim as f64 - 2.0)
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    /// f(t) = lambda t_+ + kappa t_+^(2*-1).
    Critical,
    /// f(t) = lambda t_+ + kappa t_+^(p-1), 2 < p < 2*.
    Subcritical { p: f64 },
    Custom {
        f: ScalarFn,
        big_f: ScalarFn,
        f_prime: Option<ScalarFn>,
    },
}

/// A nonlinearity vanishing on t <= 0 with at-most-critical growth, together
/// with its primitive and the growth constant used for validation.
#[derive(Clone)]
pub struct Nonlinearity {
    dim: usize,
    lambda: f64,
    kappa: f64,
    two_star: f64,
    growth_c: f64,
    kind: Kind,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            Kind::Critical => "critical".to_string(),
            Kind::Subcritical { p } => format!("subcritical(p={p})"),
            Kind::Custom { .. } => "custom".to_string(),
        };
        write!(
            f,
            "Nonlinearity({kind}, lambda={}, kappa={}, dim={})",
            self.lambda, self.kappa, self.dim
        )
    }
}

impl Nonlinearity {
    pub fn critical(dim: usize, lambda: f64, kappa: f64) -> Result<Nonlinearity, EnergyError> {
        if !(lambda > 0.0) || !(kappa > 0.0) {
            return Err(EnergyError::Inadmissible(format!(
                "critical kind needs lambda, kappa > 0 (got {lambda}, {kappa})"
            )));
        }
        let nl = Nonlinearity {
            dim,
            lambda,
            kappa,
            two_star: critical_exponent(dim),
            growth_c: lambda.max(kappa) + lambda,
            kind: Kind::Critical,
        };
        nl.validate()?;
        Ok(nl)
    }

    pub fn subcritical(
        dim: usize,
        lambda: f64,
        kappa: f64,
        p: f64,
    ) -> Result<Nonlinearity, EnergyError> {
        let two_star = critical_exponent(dim);
        if !(p > 2.0 && p < two_star) {
            return Err(EnergyError::Inadmissible(format!(
                "subcritical exponent p={p} outside (2, {two_star})"
            )));
        }
        let nl = Nonlinearity {
            dim,
            lambda,
            kappa,
            two_star,
            growth_c: lambda.abs() + kappa.abs() + 1.0,
            kind: Kind::Subcritical { p },
        };
        nl.validate()?;
        Ok(nl)
    }

    pub fn custom(
        dim: usize,
        f: ScalarFn,
        big_f: ScalarFn,
        f_prime: Option<ScalarFn>,
        growth_c: f64,
    ) -> Result<Nonlinearity, EnergyError> {
        let nl = Nonlinearity {
            dim,
            lambda: 0.0,
            kappa: 0.0,
            two_star: critical_exponent(dim),
            growth_c,
            kind: Kind::Custom { f, big_f, f_prime },
        };
        nl.validate()?;
        Ok(nl)
    }

    /// Sampled admissibility check on the raw evaluator: f vanishes on
    /// t <= 0 and |f(t)| <= C (t^(2*-1) + 1) on (0, 1e3].
    fn validate(&self) -> Result<(), EnergyError> {
        let raw = |t: f64| -> f64 {
            match &self.kind {
                Kind::Custom { f, .. } => f(t),
                _ => self.f(t),
            }
        };
        for k in 0..=200 {
            let t = -10.0 + 10.0 * k as f64 / 200.0;
            if raw(t) != 0.0 {
                return Err(EnergyError::Inadmissible(format!(
                    "f({t}) = {} nonzero for t <= 0",
                    raw(t)
                )));
            }
        }
        for k in 0..=400 {
            // log-spaced samples on (1e-3, 1e3]
            let t = 1e-3 * 1e6_f64.powf(k as f64 / 400.0);
            let bound = self.growth_c * (t.powf(self.two_star - 1.0) + 1.0);
            let v = raw(t).abs();
            if v > bound * (1.0 + 1e-12) {
                return Err(EnergyError::Inadmissible(format!(
                    "|f({t})| = {v} exceeds C (t^(2*-1)+1) = {bound}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn two_star(&self) -> f64 {
        self.two_star
    }

    pub fn growth_constant(&self) -> f64 {
        self.growth_c
    }

    pub fn is_critical(&self) -> bool {
        matches!(self.kind, Kind::Critical)
    }

    pub fn f(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match &self.kind {
            Kind::Critical => self.lambda * t + self.kappa * t.powf(self.two_star - 1.0),
            Kind::Subcritical { p } => self.lambda * t + self.kappa * t.powf(p - 1.0),
            Kind::Custom { f, .. } => f(t),
        }
    }

    /// Primitive F(t) = integral of f from 0 to t; zero for t <= 0.
    pub fn big_f(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match &self.kind {
            Kind::Critical => {
                0.5 * self.lambda * t * t + self.kappa / self.two_star * t.powf(self.two_star)
            }
            Kind::Subcritical { p } => 0.5 * self.lambda * t * t + self.kappa / p * t.powf(*p),
            Kind::Custom { big_f, .. } => big_f(t),
        }
    }

    /// One-sided derivative, f'(0) taken from below (= 0).
    pub fn f_prime(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match &self.kind {
            Kind::Critical => {
                self.lambda + self.kappa * (self.two_star - 1.0) * t.powf(self.two_star - 2.0)
            }
            Kind::Subcritical { p } => self.lambda + self.kappa * (p - 1.0) * t.powf(p - 2.0),
            Kind::Custom { f, f_prime, .. } => match f_prime {
                Some(fp) => fp(t),
                None => {
                    let d = 1e-6 * t.abs().max(1.0);
                    (f(t + d) - f((t - d).max(0.0))) / (d + t.min(d))
                }
            },
        }
    }
}

/// Phase decomposition helpers: u+ = (u-1)_+ and u- = min(u, 1). Both have a
/// zero trace whenever u does.
pub fn plus_part(u: &Field) -> Field {
    u.map(|v| (v - 1.0).max(0.0))
}

pub fn minus_part(u: &Field) -> Field {
    u.map(|v| v.min(1.0))
}

/// Per-phase Dirichlet energies a(u-, u-) and a(u+, u+).
pub struct PhaseDirichlet {
    pub minus: f64,
    pub plus: f64,
}

pub fn phase_dirichlet(u: &Field) -> PhaseDirichlet {
    let up = plus_part(u);
    let um = minus_part(u);
    let grid = u.grid();
    PhaseDirichlet {
        minus: dirichlet_form_slices(grid, um.values(), um.values()),
        plus: dirichlet_form_slices(grid, up.values(), up.values()),
    }
}

/// Measure of the strict phase region {u > 1} (sharp-cut node predicate).
pub fn phase_volume(u: &Field) -> f64 {
    let grid = u.grid();
    let ones = vec![1.0; grid.len()];
    let vals = u.values();
    integrate(&ones, grid, Some(&|i: usize| vals[i] > 1.0))
}

/// Measure of the level band {|u - 1| <= tol}.
pub fn level_band_volume(u: &Field, tol: f64) -> f64 {
    let grid = u.grid();
    let ones = vec![1.0; grid.len()];
    let vals = u.values();
    integrate(&ones, grid, Some(&|i: usize| (vals[i] - 1.0).abs() <= tol))
}

/// Term-by-term energy values; `total = dirichlet + phase - potential` by
/// construction.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EnergyReport {
    pub total: f64,
    pub dirichlet: f64,
    pub phase: f64,
    pub potential: f64,
}

impl EnergyReport {
    fn assemble(dirichlet: f64, phase: f64, potential: f64) -> EnergyReport {
        EnergyReport {
            total: dirichlet + phase - potential,
            dirichlet,
            phase,
            potential,
        }
    }
}

fn potential_integral(u: &Field, nl: &Nonlinearity) -> f64 {
    let grid = u.grid();
    let samples: Vec<f64> = u.values().iter().map(|&v| nl.big_f(v - 1.0)).collect();
    integrate(&samples, grid, None)
}

/// The nonsmooth phase energy
/// `J(u) = dirichlet + |{u > 1}| - integral F(u - 1)`.
pub fn energy_j(u: &Field, nl: &Nonlinearity) -> EnergyReport {
    let pd = phase_dirichlet(u);
    EnergyReport::assemble(
        0.5 * (pd.minus + pd.plus),
        phase_volume(u),
        potential_integral(u, nl),
    )
}

/// The C^1 regularization: the phase indicator is replaced by
/// `B((u-1)/eps)`, which never exceeds it, so `J_eps(u) <= J(u)` holds
/// node by node.
pub fn energy_jeps(u: &Field, eps: f64, nl: &Nonlinearity) -> Result<EnergyReport, EnergyError> {
    if !(eps > 0.0) {
        return Err(EnergyError::NonpositiveEpsilon(eps));
    }
    let grid = u.grid();
    let pd = phase_dirichlet(u);
    let smooth: Vec<f64> = u
        .values()
        .iter()
        .map(|&v| kernel::big_b((v - 1.0) / eps))
        .collect();
    Ok(EnergyReport::assemble(
        0.5 * (pd.minus + pd.plus),
        integrate(&smooth, grid, None),
        potential_integral(u, nl),
    ))
}

/// Exact gradient of the discrete regularized energy: on interior nodes
///
/// `g = -lap(u+) on {u > 1}, -lap(u-) on {u <= 1}, + beta((u-1)/eps)/eps - f(u-1)`,
///
/// zero on the boundary. Away from the interface both stencil branches reduce
/// to `-lap(u)`, so g is a consistent residual of the regularized
/// Euler-Lagrange equation, and the trapezoid pairing `<g, v>` equals the
/// directional derivative of `energy_jeps` for every zero-trace direction v.
pub fn grad_jeps(u: &Field, eps: f64, nl: &Nonlinearity) -> Result<Field, EnergyError> {
    if !(eps > 0.0) {
        return Err(EnergyError::NonpositiveEpsilon(eps));
    }
    let grid = u.grid().clone();
    let up = plus_part(u);
    let um = minus_part(u);
    let mut lap_p = vec![0.0; grid.len()];
    let mut lap_m = vec![0.0; grid.len()];
    laplacian_into(&grid, up.values(), &mut lap_p);
    laplacian_into(&grid, um.values(), &mut lap_m);
    let mut g = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        if grid.is_interior(i) {
            let v = u.values()[i];
            let principal = if v > 1.0 { -lap_p[i] } else { -lap_m[i] };
            g[i] = principal + kernel::beta((v - 1.0) / eps) / eps - nl.f(v - 1.0);
        }
    }
    Ok(Field::from_values_unchecked(&grid, g))
}

/// Slack in the critical-mass bound
/// `(kappa/N) * integral (u+)^(2*) <= J_eps(u) - <g, u+>/2 + |box|`.
/// Nonnegative for every field up to rounding; critical kind only.
pub fn critical_mass_gap(u: &Field, eps: f64, nl: &Nonlinearity) -> Result<f64, EnergyError> {
    if !nl.is_critical() {
        return Err(EnergyError::NotCritical);
    }
    let grid = u.grid();
    let jeps = energy_jeps(u, eps, nl)?.total;
    let g = grad_jeps(u, eps, nl)?;
    let up = plus_part(u);
    let pairing = l2_inner(grid, g.values(), up.values());
    let mass: Vec<f64> = up.values().iter().map(|&v| v.powf(nl.two_star())).collect();
    let mass_int = integrate(&mass, grid, None);
    let lhs = nl.kappa() / nl.dim() as f64 * mass_int;
    let rhs = jeps - 0.5 * pairing + grid.volume();
    Ok(rhs - lhs)
}

/// Computes integral (u+)^(2*).
pub fn plus_mass(u: &Field, nl: &Nonlinearity) -> f64 {
    let grid = u.grid();
    let up = plus_part(u);
    let mass: Vec<f64> = up.values().iter().map(|&v| v.powf(nl.two_star())).collect();
    integrate(&mass, grid, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_norm, Grid};
    use crate::synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cube(n: usize) -> Arc<Grid> {
        Grid::new(3, &[1.0, 1.0, 1.0], &[n, n, n]).unwrap()
    }

    fn crit(dim: usize) -> Nonlinearity {
        Nonlinearity::critical(dim, 2.0, 1.5).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel::beta(-1.0), 0.0);
        assert_eq!(kernel::big_b(-1.0), 0.0);
        assert_eq!(kernel::big_b(2.0), 1.0);
        assert!((kernel::big_b(0.5) - 0.5).abs() < 1e-15);
        // range bound and unit integral
        let mut max = 0.0f64;
        let mut int = 0.0;
        let n = 20_000;
        for k in 0..n {
            let t = (k as f64 + 0.5) / n as f64;
            max = max.max(kernel::beta(t));
            int += kernel::beta(t) / n as f64;
        }
        assert!(max <= 2.0 && max > 0.0);
        assert!((int - 1.0).abs() < 1e-6, "integral {int}");
        // B nondecreasing
        let mut prev = -1.0;
        for k in 0..=100 {
            let b = kernel::big_b(-0.5 + 2.0 * k as f64 / 100.0);
            assert!(b >= prev - 1e-15 && (0.0..=1.0).contains(&b));
            prev = b;
        }
    }

    #[test]
    fn admissibility_checks() {
        assert!(Nonlinearity::critical(3, 0.0, 1.0).is_err());
        assert!(Nonlinearity::subcritical(3, 1.0, 1.0, 6.5).is_err());
        assert!(Nonlinearity::subcritical(3, 1.0, 1.0, 4.0).is_ok());
        // custom violating the sign condition is rejected
        let bad = Nonlinearity::custom(
            3,
            Arc::new(|t: f64| t),
            Arc::new(|t: f64| 0.5 * t * t),
            None,
            10.0,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn energy_of_zero_and_subunit_fields() {
        let g = cube(9);
        let nl = crit(3);
        let zero = Field::zeros(&g);
        let r = energy_j(&zero, &nl);
        assert_eq!(r.total, 0.0);
        assert_eq!((r.dirichlet, r.phase, r.potential), (0.0, 0.0, 0.0));

        // u <= 1 everywhere: phase and potential vanish
        let u = Field::from_fn(&g, |x| {
            0.9 * (std::f64::consts::PI * x[0]).sin()
                * (std::f64::consts::PI * x[1]).sin()
                * (std::f64::consts::PI * x[2]).sin()
        });
        let r = energy_j(&u, &nl);
        assert_eq!(r.phase, 0.0);
        assert_eq!(r.potential, 0.0);
        assert!((r.total - r.dirichlet).abs() < 1e-15);
    }

    #[test]
    fn energy_matches_independent_node_loop() {
        // direct re-summation with explicit trapezoid weights and split
        // forward differences
        let g = cube(9);
        let nl = crit(3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = synthetic::random_rough(&g, &mut rng, -0.5, 2.0);

        let r = energy_j(&u, &nl);

        let n = g.nodes()[0];
        let h = g.spacing()[0];
        let vals = u.values();
        let at = |i: usize, j: usize, k: usize| vals[g.flatten(&[i, j, k])];
        let plus = |v: f64| (v - 1.0).max(0.0);
        let minus = |v: f64| v.min(1.0);
        let mut dirichlet = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = at(i, j, k);
                    for (di, dj, dk) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                        if i + di < n && j + dj < n && k + dk < n {
                            let w = at(i + di, j + dj, k + dk);
                            let dp = (plus(w) - plus(v)) / h;
                            let dm = (minus(w) - minus(v)) / h;
                            dirichlet += 0.5 * (dp * dp + dm * dm) * h * h * h;
                        }
                    }
                }
            }
        }
        let mut phase = 0.0;
        let mut potential = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut w = h * h * h;
                    for &c in &[i, j, k] {
                        if c == 0 || c + 1 == n {
                            w *= 0.5;
                        }
                    }
                    let v = at(i, j, k);
                    if v > 1.0 {
                        phase += w;
                    }
                    potential += w * nl.big_f(v - 1.0);
                }
            }
        }
        let total = dirichlet + phase - potential;
        assert!(
            (r.total - total).abs() <= 1e-12 * total.abs().max(1.0),
            "{} vs {}",
            r.total,
            total
        );
        assert!((r.dirichlet - dirichlet).abs() <= 1e-12 * dirichlet.max(1.0));
        assert!((r.phase - phase).abs() <= 1e-14);
        assert!((r.potential - potential).abs() <= 1e-12 * potential.abs().max(1.0));
    }

    #[test]
    fn regularized_energy_below_and_converging() {
        let g = cube(9);
        let nl = crit(3);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let u = synthetic::random_smooth(&g, &mut rng, 2.2);
            let j = energy_j(&u, &nl).total;
            for eps in [1.0, 0.1, 1e-2, 1e-4] {
                let je = energy_jeps(&u, eps, &nl).unwrap().total;
                assert!(je <= j + 1e-12 * j.abs().max(1.0), "eps {eps}: {je} > {j}");
            }
            // with no node exactly at the level, J_eps -> J as eps -> 0
            if level_band_volume(&u, 1e-12) == 0.0 {
                let je = energy_jeps(&u, 1e-4, &nl).unwrap().total;
                let gap_small = (j - je).abs();
                let je_big = energy_jeps(&u, 0.5, &nl).unwrap().total;
                assert!(gap_small <= (j - je_big).abs() + 1e-12);
            }
        }
        assert!(energy_jeps(&Field::zeros(&g), 0.0, &nl).is_err());
    }

    #[test]
    fn regularized_phase_counts_saturated_region() {
        // u >= 1 + eps on a block: B contributes the full weight there
        let g = cube(17);
        let eps = 0.25;
        let u = Field::from_fn(&g, |x| {
            let b = x.iter().map(|&t| (std::f64::consts::PI * t).sin()).product::<f64>();
            2.0 * b
        });
        let r = energy_jeps(&u, eps, &crit(3)).unwrap();
        let vals = u.values();
        let ones = vec![1.0; g.len()];
        let saturated = integrate(&ones, &g, Some(&|i: usize| vals[i] >= 1.0 + eps));
        assert!(r.phase >= saturated - 1e-12);
        assert!(r.phase <= phase_volume(&u) + 1e-12);
    }

    #[test]
    fn gradient_vanishes_cases() {
        let g = cube(9);
        let nl = crit(3);
        let zero = Field::zeros(&g);
        let gz = grad_jeps(&zero, 0.3, &nl).unwrap();
        assert!(gz.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_directional_differences() {
        let g = cube(9);
        let nl = crit(3);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tau = 1e-5;
        for eps in [1.0, 0.1, 0.01] {
            for _ in 0..5 {
                let u = synthetic::random_smooth(&g, &mut rng, 2.0);
                let v = synthetic::random_smooth(&g, &mut rng, 1.0);
                let gvec = grad_jeps(&u, eps, &nl).unwrap();
                let pairing = l2_inner(&g, gvec.values(), v.values());
                let jp = energy_jeps(&u.axpy(tau, &v), eps, &nl).unwrap().total;
                let jm = energy_jeps(&u.axpy(-tau, &v), eps, &nl).unwrap().total;
                let fd = (jp - jm) / (2.0 * tau);
                let rel = (fd - pairing).abs() / pairing.abs().max(1e-10);
                assert!(rel < 1e-5, "eps {eps}: fd {fd} pairing {pairing} rel {rel}");
            }
        }
    }

    #[test]
    fn mass_gap_examples() {
        let g = cube(9);
        let nl = crit(3);
        // zero field: gap equals the box volume exactly
        let gap = critical_mass_gap(&Field::zeros(&g), 0.5, &nl).unwrap();
        assert!((gap - g.volume()).abs() < 1e-14);

        // u <= 1 everywhere: plus part vanishes, gap = J_eps + volume >= 0
        let u = Field::from_fn(&g, |x| {
            0.8 * x.iter().map(|&t| (std::f64::consts::PI * t).sin()).product::<f64>()
        });
        let gap = critical_mass_gap(&u, 0.5, &nl).unwrap();
        let je = energy_jeps(&u, 0.5, &nl).unwrap().total;
        assert!((gap - (je + g.volume())).abs() < 1e-12);
        assert!(gap >= 0.0);

        let sub = Nonlinearity::subcritical(3, 1.0, 1.0, 4.0).unwrap();
        assert!(critical_mass_gap(&u, 0.5, &sub).is_err());
    }

    #[test]
    fn mass_gap_nonnegative_on_random_fields() {
        let g = cube(9);
        let nl = crit(3);
        let mut rng = ChaCha8Rng::seed_from_u64(avalanche(99));
        let mut min_gap = f64::INFINITY;
        for k in 0..300 {
            let u = if k % 3 == 0 {
                synthetic::random_rough(&g, &mut rng, -1.0, 3.0)
            } else {
                synthetic::random_smooth(&g, &mut rng, 2.5)
            };
            for eps in [1.0, 0.1, 0.01] {
                let gap = critical_mass_gap(&u, eps, &nl).unwrap();
                min_gap = min_gap.min(gap);
            }
        }
        assert!(min_gap >= -1e-8, "min gap {min_gap}");
    }

    fn avalanche(x: u64) -> u64 {
        x.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }

    #[test]
    fn gradient_of_subunit_linear_problem_is_laplacian_residual() {
        // harmonic-type field staying below 1: kernel and nonlinearity are
        // inactive, so the residual is exactly -lap(u)
        let g = cube(9);
        let nl = crit(3);
        let u = Field::from_fn(&g, |x| 0.3 * x[0] * (1.0 - x[0]) * x[1] * x[2]);
        let r = grad_jeps(&u, 0.2, &nl).unwrap();
        let lap = crate::grid::laplacian(&u);
        for i in 0..g.len() {
            assert!((r.values()[i] + lap.values()[i]).abs() < 1e-12);
        }
        let _ = l2_norm(&g, r.values());
    }
}
