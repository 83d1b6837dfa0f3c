//! Phase splitting, the fiber curve through a field, the explicit fiber
//! scale for the critical nonlinearity, the projection onto the Nehari-type
//! manifold, membership residuals, and mountain-pass paths.
//!
//! The manifold is the set of fields whose phase part balances the critical
//! term:
//!
//! `integral_{u>1} [|grad u|^2 - lambda (u-1)^2] = kappa integral_{u>1} (u-1)^(2*) > 0`.
//!
//! All phase-restricted integrals are evaluated through the split fields
//! (`u+`, `u-`), matching the discrete energy; this keeps every identity in
//! this module exact in floating point rather than up to an O(h) interface
//! defect.

use thiserror::Error;

use crate::energy::{self, EnergyReport, Nonlinearity};
use crate::grid::{dirichlet_form_slices, integrate, Field};
use crate::util::golden_max;

#[derive(Debug, Error)]
pub enum NehariError {
    #[error("operation requires the critical nonlinearity")]
    NotCritical,
    #[error("fiber parameter {0} below -1")]
    ScaleBelowMinusOne(f64),
    #[error("plus part vanishes: the fiber scale is undefined")]
    VanishingPlusPart,
    #[error("fiber has no interior maximum (nonpositive fiber numerator {0})")]
    NonpositiveFiberNumerator(f64),
    #[error("field is not on the manifold (residual {0:.3e})")]
    NotOnManifold(f64),
    #[error("fiber endpoint search failed to reach a negative level within {0} doublings")]
    DegenerateFiber(usize),
}

/// The decomposition u = u+ + u- with u+ = (u-1)_+ and u- = min(u, 1).
#[derive(Debug, Clone)]
pub struct SplitField {
    pub plus: Field,
    pub minus: Field,
}

/// Nodewise split; plus + minus reconstructs u exactly.
pub fn split(u: &Field) -> SplitField {
    SplitField {
        plus: energy::plus_part(u),
        minus: energy::minus_part(u),
    }
}

/// A field with its manifold membership defect and energy level.
#[derive(Debug, Clone)]
pub struct NehariPoint {
    pub field: Field,
    pub residual: f64,
    pub energy: f64,
}

/// A sampled path with its levels; starts at zero, ends below level zero.
#[derive(Debug, Clone)]
pub struct Path {
    pub fields: Vec<Field>,
    pub levels: Vec<f64>,
}

impl Path {
    pub fn max_level(&self) -> f64 {
        self.levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.levels.iter().enumerate() {
            if l > self.levels[best] {
                best = i;
            }
        }
        best
    }
}

/// Split integrals driving the fiber algebra for the critical kind.
#[derive(Debug, Clone, Copy)]
pub struct FiberData {
    /// a(u-, u-): Dirichlet energy of the minus part.
    pub minus_dirichlet: f64,
    /// a(u+, u+): Dirichlet energy of the plus part.
    pub plus_dirichlet: f64,
    /// integral (u+)^2.
    pub plus_l2sq: f64,
    /// integral (u+)^(2*).
    pub plus_mass: f64,
    /// |{u > 1}| (sharp-cut measure).
    pub plus_volume: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub two_star: f64,
    pub dim: usize,
}

impl FiberData {
    pub fn of(u: &Field, nl: &Nonlinearity) -> Result<FiberData, NehariError> {
        if !nl.is_critical() {
            return Err(NehariError::NotCritical);
        }
        let grid = u.grid();
        let sp = split(u);
        let sq: Vec<f64> = sp.plus.values().iter().map(|&v| v * v).collect();
        let mass: Vec<f64> = sp
            .plus
            .values()
            .iter()
            .map(|&v| v.powf(nl.two_star()))
            .collect();
        Ok(FiberData {
            minus_dirichlet: dirichlet_form_slices(grid, sp.minus.values(), sp.minus.values()),
            plus_dirichlet: dirichlet_form_slices(grid, sp.plus.values(), sp.plus.values()),
            plus_l2sq: integrate(&sq, grid, None),
            plus_mass: integrate(&mass, grid, None),
            plus_volume: energy::phase_volume(u),
            lambda: nl.lambda(),
            kappa: nl.kappa(),
            two_star: nl.two_star(),
            dim: nl.dim(),
        })
    }

    /// Fiber numerator: integral over the phase of |grad u|^2 - lambda (u-1)^2.
    pub fn numerator(&self) -> f64 {
        self.plus_dirichlet - self.lambda * self.plus_l2sq
    }

    /// Fiber denominator: kappa * integral (u+)^(2*).
    pub fn denominator(&self) -> f64 {
        self.kappa * self.plus_mass
    }

    /// Closed-form level along the fiber curve.
    pub fn level(&self, s: f64) -> f64 {
        if s <= 0.0 {
            let t = 1.0 + s;
            0.5 * t * t * self.minus_dirichlet
        } else {
            0.5 * self.minus_dirichlet + 0.5 * s * s * self.numerator()
                - self.kappa * s.powf(self.two_star) / self.two_star * self.plus_mass
                + self.plus_volume
        }
    }
}

/// The curve through u: `(1+s) u-` for s in [-1, 0], `u- + s u+` for s > 0.
/// Passes through u at s = 1.
pub fn fiber_curve(u: &Field, s: f64) -> Result<Field, NehariError> {
    if s < -1.0 {
        return Err(NehariError::ScaleBelowMinusOne(s));
    }
    let sp = split(u);
    Ok(if s <= 0.0 {
        sp.minus.scale(1.0 + s)
    } else {
        sp.minus.axpy(s, &sp.plus)
    })
}

/// Scale at which the fiber level is maximal:
/// `s = (numerator / denominator)^((N-2)/4)`; equals 1 on the manifold.
pub fn fiber_scale(u: &Field, nl: &Nonlinearity) -> Result<f64, NehariError> {
    let fd = FiberData::of(u, nl)?;
    fiber_scale_from(&fd)
}

pub fn fiber_scale_from(fd: &FiberData) -> Result<f64, NehariError> {
    if fd.denominator() <= 0.0 {
        return Err(NehariError::VanishingPlusPart);
    }
    let num = fd.numerator();
    if num <= 0.0 {
        return Err(NehariError::NonpositiveFiberNumerator(num));
    }
    let expo = (fd.dim as f64 - 2.0) / 4.0;
    Ok((num / fd.denominator()).powf(expo))
}

/// Normalized manifold membership defect; +infinity when the denominator
/// vanishes (the field is not in the admissible set).
pub fn nehari_residual(u: &Field, nl: &Nonlinearity) -> f64 {
    match FiberData::of(u, nl) {
        Ok(fd) => {
            let den = fd.denominator();
            if den <= 0.0 {
                f64::INFINITY
            } else {
                (fd.numerator() - den).abs() / den.max(1.0)
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Projection onto the manifold: `pi(u) = u- + s_u u+`. Idempotent on
/// admissible fields.
pub fn project(u: &Field, nl: &Nonlinearity) -> Result<NehariPoint, NehariError> {
    let s = fiber_scale(u, nl)?;
    let w = fiber_curve(u, s)?;
    let residual = nehari_residual(&w, nl);
    let energy = energy::energy_j(&w, nl).total;
    Ok(NehariPoint {
        field: w,
        residual,
        energy,
    })
}

/// Samples the fiber level along a scale grid; the profile is unimodal on
/// (0, inf) with its maximum at the fiber scale whenever the numerator is
/// positive, and tends to -infinity as s grows.
pub fn fiber_profile(
    u: &Field,
    nl: &Nonlinearity,
    s_grid: &[f64],
) -> Result<Vec<(f64, f64)>, NehariError> {
    let fd = FiberData::of(u, nl)?;
    s_grid
        .iter()
        .map(|&s| {
            if s < -1.0 {
                Err(NehariError::ScaleBelowMinusOne(s))
            } else {
                Ok((s, fd.level(s)))
            }
        })
        .collect()
}

/// Locates the fiber maximum by golden-section over (0, s_hi] where s_hi is
/// found by doubling until the level turns negative. Oracle companion of
/// `fiber_scale`.
pub fn fiber_argmax_search(u: &Field, nl: &Nonlinearity, tol: f64) -> Result<f64, NehariError> {
    let fd = FiberData::of(u, nl)?;
    if fd.denominator() <= 0.0 {
        return Err(NehariError::VanishingPlusPart);
    }
    let mut s_hi = 2.0;
    let mut doublings = 0;
    while fd.level(s_hi) >= 0.0 {
        s_hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(NehariError::DegenerateFiber(60));
        }
    }
    let (arg, _) = golden_max(|s| fd.level(s), 0.0, s_hi, tol);
    Ok(arg)
}

const MANIFOLD_TOL: f64 = 1e-6;

/// Builds the path `t -> fiber_curve(u, (s0 + 1) t - 1)` from the zero field
/// through u down to a negative level; `s0` is found by doubling from 2.
/// The sample set contains the scale s = 1 exactly, so the max level along
/// the path equals the level of u.
pub fn mountain_path(
    point: &NehariPoint,
    nl: &Nonlinearity,
    samples: usize,
) -> Result<Path, NehariError> {
    if point.residual > MANIFOLD_TOL {
        return Err(NehariError::NotOnManifold(point.residual));
    }
    let u = &point.field;
    let fd = FiberData::of(u, nl)?;
    let mut s0 = 2.0;
    let mut doublings = 0;
    while fd.level(s0) >= 0.0 {
        s0 *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(NehariError::DegenerateFiber(60));
        }
    }
    let k = samples.max(3);
    let t_through = 2.0 / (s0 + 1.0);
    let mut ts: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
    if !ts.iter().any(|&t| (t - t_through).abs() < 1e-15) {
        ts.push(t_through);
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    let mut fields = Vec::with_capacity(ts.len());
    let mut levels = Vec::with_capacity(ts.len());
    for &t in &ts {
        let s = (s0 + 1.0) * t - 1.0;
        let f = fiber_curve(u, s.max(-1.0))?;
        let level = energy::energy_j(&f, nl).total;
        fields.push(f);
        levels.push(level);
    }
    Ok(Path { fields, levels })
}

/// Relative defect of the manifold energy identity
/// `J(u) = 1/2 integral_{u<1} |grad u|^2 + (1/N) integral_{u>1} [|grad u|^2 -
/// lambda (u-1)^2] + |{u>1}|`, valid on the manifold.
pub fn manifold_identity_residual(u: &Field, nl: &Nonlinearity) -> Result<f64, NehariError> {
    let fd = FiberData::of(u, nl)?;
    let j = energy::energy_j(u, nl).total;
    let rhs = 0.5 * fd.minus_dirichlet + fd.numerator() / fd.dim as f64 + fd.plus_volume;
    Ok((j - rhs).abs() / j.abs().max(1.0))
}

/// Energy of the projected field via the projected-level identity
/// `J(pi(u)) = 1/2 integral_{u<1}|grad u|^2 + (s_u^2/N) * numerator + |{u>1}|`.
pub fn projected_level(u: &Field, nl: &Nonlinearity) -> Result<f64, NehariError> {
    let fd = FiberData::of(u, nl)?;
    let s = fiber_scale_from(&fd)?;
    Ok(0.5 * fd.minus_dirichlet + s * s * fd.numerator() / fd.dim as f64 + fd.plus_volume)
}

pub fn energy_j(u: &Field, nl: &Nonlinearity) -> EnergyReport {
    energy::energy_j(u, nl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::synthetic;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cube(n: usize) -> Arc<Grid> {
        Grid::new(3, &[1.0, 1.0, 1.0], &[n, n, n]).unwrap()
    }

    fn nl() -> Nonlinearity {
        Nonlinearity::critical(3, 1.0, 1.0).unwrap()
    }

    /// Admissible bump: plus and minus parts both nonzero, positive fiber
    /// numerator for moderate lambda.
    fn bump(n: usize) -> Field {
        synthetic::sine_bump(&cube(n), 2.5)
    }

    #[test]
    fn split_examples_and_reconstruction() {
        let g = cube(9);
        let zero = Field::zeros(&g);
        let sp = split(&zero);
        assert!(sp.plus.values().iter().all(|&v| v == 0.0));
        assert!(sp.minus.values().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = synthetic::random_rough(&g, &mut rng, -0.5, 2.5);
        let sp = split(&u);
        for i in 0..g.len() {
            let v = u.values()[i];
            let (p, m) = (sp.plus.values()[i], sp.minus.values()[i]);
            assert!(p >= 0.0 && m <= 1.0);
            assert!(p * (m - 1.0) == 0.0 || v <= 1.0);
            assert_eq!(p + m, v, "reconstruction must be bit-exact");
        }
        // spot values
        let g1 = cube(5);
        let mid = |val: f64| {
            let mut vals = vec![0.0; g1.len()];
            vals[g1.flatten(&[2, 2, 2])] = val;
            Field::from_values(&g1, vals).unwrap()
        };
        let sp = split(&mid(1.7));
        let i = g1.flatten(&[2, 2, 2]);
        assert!((sp.plus.values()[i] - 0.7).abs() < 1e-15);
        assert_eq!(sp.minus.values()[i], 1.0);
        let sp = split(&mid(0.3));
        assert_eq!(sp.plus.values()[i], 0.0);
        assert!((sp.minus.values()[i] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fiber_curve_endpoints() {
        let u = bump(9);
        let at1 = fiber_curve(&u, 1.0).unwrap();
        for i in 0..u.values().len() {
            assert!((at1.values()[i] - u.values()[i]).abs() < 1e-15);
        }
        let atm1 = fiber_curve(&u, -1.0).unwrap();
        assert!(atm1.values().iter().all(|&v| v == 0.0));
        assert!(fiber_curve(&u, -1.5).is_err());
    }

    #[test]
    fn fiber_level_jump_at_zero() {
        // approaching from the right adds exactly the phase volume
        let u = bump(17);
        let n = nl();
        let fd = FiberData::of(&u, &n).unwrap();
        let j_left = fd.level(0.0);
        let j_right = fd.level(1e-300);
        assert!((j_right - j_left - fd.plus_volume).abs() < 1e-12);
        // direct evaluation agrees
        let f_left = fiber_curve(&u, 0.0).unwrap();
        assert!((energy::energy_j(&f_left, &n).total - j_left).abs() < 1e-12);
    }

    #[test]
    fn fiber_energy_matches_direct_evaluation() {
        let g = cube(9);
        let n = nl();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for _ in 0..50 {
            let u = synthetic::random_smooth(&g, &mut rng, 2.4);
            let fd = match FiberData::of(&u, &n) {
                Ok(fd) => fd,
                Err(_) => continue,
            };
            let s = rng.gen_range(-1.0..4.0);
            let direct = energy::energy_j(&fiber_curve(&u, s).unwrap(), &n).total;
            let formula = fd.level(s);
            let scale = direct.abs().max(1.0);
            assert!(
                (direct - formula).abs() / scale < 1e-10,
                "s={s}: direct {direct} formula {formula}"
            );
            checked += 1;
        }
        assert!(checked >= 40);
    }

    #[test]
    fn fiber_scale_homogeneity() {
        let u = bump(9);
        let n = nl();
        let s_ref = fiber_scale(&u, &n).unwrap();
        let sp = split(&u);
        for t in [0.5, 2.0, 10.0] {
            let scaled = sp.minus.axpy(t, &sp.plus);
            let s_t = fiber_scale(&scaled, &n).unwrap();
            let rel = (s_t * t - s_ref).abs() / s_ref;
            assert!(rel < 1e-10, "t={t}: {s_t} * {t} vs {s_ref} (rel {rel})");
        }
    }

    #[test]
    fn fiber_scale_is_one_on_manifold_and_matches_search() {
        let u = bump(17);
        let n = nl();
        let p = project(&u, &n).unwrap();
        assert!(p.residual <= 1e-10, "residual {}", p.residual);
        let s_on = fiber_scale(&p.field, &n).unwrap();
        assert!((s_on - 1.0).abs() < 1e-8, "s = {s_on}");

        // golden-section argmax of the true fiber level agrees
        let s_u = fiber_scale(&u, &n).unwrap();
        let arg = fiber_argmax_search(&u, &n, 1e-9).unwrap();
        assert!((arg - s_u).abs() < 1e-6, "search {arg} formula {s_u}");
    }

    #[test]
    fn fiber_scale_error_paths() {
        let g = cube(9);
        let n = nl();
        // no plus part
        let low = Field::from_fn(&g, |x| {
            0.5 * x.iter().map(|&t| (std::f64::consts::PI * t).sin()).product::<f64>()
        });
        assert!(matches!(
            fiber_scale(&low, &n),
            Err(NehariError::VanishingPlusPart)
        ));
        // large lambda drives the numerator negative for a wide bump
        let wide = synthetic::sine_bump(&g, 1.05);
        let strong = Nonlinearity::critical(3, 500.0, 1.0).unwrap();
        assert!(matches!(
            fiber_scale(&wide, &strong),
            Err(NehariError::NonpositiveFiberNumerator(_))
        ));
        let sub = Nonlinearity::subcritical(3, 1.0, 1.0, 3.0).unwrap();
        assert!(matches!(
            fiber_scale(&bump(9), &sub),
            Err(NehariError::NotCritical)
        ));
    }

    #[test]
    fn projection_idempotent_and_identity() {
        let g = cube(9);
        let n = nl();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        for _ in 0..20 {
            let u = synthetic::random_smooth(&g, &mut rng, 2.6);
            let p = match project(&u, &n) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let pp = project(&p.field, &n).unwrap();
            assert!(
                p.field.linf_distance(&pp.field) < 1e-10,
                "projection not idempotent"
            );
            // projected level identity vs direct evaluation
            let formula = projected_level(&u, &n).unwrap();
            assert!(
                (p.energy - formula).abs() < 1e-10 * p.energy.abs().max(1.0),
                "{} vs {}",
                p.energy,
                formula
            );
            // manifold identity on the projected field
            let defect = manifold_identity_residual(&p.field, &n).unwrap();
            assert!(defect < 1e-10, "identity defect {defect}");
            checked += 1;
        }
        assert!(checked >= 10);
    }

    #[test]
    fn residual_cases() {
        let g = cube(9);
        let n = nl();
        let low = Field::from_fn(&g, |x| 0.4 * x.iter().product::<f64>());
        assert!(nehari_residual(&low, &n).is_infinite());
        let p = project(&bump(9), &n).unwrap();
        assert!(nehari_residual(&p.field, &n) <= 1e-8);
    }

    #[test]
    fn fiber_profile_shape() {
        let u = bump(17);
        let n = nl();
        let fd = FiberData::of(&u, &n).unwrap();
        // rising on [-1, 0]
        let grid: Vec<f64> = (0..=10).map(|k| -1.0 + k as f64 * 0.1).collect();
        let prof = fiber_profile(&u, &n, &grid).unwrap();
        for w in prof.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-14);
        }
        // unimodal on (0, inf): rises to the scale, falls beyond, crosses zero
        let s_u = fiber_scale(&u, &n).unwrap();
        let sgrid: Vec<f64> = (1..=400).map(|k| k as f64 * s_u / 100.0).collect();
        let prof = fiber_profile(&u, &n, &sgrid).unwrap();
        let argmax = prof
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
            .unwrap()
            .0;
        let s_grid_max = prof[argmax].0;
        assert!((s_grid_max - s_u).abs() <= s_u / 100.0 + 1e-12);
        let mut rising = true;
        let mut sign_changes = 0;
        for w in prof.windows(2) {
            let up = w[1].1 > w[0].1;
            if rising && !up {
                rising = false;
                sign_changes += 1;
            } else if !rising && up {
                sign_changes += 10; // not unimodal
            }
        }
        assert_eq!(sign_changes, 1, "profile not unimodal");
        assert!(prof.last().unwrap().1 < 0.0, "tail must go negative");
        assert!(fd.level(1e9) < 0.0);
    }

    #[test]
    fn mountain_path_invariants() {
        let n = nl();
        let p = project(&bump(17), &n).unwrap();
        let path = mountain_path(&p, &n, 16).unwrap();
        assert!(path.fields[0].values().iter().all(|&v| v == 0.0));
        assert!(*path.levels.last().unwrap() < 0.0);
        let max = path.max_level();
        assert!(
            (max - p.energy).abs() < 1e-8 * p.energy.abs().max(1.0),
            "max {max} vs energy {}",
            p.energy
        );
        // not on the manifold: rejected
        let off = NehariPoint {
            field: bump(17),
            residual: 1.0,
            energy: 0.0,
        };
        assert!(matches!(
            mountain_path(&off, &n, 16),
            Err(NehariError::NotOnManifold(_))
        ));
    }
}
