//! The vanishing-epsilon loop with warm starts, plus every limit diagnostic:
//! uniform and H1 convergence metrics, the level sandwich, interior Lipschitz
//! and sup-norm bounds, and the barrier comparison.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::energy::{self, Nonlinearity};
use crate::grid::{dirichlet_form_slices, gradient, Field, Grid};
use crate::nehari::Path;
use crate::poisson::PoissonSolver;
use crate::solver::{CriticalPoint, SolveConfig, Solver, SolverError};

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error("empty schedule")]
    EmptySchedule,
    #[error("schedule must be strictly decreasing and positive at entry {0}")]
    NotDecreasing(usize),
    #[error("step {step} (eps = {eps}): level {level:.6e} fell below the floor {floor:.6e}; the seed lost nontriviality")]
    NontrivialityLost {
        step: usize,
        eps: f64,
        level: f64,
        floor: f64,
    },
    #[error("step {step} (eps = {eps}): {source}")]
    Step {
        step: usize,
        eps: f64,
        source: SolverError,
    },
    #[error("{0}")]
    Energy(#[from] energy::EnergyError),
    #[error("trace too short: need at least {0} points")]
    TraceTooShort(usize),
}

/// The sequence of critical points along a decreasing epsilon schedule,
/// with per-step distances between consecutive iterates.
#[derive(Debug, Clone)]
pub struct ContinuationTrace {
    /// Requested schedule, before the resolvability cap.
    pub requested: Vec<f64>,
    /// Effective schedule: each entry clamped to at least twice the mesh
    /// width, non-decreasing duplicates dropped.
    pub schedule: Vec<f64>,
    pub points: Vec<CriticalPoint>,
    /// Last iterate.
    pub limit: Field,
    pub uniform_dists: Vec<f64>,
    pub h1_dists: Vec<f64>,
    /// Newton histories (level, residual) per step.
    pub histories: Vec<Vec<(f64, f64)>>,
    /// Deformed path from the first step's minimax estimate.
    pub path: Option<Path>,
    /// Deformation sweeps spent by the first step.
    pub first_step_sweeps: usize,
    /// Max level over the deformed path (upper estimate of the first
    /// minimax level).
    pub path_level: f64,
    /// Path-max minus refined critical level at the first step: the gap
    /// indicator of the discrete path family.
    pub level_gap: f64,
    pub level_increases: usize,
}

/// Applies the resolvability cap: the kernel transition layer must span at
/// least two cells, so every epsilon is clamped to `2 * max spacing` and the
/// schedule stays strictly decreasing.
pub fn effective_schedule(grid: &Grid, requested: &[f64]) -> Result<Vec<f64>, ContinuationError> {
    if requested.is_empty() {
        return Err(ContinuationError::EmptySchedule);
    }
    for (i, w) in requested.windows(2).enumerate() {
        if !(w[0] > 0.0) || w[1] >= w[0] {
            return Err(ContinuationError::NotDecreasing(i + 1));
        }
    }
    if !(requested[requested.len() - 1] > 0.0) {
        return Err(ContinuationError::NotDecreasing(requested.len() - 1));
    }
    let cap = 2.0 * grid.max_spacing();
    let mut out: Vec<f64> = Vec::with_capacity(requested.len());
    for &e in requested {
        let eff = e.max(cap);
        match out.last() {
            Some(&prev) if eff >= prev => {} // saturated at the cap
            _ => out.push(eff),
        }
    }
    Ok(out)
}

/// Runs the continuation: the first step is seeded by the minimax path
/// estimate at the largest epsilon, later steps warm-start Newton from the
/// previous field. Every accepted level must stay above `level_floor` (the
/// guaranteed mountain-pass floor) or the run aborts.
pub fn run_continuation(
    grid: &Arc<Grid>,
    requested: &[f64],
    nl: &Nonlinearity,
    cfg: &SolveConfig,
    phi1: &Field,
    level_floor: f64,
) -> Result<ContinuationTrace, ContinuationError> {
    let schedule = effective_schedule(grid, requested)?;
    let solver = Solver::new(grid, nl.clone(), cfg.clone())
        .map_err(|e| ContinuationError::Step { step: 0, eps: schedule[0], source: e })?;
    let floor_tol = 1e-6;

    let mut points: Vec<CriticalPoint> = Vec::with_capacity(schedule.len());
    let mut histories = Vec::with_capacity(schedule.len());
    let mut level_increases = 0usize;

    let est = solver
        .estimate_c_eps(schedule[0], phi1)
        .map_err(|e| ContinuationError::Step { step: 0, eps: schedule[0], source: e })?;
    if est.candidate.level < level_floor - floor_tol {
        return Err(ContinuationError::NontrivialityLost {
            step: 0,
            eps: schedule[0],
            level: est.candidate.level,
            floor: level_floor,
        });
    }
    level_increases += est.level_increases;
    let path_level = est.level;
    let level_gap = est.level - est.candidate.level;
    histories.push(est.history.clone());
    points.push(est.candidate.clone());

    for (j, &eps) in schedule.iter().enumerate().skip(1) {
        let prev = points[j - 1].field.clone();
        let out = solver
            .solve_critical_point(&prev, eps)
            .map_err(|e| ContinuationError::Step { step: j, eps, source: e })?;
        if out.point.level < level_floor - floor_tol {
            return Err(ContinuationError::NontrivialityLost {
                step: j,
                eps,
                level: out.point.level,
                floor: level_floor,
            });
        }
        level_increases += out.level_increases;
        histories.push(out.history);
        points.push(out.point);
    }

    let mut uniform_dists = Vec::new();
    let mut h1_dists = Vec::new();
    for w in points.windows(2) {
        let d = w[1].field.axpy(-1.0, &w[0].field);
        uniform_dists.push(w[0].field.linf_distance(&w[1].field));
        h1_dists.push(dirichlet_form_slices(grid, d.values(), d.values()).max(0.0).sqrt());
    }

    let limit = points.last().unwrap().field.clone();
    Ok(ContinuationTrace {
        requested: requested.to_vec(),
        schedule,
        points,
        limit,
        uniform_dists,
        h1_dists,
        histories,
        first_step_sweeps: est.sweeps,
        path: Some(est.path),
        path_level,
        level_gap,
        level_increases,
    })
}

/// Limit diagnostics: distances between successive iterates, the level
/// sequence, the level of the limit, the measure of the unit level set, and
/// the two-sided sandwich between the limit level and the tail of the level
/// sequence.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<f64>,
    pub uniform_dists: Vec<f64>,
    pub h1_dists: Vec<f64>,
    pub j_limit: f64,
    /// |{ |u - 1| <= 1e-12 }| on the limit field.
    pub unit_level_volume: f64,
    pub tail: usize,
    pub tol: f64,
    /// J(limit) - tol <= min of the level tail.
    pub lower_ok: bool,
    /// max of the level tail <= J(limit) + unit level volume + tol.
    pub upper_ok: bool,
    /// H1 distances nonincreasing over the final entries.
    pub h1_trend_monotone: bool,
    /// H1 distance of the last pair below 10 x uniform distance x gradient
    /// scale of the limit.
    pub strong_convergence_proxy_ok: bool,
}

pub fn convergence_report(
    trace: &ContinuationTrace,
    nl: &Nonlinearity,
    tol_factor: f64,
) -> Result<ConvergenceReport, ContinuationError> {
    if trace.points.len() < 2 {
        return Err(ContinuationError::TraceTooShort(2));
    }
    let levels: Vec<f64> = trace.points.iter().map(|p| p.level).collect();
    let j_limit = energy::energy_j(&trace.limit, nl).total;
    let unit_level_volume = energy::level_band_volume(&trace.limit, 1e-12);
    let c_last = *levels.last().unwrap();
    let tol = tol_factor * c_last.abs();
    let tail = levels.len().min(3);
    let tail_slice = &levels[levels.len() - tail..];
    let min_tail = tail_slice.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_tail = tail_slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lower_ok = j_limit - tol <= min_tail;
    let upper_ok = max_tail <= j_limit + unit_level_volume + tol;

    let h1 = &trace.h1_dists;
    let h1_trend_monotone = if h1.len() >= 3 {
        let t = &h1[h1.len() - 3..];
        t[0] >= t[1] && t[1] >= t[2]
    } else {
        true
    };
    let grad_scale = crate::grid::norms(&trace.limit).h1_seminorm.max(1.0);
    let strong_convergence_proxy_ok = match (h1.last(), trace.uniform_dists.last()) {
        (Some(&h), Some(&u)) => h <= 10.0 * u * grad_scale,
        _ => true,
    };
    Ok(ConvergenceReport {
        levels,
        uniform_dists: trace.uniform_dists.clone(),
        h1_dists: trace.h1_dists.clone(),
        j_limit,
        unit_level_volume,
        tail,
        tol,
        lower_ok,
        upper_ok,
        h1_trend_monotone,
        strong_convergence_proxy_ok,
    })
}

/// Max interior gradient magnitude per point, over nodes at distance at
/// least r/2 from the boundary. A bounded sequence indicates the uniform
/// interior Lipschitz property along the continuation.
pub fn lipschitz_diagnostic(points: &[CriticalPoint], r: f64) -> Vec<f64> {
    points
        .iter()
        .map(|p| {
            let grid = p.field.grid();
            let grad = gradient(&p.field);
            let mut best = 0.0_f64;
            for i in 0..grid.len() {
                if grid.boundary_distance(i) >= 0.5 * r {
                    best = best.max(grad.magnitude_sq(i));
                }
            }
            best.sqrt()
        })
        .collect()
}

/// Barrier comparison: with `A0 = max |f(u-1)|` and the Poisson barrier
/// solving `-lap(b) = A0`, every critical point satisfies
/// `0 <= u <= b` up to tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    pub a0: f64,
    pub barrier_max: f64,
    pub ok: bool,
    /// Largest violation of either inequality (negative part or overshoot).
    pub max_violation: f64,
}

pub fn barrier_check(
    u: &Field,
    nl: &Nonlinearity,
    poisson: &PoissonSolver,
) -> Result<BarrierReport, ContinuationError> {
    let grid = u.grid();
    let a0 = u
        .values()
        .iter()
        .map(|&v| nl.f(v - 1.0).abs())
        .fold(0.0, f64::max);
    let mut rhs = vec![0.0; grid.len()];
    for (i, r) in rhs.iter_mut().enumerate() {
        if grid.is_interior(i) {
            *r = a0;
        }
    }
    let barrier = poisson.solve(&rhs);
    const TOL: f64 = 1e-10;
    let mut max_violation = 0.0_f64;
    for i in 0..grid.len() {
        let v = u.values()[i];
        max_violation = max_violation.max(-v).max(v - barrier[i]);
    }
    Ok(BarrierReport {
        a0,
        barrier_max: barrier.iter().cloned().fold(0.0, f64::max),
        ok: max_violation <= TOL,
        max_violation,
    })
}

/// Sup-norm and critical-mass bounds along a trace.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    /// Whether the boundedness threshold applies (kappa below the lower
    /// threshold).
    pub applicable: bool,
    /// N (M + |box|) / kappa.
    pub mass_bound: f64,
    /// Per-point: (level, critical mass, within bound, checked).
    pub per_point: Vec<MassCheck>,
    pub linf: Vec<f64>,
    /// max/min ratio of sup norms at most 10 (uniformity proxy; the sharp
    /// constant is not explicit).
    pub uniform_ok: bool,
    pub all_mass_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MassCheck {
    pub level: f64,
    pub mass: f64,
    pub ok: bool,
    /// False when the point's level exceeds M and the bound is not asserted.
    pub checked: bool,
}

pub fn linf_bound_check(
    trace: &ContinuationTrace,
    m: f64,
    nl: &Nonlinearity,
    kappa_star_lower: f64,
) -> BoundsReport {
    let n = nl.dim() as f64;
    let volume = trace.limit.grid().volume();
    let mass_bound = n * (m + volume) / nl.kappa();
    let mut per_point = Vec::with_capacity(trace.points.len());
    let mut linf = Vec::with_capacity(trace.points.len());
    let mut all_ok = true;
    for p in &trace.points {
        let mass = energy::plus_mass(&p.field, nl);
        let checked = p.level <= m;
        let ok = !checked || mass <= mass_bound * (1.0 + 1e-8);
        all_ok &= ok;
        per_point.push(MassCheck {
            level: p.level,
            mass,
            ok,
            checked,
        });
        linf.push(
            p.field
                .values()
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max),
        );
    }
    let lmax = linf.iter().cloned().fold(0.0_f64, f64::max);
    let lmin = linf.iter().cloned().fold(f64::INFINITY, f64::min);
    BoundsReport {
        applicable: nl.kappa() < kappa_star_lower,
        mass_bound,
        per_point,
        linf,
        uniform_ok: lmin > 0.0 && lmax / lmin <= 10.0,
        all_mass_ok: all_ok,
    }
}
