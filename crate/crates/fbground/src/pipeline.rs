//! End-to-end orchestration: resolve spectral constants and thresholds,
//! run the continuation, project the limit onto the manifold, and assemble
//! the verification bundle.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::continuation::{
    self, barrier_check, convergence_report, lipschitz_diagnostic, linf_bound_check,
    BarrierReport, BoundsReport, ContinuationError, ContinuationTrace, ConvergenceReport,
};
use crate::energy::{self, EnergyError, Nonlinearity};
use crate::freeboundary::{
    self, extrapolate_defect, flux_jump, generalized_fbc, FbError, FluxJumpSample, FluxReport,
    ScanReport,
};
use crate::grid::{resample, Field, Grid, VectorField};
use crate::nehari::{self, NehariError};
use crate::poisson::PoissonSolver;
use crate::solver::{ps_diagnostic, PsReport, SolveConfig, Solver, SolverError};
use crate::spectral::{self, SpectralData, SpectralError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Spectral(#[from] SpectralError),
    #[error("{0}")]
    Energy(#[from] EnergyError),
    #[error("{0}")]
    Solver(#[from] SolverError),
    #[error("{0}")]
    Continuation(#[from] ContinuationError),
    #[error("{0}")]
    Nehari(#[from] NehariError),
    #[error("{0}")]
    FreeBoundary(#[from] FbError),
    #[error(
        "the eigenray level bound is infinite for lambda_star = {lambda_star} <= lambda1 = {lambda1}; \
         no threshold can be derived"
    )]
    InfiniteLevelBound { lambda_star: f64, lambda1: f64 },
    #[error(
        "kappa = {kappa:.6e} is not below the boundedness threshold {threshold:.6e}; \
         pass --allow-supercritical-kappa to override"
    )]
    SupercriticalKappa { kappa: f64, threshold: f64 },
}

/// How the spectral-dependent parameters are specified.
#[derive(Debug, Clone, Copy)]
pub enum ParamSpec {
    /// Multiple of the principal eigenvalue (for lambda) or of the lower
    /// threshold (for kappa).
    Factor(f64),
    Absolute(f64),
}

#[derive(Debug, Clone)]
pub struct PipelineParams {
    pub lambda: ParamSpec,
    pub kappa: ParamSpec,
    /// Subcritical exponent in (2, 2*); None selects the critical kind.
    pub subcritical_p: Option<f64>,
    /// lambda_star = factor * lambda1; the threshold instantiation point.
    pub lambda_star_factor: f64,
    /// Override for M in the compactness threshold (defaults to the
    /// eigenray bound at lambda_star).
    pub m_override: Option<f64>,
    pub eps0: f64,
    pub ratio: f64,
    pub steps: usize,
    pub allow_supercritical: bool,
    pub cfg: SolveConfig,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            lambda: ParamSpec::Factor(1.5),
            kappa: ParamSpec::Factor(0.5),
            subcritical_p: None,
            lambda_star_factor: 1.25,
            m_override: None,
            eps0: 0.4,
            ratio: 0.5,
            steps: 5,
            allow_supercritical: false,
            cfg: SolveConfig::default(),
        }
    }
}

impl PipelineParams {
    pub fn schedule(&self) -> Vec<f64> {
        (0..self.steps)
            .map(|j| self.eps0 * self.ratio.powi(j as i32))
            .collect()
    }
}

/// Resolves every constant the run needs. Fails when the eigenray bound is
/// infinite (lambda_star at or below the principal eigenvalue) or when kappa
/// breaches the boundedness threshold without an explicit override.
pub fn resolve_spectral(
    grid: &Arc<Grid>,
    params: &PipelineParams,
) -> Result<SpectralData, PipelineError> {
    if params.steps == 0 {
        return Err(PipelineError::Config("empty schedule".into()));
    }
    if !(params.eps0 > 0.0) || !(params.ratio > 0.0 && params.ratio < 1.0) {
        return Err(PipelineError::Config(format!(
            "schedule needs eps0 > 0 and ratio in (0,1), got {} and {}",
            params.eps0, params.ratio
        )));
    }
    let (lambda1, phi1) = spectral::principal_eigen(grid)?;
    let sobolev = spectral::sobolev_constant(grid.dim())?;
    let lambda = match params.lambda {
        ParamSpec::Factor(f) => f * lambda1,
        ParamSpec::Absolute(v) => v,
    };
    let lambda_star = params.lambda_star_factor * lambda1;
    let m_lambda_star = spectral::mpass_upper_bound(lambda_star, lambda1, &phi1)?;
    let m = match params.m_override {
        Some(m) => m,
        None => {
            if !m_lambda_star.finite {
                return Err(PipelineError::InfiniteLevelBound {
                    lambda_star,
                    lambda1,
                });
            }
            m_lambda_star.value
        }
    };
    let (kappa_star_upper, kappa_star_lower) =
        spectral::kappa_thresholds(m, grid.volume(), grid.dim(), sobolev)?;
    let kappa = match params.kappa {
        ParamSpec::Factor(f) => {
            if !(f > 0.0 && f < 1.0) && !params.allow_supercritical {
                return Err(PipelineError::SupercriticalKappa {
                    kappa: f * kappa_star_lower,
                    threshold: kappa_star_lower,
                });
            }
            f * kappa_star_lower
        }
        ParamSpec::Absolute(v) => v,
    };
    if kappa >= kappa_star_lower && !params.allow_supercritical {
        return Err(PipelineError::SupercriticalKappa {
            kappa,
            threshold: kappa_star_lower,
        });
    }
    let m_lambda = spectral::mpass_upper_bound(lambda, lambda1, &phi1)?;
    let (rho, rho_floor) = spectral::rho_radius(grid.dim(), lambda, kappa, sobolev);
    Ok(SpectralData {
        dim: grid.dim(),
        volume: grid.volume(),
        lambda1,
        sobolev,
        lambda_star,
        m_lambda_star,
        kappa_star_upper,
        kappa_star_lower,
        lambda,
        kappa,
        m_lambda,
        rho,
        rho_floor,
        phi1,
    })
}

/// Flux verification around the unit level of a converged field.
#[derive(Debug, Clone, Serialize)]
pub struct FluxVerification {
    pub jump: Vec<FluxJumpSample>,
    /// Finest admissible offset (resolved, well matched, outside the kernel
    /// transition layer) and its mean jump.
    pub finest_delta: Option<f64>,
    pub finest_mean: Option<f64>,
    pub jump_ok: bool,
    pub fbc: Vec<FluxReport>,
    pub extrapolated_defect: Option<f64>,
    pub defect_reference: f64,
    pub defect_ok: bool,
}

/// Target band for the squared-gradient jump across the unit level.
pub const FLUX_JUMP_BAND: (f64, f64) = (1.8, 2.2);
/// Extrapolated flux defect must stay below this fraction of the larger
/// surface integral.
pub const FLUX_DEFECT_FRACTION: f64 = 0.1;

/// Estimates the interface radius of a phase blob from the plus surface and
/// builds a radial test field supported in an annulus around it.
fn interface_test_field(u: &Field, eps: f64) -> Result<(VectorField, f64), PipelineError> {
    let grid = u.grid();
    let h = grid.max_spacing();
    let probe = freeboundary::level_set(u, 1.0 + (2.0 * h).max(eps))?;
    let center: Vec<f64> = grid.extents().iter().map(|e| 0.5 * e).collect();
    let mut radius = 0.0;
    let mut area = 0.0;
    for f in &probe.facets {
        let r = f
            .centroid
            .iter()
            .zip(&center)
            .map(|(c, m)| (c - m) * (c - m))
            .sum::<f64>()
            .sqrt();
        radius += f.area * r;
        area += f.area;
    }
    if area == 0.0 {
        return Err(PipelineError::Config(
            "flux verification needs a nonempty phase region".into(),
        ));
    }
    radius /= area;
    let width = (0.25 * grid.extents()[0]).max(8.0 * h);
    let margin = (4.0 * h).max(0.03 * grid.extents()[0]);
    let extents = grid.extents().to_vec();
    let c2 = center.clone();
    let phi = VectorField::from_fn(grid, move |x| {
        let r = x
            .iter()
            .zip(&c2)
            .map(|(xi, ci)| (xi - ci) * (xi - ci))
            .sum::<f64>()
            .sqrt();
        // annulus bump around the interface, cut off near the box boundary
        let d_boundary = x
            .iter()
            .zip(&extents)
            .map(|(&xi, &e)| xi.min(e - xi))
            .fold(f64::INFINITY, f64::min);
        let ramp = (d_boundary / margin).clamp(0.0, 1.0);
        let w = (1.0 - ((r - radius) / width).abs()).max(0.0) * ramp * ramp;
        if r < 1e-9 || w == 0.0 {
            vec![0.0; x.len()]
        } else {
            x.iter().zip(&c2).map(|(xi, ci)| w * (xi - ci) / r).collect()
        }
    });
    Ok((phi, radius))
}

/// Estimates the interface gradient scale from the level surface just
/// outside the kernel transition layer.
fn interface_gradient_scale(u: &Field, eps: f64) -> Result<f64, PipelineError> {
    let grid = u.grid();
    let h = grid.max_spacing();
    let probe = freeboundary::level_set(u, 1.0 + (2.0 * h).max(1.1 * eps))?;
    if probe.facets.is_empty() {
        return Err(PipelineError::Config(
            "flux verification needs a nonempty phase region".into(),
        ));
    }
    let grad = crate::grid::gradient(u);
    let mut acc = 0.0;
    let mut area = 0.0;
    for f in &probe.facets {
        let g: f64 = (0..3)
            .map(|a| crate::grid::sample_slice(grid, grad.component(a), &f.centroid).powi(2))
            .sum::<f64>()
            .sqrt();
        acc += f.area * g;
        area += f.area;
    }
    Ok(acc / area)
}

/// Runs the jump and flux-balance verification on a converged field.
///
/// Offsets are gradient-scaled: the finest one spans two cells of level
/// change across the local gradient and clears the kernel transition layer,
/// which is the finest the surfaces resolve. The flux-balance defect is
/// extrapolated through three such offsets.
pub fn verify_flux(u: &Field, eps: f64) -> Result<FluxVerification, PipelineError> {
    let grid = u.grid();
    let h = grid.max_spacing();
    let g_scale = interface_gradient_scale(u, eps)?;
    let base = (2.0 * h * g_scale).max(1.3 * eps) * 1.05;
    let deltas: Vec<f64> = [1.0, 2.0, 4.0].iter().map(|k| k * base).collect();
    let jump = flux_jump(u, &deltas)?;
    let admissible =
        |s: &&FluxJumpSample| -> bool { s.mean.is_some() && s.resolved && !s.warning };
    let finest = jump.iter().find(admissible);
    let (finest_delta, finest_mean) = match finest {
        Some(s) => (Some(s.delta), s.mean),
        None => (None, None),
    };
    let jump_ok = finest_mean
        .map(|m| m >= FLUX_JUMP_BAND.0 && m <= FLUX_JUMP_BAND.1)
        .unwrap_or(false);

    let (phi, _) = interface_test_field(u, eps)?;
    let mut fbc = Vec::new();
    for &d in &deltas {
        fbc.push(generalized_fbc(u, &phi, d, d)?);
    }
    let extrapolated_defect = extrapolate_defect(&fbc);
    let defect_reference = fbc
        .iter()
        .map(|r| r.plus_integral.abs().max(r.minus_integral.abs()))
        .fold(0.0, f64::max);
    let defect_ok = match extrapolated_defect {
        Some(d) => defect_reference > 0.0 && d.abs() <= FLUX_DEFECT_FRACTION * defect_reference,
        None => false,
    };
    Ok(FluxVerification {
        jump,
        finest_delta,
        finest_mean,
        jump_ok,
        fbc,
        extrapolated_defect,
        defect_reference,
        defect_ok,
    })
}

/// Summary of a nondegeneracy scan (full sample lists can be large).
#[derive(Debug, Clone, Serialize)]
pub struct ScanSummary {
    pub min_alpha: Option<f64>,
    pub noise_floor: f64,
    pub sample_count: usize,
    pub ok: bool,
}

pub fn scan_summary(report: &ScanReport) -> ScanSummary {
    ScanSummary {
        min_alpha: report.min_alpha,
        noise_floor: report.noise_floor,
        sample_count: report.samples.len(),
        ok: report
            .min_alpha
            .map(|a| a > report.noise_floor)
            .unwrap_or(false),
    }
}

/// Default scan radius for a box: a tenth of the smallest extent, at least
/// five cells.
pub fn default_scan_radius(grid: &Grid) -> f64 {
    let min_extent = grid.extents().iter().cloned().fold(f64::INFINITY, f64::min);
    (0.1 * min_extent).max(5.0 * grid.max_spacing())
}

/// Everything the run verifies, with per-group pass flags.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationBundle {
    pub convergence: ConvergenceReport,
    pub sandwich_ok: bool,
    pub lipschitz: Vec<f64>,
    pub lipschitz_ratio: f64,
    pub lipschitz_ok: bool,
    pub barrier: Vec<BarrierReport>,
    pub barrier_ok: bool,
    pub max_principle_ok: bool,
    pub bounds: BoundsReport,
    pub bounds_ok: bool,
    pub ground_level: f64,
    pub ground_residual: f64,
    /// Membership defect of the raw last iterate (order eps by resolution).
    pub limit_residual: Option<f64>,
    pub ground_ok: bool,
    pub ps: PsReport,
    pub flux: Option<FluxVerification>,
    pub flux_ok: Option<bool>,
    pub nondegeneracy: Option<ScanSummary>,
    pub nondegeneracy_ok: Option<bool>,
    pub passed: bool,
}

impl VerificationBundle {
    /// Re-derives the overall flag after a group was recomputed.
    pub fn recompute_passed(&mut self, toggles: VerifyToggles) {
        let mut passed = self.ground_ok;
        if toggles.sandwich {
            passed &= self.sandwich_ok;
        }
        if toggles.bounds {
            passed &= self.bounds_ok && self.lipschitz_ok;
        }
        if let Some(ok) = self.flux_ok {
            passed &= ok;
        }
        if let Some(ok) = self.nondegeneracy_ok {
            passed &= ok;
        }
        self.passed = passed;
    }
}

/// Which verification groups to run.
#[derive(Debug, Clone, Copy)]
pub struct VerifyToggles {
    pub fbc: bool,
    pub nondegeneracy: bool,
    pub bounds: bool,
    pub sandwich: bool,
}

impl Default for VerifyToggles {
    fn default() -> Self {
        VerifyToggles {
            fbc: true,
            nondegeneracy: true,
            bounds: true,
            sandwich: true,
        }
    }
}

pub struct PipelineOutput {
    pub spectral: SpectralData,
    pub trace: ContinuationTrace,
    /// The run's ground-state artifact: the manifold projection of the last
    /// iterate when the fiber admits one, otherwise the raw last iterate.
    pub ground: nehari::NehariPoint,
    /// Whether the artifact is the projection. At a vanishing critical
    /// coefficient the kernel band term can keep the fiber numerator of the
    /// last iterate nonpositive at any reachable resolution, in which case
    /// the projection is undefined and the raw limit is reported with its
    /// honest membership residual.
    pub ground_projected: bool,
    pub verification: VerificationBundle,
}

/// Builds the configured nonlinearity from resolved constants.
pub fn build_nonlinearity(
    dim: usize,
    params: &PipelineParams,
    spectral: &SpectralData,
) -> Result<Nonlinearity, PipelineError> {
    Ok(match params.subcritical_p {
        None => Nonlinearity::critical(dim, spectral.lambda, spectral.kappa)?,
        Some(p) => Nonlinearity::subcritical(dim, spectral.lambda, spectral.kappa, p)?,
    })
}

/// Runs the whole construction on one grid and verifies it.
pub fn run_ground_state(
    grid: &Arc<Grid>,
    params: &PipelineParams,
    toggles: VerifyToggles,
) -> Result<PipelineOutput, PipelineError> {
    let spectral = resolve_spectral(grid, params)?;
    let nl = build_nonlinearity(grid.dim(), params, &spectral)?;
    let trace = continuation::run_continuation(
        grid,
        &params.schedule(),
        &nl,
        &params.cfg,
        &spectral.phi1,
        spectral.rho_floor,
    )?;
    let (ground, ground_projected) = match nehari::project(&trace.limit, &nl) {
        Ok(p) => (p, true),
        Err(NehariError::NonpositiveFiberNumerator(_))
        | Err(NehariError::VanishingPlusPart)
        | Err(NehariError::NotCritical) => {
            let residual = nehari::nehari_residual(&trace.limit, &nl);
            let energy = energy::energy_j(&trace.limit, &nl).total;
            (
                nehari::NehariPoint {
                    field: trace.limit.clone(),
                    residual,
                    energy,
                },
                false,
            )
        }
        Err(e) => return Err(e.into()),
    };
    let verification = verify_trace(&trace, &ground, &nl, &spectral, toggles)?;
    Ok(PipelineOutput {
        spectral,
        trace,
        ground,
        ground_projected,
        verification,
    })
}

pub fn verify_trace(
    trace: &ContinuationTrace,
    ground: &nehari::NehariPoint,
    nl: &Nonlinearity,
    spectral: &SpectralData,
    toggles: VerifyToggles,
) -> Result<VerificationBundle, PipelineError> {
    let grid = trace.limit.grid().clone();
    let convergence = convergence_report(trace, nl, 5e-3)?;
    let sandwich_ok = convergence.lower_ok && convergence.upper_ok;

    let r = 0.5 * grid.extents().iter().cloned().fold(f64::INFINITY, f64::min);
    let lipschitz = lipschitz_diagnostic(&trace.points, r);
    let lmax = lipschitz.iter().cloned().fold(0.0_f64, f64::max);
    let lmin = lipschitz.iter().cloned().fold(f64::INFINITY, f64::min);
    let lipschitz_ratio = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    let lipschitz_ok = lipschitz_ratio < 2.0;

    let poisson = PoissonSolver::new(&grid);
    let mut barrier = Vec::new();
    let mut barrier_ok = true;
    let mut max_principle_ok = true;
    for p in &trace.points {
        let b = barrier_check(&p.field, nl, &poisson)?;
        barrier_ok &= b.ok;
        barrier.push(b);
        max_principle_ok &= p.field.values().iter().all(|&v| v >= -1e-12);
    }

    let m = if spectral.m_lambda_star.finite {
        spectral.m_lambda_star.value
    } else {
        f64::INFINITY
    };
    let bounds = linf_bound_check(trace, m, nl, spectral.kappa_star_lower);
    let bounds_ok = bounds.all_mass_ok && bounds.uniform_ok && barrier_ok && max_principle_ok;

    let limit_residual = {
        let r = nehari::nehari_residual(&trace.limit, nl);
        if r.is_finite() {
            Some(r)
        } else {
            None
        }
    };
    let ground_ok = ground.energy > 0.0 && ground.residual <= 1e-6;

    let last_history = trace.histories.last().cloned().unwrap_or_default();
    let ps = ps_diagnostic(&last_history, nl.kappa(), spectral.kappa_star_upper);

    let eps_last = *trace.schedule.last().unwrap();
    let (flux, flux_ok) = if toggles.fbc {
        let f = verify_flux(&trace.limit, eps_last)?;
        let ok = f.jump_ok && f.defect_ok;
        (Some(f), Some(ok))
    } else {
        (None, None)
    };

    let (nondegeneracy, nondegeneracy_ok) = if toggles.nondegeneracy {
        let rep = freeboundary::nondegeneracy_scan(&ground.field, default_scan_radius(&grid))?;
        let s = scan_summary(&rep);
        let ok = s.ok;
        (Some(s), Some(ok))
    } else {
        (None, None)
    };

    let mut passed = ground_ok;
    if toggles.sandwich {
        passed &= sandwich_ok;
    }
    if toggles.bounds {
        passed &= bounds_ok && lipschitz_ok;
    }
    if let Some(ok) = flux_ok {
        passed &= ok;
    }
    if let Some(ok) = nondegeneracy_ok {
        passed &= ok;
    }

    Ok(VerificationBundle {
        convergence,
        sandwich_ok,
        lipschitz,
        lipschitz_ratio,
        lipschitz_ok,
        barrier,
        barrier_ok,
        max_principle_ok,
        bounds,
        bounds_ok,
        ground_level: ground.energy,
        ground_residual: ground.residual,
        limit_residual,
        ground_ok,
        ps,
        flux,
        flux_ok,
        nondegeneracy,
        nondegeneracy_ok,
        passed,
    })
}

/// Re-solves a converged field on a refined grid at one epsilon (clamped to
/// the fine grid's resolvability cap), warm-starting from the interpolated
/// coarse field.
pub fn resolve_on_grid(
    fine: &Arc<Grid>,
    nl: &Nonlinearity,
    cfg: &SolveConfig,
    coarse_field: &Field,
    eps: f64,
) -> Result<crate::solver::CriticalPoint, PipelineError> {
    let eps_eff = eps.max(2.0 * fine.max_spacing());
    let init = resample(coarse_field, fine);
    let solver = Solver::new(fine, nl.clone(), cfg.clone())?;
    let out = solver.solve_critical_point(&init, eps_eff)?;
    Ok(out.point)
}

/// Checks the critical-mass inequality on one point:
/// `integral (u+)^(2*) <= N (M + |box|) / kappa` whenever the level is at
/// most M.
pub fn mass_bound_holds(point: &crate::solver::CriticalPoint, m: f64, nl: &Nonlinearity) -> bool {
    if point.level > m {
        return true;
    }
    let grid = point.field.grid();
    let bound = nl.dim() as f64 * (m + grid.volume()) / nl.kappa();
    energy::plus_mass(&point.field, nl) <= bound * (1.0 + 1e-8)
}
