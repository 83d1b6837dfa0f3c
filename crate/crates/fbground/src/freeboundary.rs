//! Level-set extraction, the generalized flux-balance identity over nearby
//! level surfaces, the gradient-jump estimate across the unit level, and the
//! nondegeneracy scan.
//!
//! Surface extraction subdivides each cell into six simplices (consistent
//! across neighbors) and interpolates crossings linearly along edges; it is
//! implemented for three dimensions, which is where every surface diagnostic
//! in the acceptance problems lives. The nondegeneracy scan is dimension
//! generic.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{gradient, sample_slice, Field, Grid, VectorField};

#[derive(Debug, Error)]
pub enum FbError {
    #[error("surface extraction supports dim = 3, got {0}")]
    UnsupportedDimension(usize),
    #[error("level offset must be positive, got {0}")]
    NonpositiveDelta(f64),
    #[error("test field must vanish on the domain boundary (node {0})")]
    TestFieldBoundary(usize),
    #[error("scan radius {r0} must exceed twice the mesh width {h}")]
    ScanRadiusTooSmall { r0: f64, h: f64 },
}

/// Which side of the unit level a surface represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Plus,
    Minus,
}

/// One triangular facet: centroid, unit normal, area measure.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Facet {
    pub centroid: [f64; 3],
    pub normal: [f64; 3],
    pub area: f64,
}

/// A sampled level surface. Facet normals point outward from the band
/// between the two working surfaces: along the gradient on the plus side,
/// against it on the minus side.
#[derive(Debug, Clone)]
pub struct LevelSetSurface {
    pub level: f64,
    pub side: Side,
    pub facets: Vec<Facet>,
}

impl LevelSetSurface {
    pub fn total_area(&self) -> f64 {
        self.facets.iter().map(|f| f.area).sum()
    }

    /// Flips the side tag, negating every normal.
    pub fn flip(&self) -> LevelSetSurface {
        LevelSetSurface {
            level: self.level,
            side: match self.side {
                Side::Plus => Side::Minus,
                Side::Minus => Side::Plus,
            },
            facets: self
                .facets
                .iter()
                .map(|f| Facet {
                    centroid: f.centroid,
                    normal: [-f.normal[0], -f.normal[1], -f.normal[2]],
                    area: f.area,
                })
                .collect(),
        }
    }
}

/// Nudges a level off exact node values (almost every offset is admissible;
/// exact hits are perturbed).
fn admissible_level(u: &Field, level: f64) -> f64 {
    let mut l = level;
    let scale = level.abs().max(1.0);
    for _ in 0..8 {
        if u.values().iter().any(|&v| v == l) {
            l += 1e-12 * scale;
        } else {
            return l;
        }
    }
    l
}

/// Extracts the level surface {u = level} by simplicial subdivision with
/// linear edge interpolation. Normals follow the interpolated gradient
/// direction, oriented by the side tag (side inferred from the level's
/// position relative to 1).
pub fn level_set(u: &Field, level: f64) -> Result<LevelSetSurface, FbError> {
    let grid = u.grid();
    if grid.dim() != 3 {
        return Err(FbError::UnsupportedDimension(grid.dim()));
    }
    let level = admissible_level(u, level);
    let side = if level >= 1.0 { Side::Plus } else { Side::Minus };
    let grad = gradient(u);
    let mut facets = Vec::new();

    let nodes = grid.nodes();
    let h = grid.spacing();
    let vals = u.values();
    let stride = grid.strides();

    // Kuhn subdivision: six simplices per cell, one per axis order.
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];

    let mut corner_pos = [[0.0_f64; 3]; 4];
    let mut corner_val = [0.0_f64; 4];
    for i in 0..nodes[0] - 1 {
        for j in 0..nodes[1] - 1 {
            for k in 0..nodes[2] - 1 {
                let base = i * stride[0] + j * stride[1] + k * stride[2];
                for perm in &PERMS {
                    let mut offset = [0usize; 3];
                    let mut flat = base;
                    for (vtx, slot) in corner_pos.iter_mut().enumerate() {
                        if vtx > 0 {
                            let a = perm[vtx - 1];
                            offset[a] += 1;
                            flat += stride[a];
                        }
                        *slot = [
                            (i + offset[0]) as f64 * h[0],
                            (j + offset[1]) as f64 * h[1],
                            (k + offset[2]) as f64 * h[2],
                        ];
                        corner_val[vtx] = vals[flat];
                    }
                    emit_simplex_facets(
                        &corner_pos,
                        &corner_val,
                        level,
                        side,
                        grid,
                        &grad,
                        &mut facets,
                    );
                }
            }
        }
    }
    Ok(LevelSetSurface {
        level,
        side,
        facets,
    })
}

fn emit_simplex_facets(
    pos: &[[f64; 3]; 4],
    val: &[f64; 4],
    level: f64,
    side: Side,
    grid: &Grid,
    grad: &VectorField,
    out: &mut Vec<Facet>,
) {
    let mut above = [false; 4];
    let mut n_above = 0;
    for v in 0..4 {
        above[v] = val[v] > level;
        n_above += above[v] as usize;
    }
    if n_above == 0 || n_above == 4 {
        return;
    }
    let cross = |a: usize, b: usize| -> [f64; 3] {
        let t = (level - val[a]) / (val[b] - val[a]);
        [
            pos[a][0] + t * (pos[b][0] - pos[a][0]),
            pos[a][1] + t * (pos[b][1] - pos[a][1]),
            pos[a][2] + t * (pos[b][2] - pos[a][2]),
        ]
    };
    let mut push_tri = |p0: [f64; 3], p1: [f64; 3], p2: [f64; 3]| {
        let e1 = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
        let e2 = [p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]];
        let cx = e1[1] * e2[2] - e1[2] * e2[1];
        let cy = e1[2] * e2[0] - e1[0] * e2[2];
        let cz = e1[0] * e2[1] - e1[1] * e2[0];
        let area = 0.5 * (cx * cx + cy * cy + cz * cz).sqrt();
        if area <= 0.0 {
            return;
        }
        let centroid = [
            (p0[0] + p1[0] + p2[0]) / 3.0,
            (p0[1] + p1[1] + p2[1]) / 3.0,
            (p0[2] + p1[2] + p2[2]) / 3.0,
        ];
        let g = [
            sample_slice(grid, grad.component(0), &centroid),
            sample_slice(grid, grad.component(1), &centroid),
            sample_slice(grid, grad.component(2), &centroid),
        ];
        let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let normal = if gn > 1e-300 {
            let sign = match side {
                Side::Plus => 1.0,
                Side::Minus => -1.0,
            };
            [sign * g[0] / gn, sign * g[1] / gn, sign * g[2] / gn]
        } else {
            // degenerate gradient: fall back to the triangle plane normal
            let n = (cx * cx + cy * cy + cz * cz).sqrt();
            [cx / n, cy / n, cz / n]
        };
        out.push(Facet {
            centroid,
            normal,
            area,
        });
    };

    if n_above == 1 || n_above == 3 {
        let lone = (0..4).find(|&v| above[v] == (n_above == 1)).unwrap();
        let others: Vec<usize> = (0..4).filter(|&v| v != lone).collect();
        let p0 = cross(lone, others[0]);
        let p1 = cross(lone, others[1]);
        let p2 = cross(lone, others[2]);
        push_tri(p0, p1, p2);
    } else {
        let plus: Vec<usize> = (0..4).filter(|&v| above[v]).collect();
        let minus: Vec<usize> = (0..4).filter(|&v| !above[v]).collect();
        // quad with a consistent cyclic order, split into two triangles
        let q0 = cross(plus[0], minus[0]);
        let q1 = cross(plus[0], minus[1]);
        let q2 = cross(plus[1], minus[1]);
        let q3 = cross(plus[1], minus[0]);
        push_tri(q0, q1, q2);
        push_tri(q0, q2, q3);
    }
}

/// Both surface integrals of the flux-balance identity and their defect:
///
/// `integral_{u = 1+dp} (|grad u|^2 - 2) phi . n+  -  integral_{u = 1-dm} |grad u|^2 phi . n-`,
///
/// where `n+` (resp. `n-`) is the outward unit normal to `{u > 1 + dp}`
/// (resp. `{u > 1 - dm}`); both equal `-grad u / |grad u|` on their surface.
/// The defect tends to zero on generalized solutions as the offsets shrink.
#[derive(Debug, Clone, Serialize)]
pub struct FluxReport {
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub plus_integral: f64,
    pub minus_integral: f64,
    pub defect: f64,
    /// Set when the level band occupies a large fraction of the test-field
    /// support.
    pub band_warning: bool,
    pub plus_facets: usize,
    pub minus_facets: usize,
}

pub fn generalized_fbc(
    u: &Field,
    phi: &VectorField,
    delta_plus: f64,
    delta_minus: f64,
) -> Result<FluxReport, FbError> {
    if !(delta_plus > 0.0) {
        return Err(FbError::NonpositiveDelta(delta_plus));
    }
    if !(delta_minus > 0.0) {
        return Err(FbError::NonpositiveDelta(delta_minus));
    }
    let grid = u.grid();
    if grid.dim() != 3 {
        return Err(FbError::UnsupportedDimension(grid.dim()));
    }
    for i in 0..grid.len() {
        if grid.is_boundary(i) && phi.magnitude_sq(i) != 0.0 {
            return Err(FbError::TestFieldBoundary(i));
        }
    }

    let surf_p = level_set(u, 1.0 + delta_plus)?;
    let surf_m = level_set(u, 1.0 - delta_minus)?;
    let grad = gradient(u);

    let eval = |facet: &Facet, weight: &dyn Fn(f64) -> f64, normal_sign: f64| -> f64 {
        let g = [
            sample_slice(grid, grad.component(0), &facet.centroid),
            sample_slice(grid, grad.component(1), &facet.centroid),
            sample_slice(grid, grad.component(2), &facet.centroid),
        ];
        let gsq = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
        let p = [
            sample_slice(grid, phi.component(0), &facet.centroid),
            sample_slice(grid, phi.component(1), &facet.centroid),
            sample_slice(grid, phi.component(2), &facet.centroid),
        ];
        let dot = p[0] * facet.normal[0] + p[1] * facet.normal[1] + p[2] * facet.normal[2];
        facet.area * weight(gsq) * normal_sign * dot
    };

    // stored normals are band-outward: +grad dir on plus, -grad dir on
    // minus; the identity's normals are -grad dir on both sides
    let plus_integral: f64 = surf_p
        .facets
        .iter()
        .map(|f| eval(f, &|gsq| gsq - 2.0, -1.0))
        .sum();
    let minus_integral: f64 = surf_m
        .facets
        .iter()
        .map(|f| eval(f, &|gsq| gsq, 1.0))
        .sum();

    // band measure on the support of phi
    let delta = delta_plus.max(delta_minus);
    let mut band = 0.0;
    let mut support = 0.0;
    for i in 0..grid.len() {
        if phi.magnitude_sq(i) > 0.0 {
            let w = grid.weight(i);
            support += w;
            if (u.values()[i] - 1.0).abs() <= delta {
                band += w;
            }
        }
    }
    let band_warning = support > 0.0 && band > 0.25 * support;

    Ok(FluxReport {
        delta_plus,
        delta_minus,
        plus_integral,
        minus_integral,
        defect: plus_integral - minus_integral,
        band_warning,
        plus_facets: surf_p.facets.len(),
        minus_facets: surf_m.facets.len(),
    })
}

/// Polynomial extrapolation of the defect to vanishing offsets from a sweep
/// of reports: quadratic through the three finest offsets when available
/// (the defect of a balanced interface is smooth in the offset with a zero
/// constant term), linear through two, the raw value otherwise.
pub fn extrapolate_defect(reports: &[FluxReport]) -> Option<f64> {
    if reports.is_empty() {
        return None;
    }
    let mut sorted: Vec<&FluxReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.delta_plus.partial_cmp(&b.delta_plus).unwrap());
    sorted.dedup_by(|a, b| (a.delta_plus - b.delta_plus).abs() < 1e-300);
    match sorted.len() {
        1 => Some(sorted[0].defect),
        2 => {
            let (d1, d2) = (sorted[0].delta_plus, sorted[1].delta_plus);
            Some(sorted[0].defect - d1 * (sorted[1].defect - sorted[0].defect) / (d2 - d1))
        }
        _ => {
            // Lagrange value at zero offset through the three finest points
            let pts: Vec<(f64, f64)> = sorted[..3]
                .iter()
                .map(|r| (r.delta_plus, r.defect))
                .collect();
            let mut acc = 0.0;
            for i in 0..3 {
                let (xi, yi) = pts[i];
                let mut w = 1.0;
                for (j, &(xj, _)) in pts.iter().enumerate() {
                    if j != i {
                        w *= xj / (xj - xi);
                    }
                }
                acc += w * yi;
            }
            Some(acc)
        }
    }
}

/// Per-offset estimate of the squared-gradient jump across the unit level:
/// facets of {u = 1 + delta} are paired with the nearest facets of
/// {u = 1 - delta} along the downhill gradient direction with a travel cap
/// of 3 delta / |grad u|.
#[derive(Debug, Clone, Serialize)]
pub struct FluxJumpSample {
    pub delta: f64,
    /// Area-weighted mean of |grad u|^2 (plus side) - |grad u|^2 (minus
    /// side) over matched pairs; None when either surface is empty.
    pub mean: Option<f64>,
    /// Area-weighted standard deviation over matched pairs.
    pub spread: f64,
    pub matched_area_fraction: f64,
    /// Offset spans at least two cells of the local gradient scale.
    pub resolved: bool,
    /// More than a fifth of the plus-side area found no partner.
    pub warning: bool,
    pub plus_facets: usize,
    pub minus_facets: usize,
}

pub fn flux_jump(u: &Field, deltas: &[f64]) -> Result<Vec<FluxJumpSample>, FbError> {
    let grid = u.grid();
    if grid.dim() != 3 {
        return Err(FbError::UnsupportedDimension(grid.dim()));
    }
    for &d in deltas {
        if !(d > 0.0) {
            return Err(FbError::NonpositiveDelta(d));
        }
    }
    let grad = gradient(u);
    let sample_grad = |p: &[f64; 3]| -> [f64; 3] {
        [
            sample_slice(grid, grad.component(0), p),
            sample_slice(grid, grad.component(1), p),
            sample_slice(grid, grad.component(2), p),
        ]
    };
    let max_h = grid.max_spacing();

    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let surf_p = level_set(u, 1.0 + delta)?;
        let surf_m = level_set(u, 1.0 - delta)?;
        if surf_p.facets.is_empty() || surf_m.facets.is_empty() {
            out.push(FluxJumpSample {
                delta,
                mean: None,
                spread: 0.0,
                matched_area_fraction: 0.0,
                resolved: false,
                warning: surf_p.facets.len() != surf_m.facets.len(),
                plus_facets: surf_p.facets.len(),
                minus_facets: surf_m.facets.len(),
            });
            continue;
        }

        // hash minus centroids on a uniform bin lattice
        let bin = 2.0 * max_h;
        let key = |p: &[f64; 3]| -> (i64, i64, i64) {
            (
                (p[0] / bin).floor() as i64,
                (p[1] / bin).floor() as i64,
                (p[2] / bin).floor() as i64,
            )
        };
        let mut bins: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (idx, f) in surf_m.facets.iter().enumerate() {
            bins.entry(key(&f.centroid)).or_default().push(idx);
        }

        let mut wsum = 0.0;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut matched_area = 0.0;
        let mut total_area = 0.0;
        let mut grad_scale_acc = 0.0;
        for f in &surf_p.facets {
            total_area += f.area;
            let g = sample_grad(&f.centroid);
            let gnorm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            grad_scale_acc += f.area * gnorm;
            if gnorm < 1e-12 {
                continue;
            }
            let cap = 3.0 * delta / gnorm;
            let travel = 2.0 * delta / gnorm;
            let target = [
                f.centroid[0] - travel * g[0] / gnorm,
                f.centroid[1] - travel * g[1] / gnorm,
                f.centroid[2] - travel * g[2] / gnorm,
            ];
            // nearest minus centroid to the predicted landing point
            let reach = (cap / bin).ceil() as i64 + 1;
            let (bx, by, bz) = key(&target);
            let mut best: Option<(f64, usize)> = None;
            for dx in -reach..=reach {
                for dy in -reach..=reach {
                    for dz in -reach..=reach {
                        if let Some(list) = bins.get(&(bx + dx, by + dy, bz + dz)) {
                            for &mi in list {
                                let c = &surf_m.facets[mi].centroid;
                                let d2 = (c[0] - target[0]).powi(2)
                                    + (c[1] - target[1]).powi(2)
                                    + (c[2] - target[2]).powi(2);
                                if best.map_or(true, |(bd, _)| d2 < bd) {
                                    best = Some((d2, mi));
                                }
                            }
                        }
                    }
                }
            }
            if let Some((d2, mi)) = best {
                let partner = &surf_m.facets[mi];
                let total_travel = {
                    let c = &partner.centroid;
                    ((c[0] - f.centroid[0]).powi(2)
                        + (c[1] - f.centroid[1]).powi(2)
                        + (c[2] - f.centroid[2]).powi(2))
                    .sqrt()
                };
                let _ = d2;
                if total_travel <= cap {
                    let gp = sample_grad(&f.centroid);
                    let gm = sample_grad(&partner.centroid);
                    let jump = (gp[0] * gp[0] + gp[1] * gp[1] + gp[2] * gp[2])
                        - (gm[0] * gm[0] + gm[1] * gm[1] + gm[2] * gm[2]);
                    let w = f.area;
                    wsum += w;
                    let d = jump - mean;
                    mean += w / wsum * d;
                    m2 += w * d * (jump - mean);
                    matched_area += f.area;
                }
            }
        }
        let matched_area_fraction = if total_area > 0.0 {
            matched_area / total_area
        } else {
            0.0
        };
        let grad_scale = if total_area > 0.0 {
            grad_scale_acc / total_area
        } else {
            0.0
        };
        out.push(FluxJumpSample {
            delta,
            mean: if wsum > 0.0 { Some(mean) } else { None },
            spread: if wsum > 0.0 { (m2 / wsum).max(0.0).sqrt() } else { 0.0 },
            matched_area_fraction,
            resolved: delta >= 2.0 * max_h * grad_scale,
            warning: matched_area_fraction < 0.8,
            plus_facets: surf_p.facets.len(),
            minus_facets: surf_m.facets.len(),
        });
    }
    Ok(out)
}

/// One observation of the linear-growth constant: a phase node at physical
/// distance r from the complement, with alpha = (u - 1)/r.
#[derive(Debug, Clone, Serialize)]
pub struct ScanSample {
    pub position: Vec<f64>,
    pub r: f64,
    pub alpha: f64,
}

/// Nondegeneracy scan over the phase region.
#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    /// Minimum growth constant over all samples; None when the phase is
    /// empty or no sample lies within the scan window.
    pub min_alpha: Option<f64>,
    /// Ten times the slope resolvable from rounding at one mesh width; a
    /// meaningful minimum must clear this floor.
    pub noise_floor: f64,
    /// Lower end of the sampled radius window.
    pub r_min: f64,
    pub samples: Vec<ScanSample>,
}

/// For every interior node in the phase {u > 1}: the distance r to the
/// nearest node with u <= 1 and the growth ratio (u - 1)/r, reported for r
/// up to r0. The node-set distance overestimates the region distance by up
/// to one cell diagonal, which would drive the ratio to zero on nodes
/// hugging the interface, so samples start at a few cells out
/// (r_min = min(4 max_h, r0/2)). The growth constant itself is existential:
/// the scan reports the empirical minimum rather than asserting a target.
pub fn nondegeneracy_scan(u: &Field, r0: f64) -> Result<ScanReport, FbError> {
    let grid = u.grid();
    let max_h = grid.max_spacing();
    if !(r0 > 2.0 * max_h) {
        return Err(FbError::ScanRadiusTooSmall { r0, h: max_h });
    }
    let r_min = (4.0 * max_h).min(0.5 * r0);
    let sites: Vec<bool> = u.values().iter().map(|&v| v <= 1.0).collect();
    let dist_sq = distance_transform_sq(grid, &sites);
    let mut samples = Vec::new();
    let mut min_alpha: Option<f64> = None;
    for i in 0..grid.len() {
        if grid.is_interior(i) && u.values()[i] > 1.0 {
            let r = dist_sq[i].sqrt();
            if r >= r_min && r <= r0 {
                let alpha = (u.values()[i] - 1.0) / r;
                min_alpha = Some(min_alpha.map_or(alpha, |m: f64| m.min(alpha)));
                samples.push(ScanSample {
                    position: grid.position(i),
                    r,
                    alpha,
                });
            }
        }
    }
    Ok(ScanReport {
        min_alpha,
        noise_floor: 10.0 * 1e-12 / max_h,
        r_min,
        samples,
    })
}

/// Exact Euclidean squared-distance transform to a site set on the node
/// lattice (separable lower-envelope scan per axis, anisotropic spacing).
pub fn distance_transform_sq(grid: &Grid, sites: &[bool]) -> Vec<f64> {
    const FAR: f64 = 1e300;
    let mut d: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let dim = grid.dim();
    let nodes = grid.nodes();
    let strides = grid.strides();
    for axis in 0..dim {
        let m = nodes[axis];
        let h = grid.spacing()[axis];
        let stride = strides[axis];
        let mut f = vec![0.0_f64; m];
        let mut out_line = vec![0.0_f64; m];
        let mut v = vec![0usize; m + 1];
        let mut z = vec![0.0_f64; m + 1];
        // iterate all lines along this axis
        let mut idx = vec![0usize; dim];
        let total = grid.len();
        for flat in 0..total {
            if idx[axis] == 0 {
                for k in 0..m {
                    f[k] = d[flat + k * stride];
                }
                lower_envelope(&f, h, &mut v, &mut z, &mut out_line);
                for k in 0..m {
                    d[flat + k * stride] = out_line[k];
                }
            }
            // advance multi-index
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < nodes[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
    d
}

/// 1-D squared-distance lower envelope (parabola scan) with spacing h.
fn lower_envelope(f: &[f64], h: f64, v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let m = f.len();
    let x = |i: usize| i as f64 * h;
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..m {
        loop {
            let p = v[k];
            let s = ((f[q] + x(q) * x(q)) - (f[p] + x(p) * x(p))) / (2.0 * x(q) - 2.0 * x(p));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for q in 0..m {
        while z[k + 1] < x(q) {
            k += 1;
        }
        let p = v[k];
        let dx = x(q) - x(p);
        out[q] = dx * dx + f[p];
    }
}
