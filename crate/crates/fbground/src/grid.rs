//! Box-domain discretization: uniform node-centered grids, discrete
//! differential operators, quadrature, norms, and field I/O.
//!
//! Everything downstream (energy, solver, diagnostics) consumes these
//! primitives. Fields are node values with a zero trace on the box
//! boundary, i.e. discrete members of H^1_0.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("unsupported dimension {0}: need dim >= 3")]
    DimensionTooLow(usize),
    #[error("axis {axis} has {nodes} nodes: need at least 3 (no interior otherwise)")]
    TooFewNodes { axis: usize, nodes: usize },
    #[error("axis {axis} has nonpositive extent {extent}")]
    BadExtent { axis: usize, extent: f64 },
    #[error("expected {expected} per-axis entries, got {got}")]
    AxisCountMismatch { expected: usize, got: usize },
    #[error("field has {got} values, grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("nonzero value {value} at boundary node {index}")]
    NonzeroTrace { index: usize, value: f64 },
    #[error("field I/O: {0}")]
    Io(String),
    #[error("field file does not match grid: {0}")]
    FormatMismatch(String),
}

/// Uniform node-centered grid over a box, row-major node ordering
/// (last axis fastest).
#[derive(Debug)]
pub struct Grid {
    dim: usize,
    extents: Vec<f64>,
    nodes: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
    /// True at nodes interior in every axis.
    interior: Vec<bool>,
}

impl Grid {
    pub fn new(dim: usize, extents: &[f64], nodes: &[usize]) -> Result<Arc<Grid>, GridError> {
        if dim < 3 {
            return Err(GridError::DimensionTooLow(dim));
        }
        if extents.len() != dim {
            return Err(GridError::AxisCountMismatch {
                expected: dim,
                got: extents.len(),
            });
        }
        if nodes.len() != dim {
            return Err(GridError::AxisCountMismatch {
                expected: dim,
                got: nodes.len(),
            });
        }
        for (axis, &n) in nodes.iter().enumerate() {
            if n < 3 {
                return Err(GridError::TooFewNodes { axis, nodes: n });
            }
        }
        for (axis, &e) in extents.iter().enumerate() {
            if !(e > 0.0) || !e.is_finite() {
                return Err(GridError::BadExtent { axis, extent: e });
            }
        }
        let spacing: Vec<f64> = extents
            .iter()
            .zip(nodes)
            .map(|(&e, &n)| e / (n - 1) as f64)
            .collect();
        let mut strides = vec![0usize; dim];
        let mut acc = 1usize;
        for a in (0..dim).rev() {
            strides[a] = acc;
            acc *= nodes[a];
        }
        let len = acc;
        let mut interior = vec![false; len];
        let mut idx = vec![0usize; dim];
        for (flat, flag) in interior.iter_mut().enumerate() {
            *flag = idx
                .iter()
                .zip(nodes)
                .all(|(&i, &n)| i > 0 && i + 1 < n);
            advance(&mut idx, nodes);
            let _ = flat;
        }
        Ok(Arc::new(Grid {
            dim,
            extents: extents.to_vec(),
            nodes: nodes.to_vec(),
            spacing,
            strides,
            len,
            interior,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Box volume (product of extents).
    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    pub fn is_interior(&self, flat: usize) -> bool {
        self.interior[flat]
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        !self.interior[flat]
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    /// Multi-index of a flat node index.
    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        let mut out = vec![0usize; self.dim];
        for a in 0..self.dim {
            out[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
        out
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(&i, &s)| i * s).sum()
    }

    /// Physical coordinates of a node.
    pub fn position(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat)
            .iter()
            .zip(&self.spacing)
            .map(|(&i, &h)| i as f64 * h)
            .collect()
    }

    /// Trapezoid quadrature weight of a node (half weight per boundary axis).
    pub fn weight(&self, flat: usize) -> f64 {
        let idx = self.unflatten(flat);
        let mut w = 1.0;
        for a in 0..self.dim {
            w *= self.spacing[a];
            if idx[a] == 0 || idx[a] + 1 == self.nodes[a] {
                w *= 0.5;
            }
        }
        w
    }

    /// Volume of a single cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Distance from a node to the nearest boundary face.
    pub fn boundary_distance(&self, flat: usize) -> f64 {
        let idx = self.unflatten(flat);
        let mut d = f64::INFINITY;
        for a in 0..self.dim {
            let x = idx[a] as f64 * self.spacing[a];
            d = d.min(x).min(self.extents[a] - x);
        }
        d
    }
}

fn advance(idx: &mut [usize], nodes: &[usize]) {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < nodes[a] {
            return;
        }
        idx[a] = 0;
    }
}

/// Node values on a grid, zero on the boundary and finite everywhere.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>) -> Field {
        Field {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    /// Builds a field from a closure of node coordinates; boundary nodes are
    /// forced to zero.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Field {
        let mut values = vec![0.0; grid.len()];
        for (i, v) in values.iter_mut().enumerate() {
            if grid.is_interior(i) {
                *v = f(&grid.position(i));
            }
        }
        Field {
            grid: grid.clone(),
            values,
        }
    }

    /// Wraps raw values, validating the zero trace and finiteness.
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Field, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(GridError::NonFinite(i));
            }
            if grid.is_boundary(i) && v != 0.0 {
                return Err(GridError::NonzeroTrace { index: i, value: v });
            }
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    /// Wraps values produced by an invariant-preserving kernel. Debug builds
    /// still validate.
    pub(crate) fn from_values_unchecked(grid: &Arc<Grid>, values: Vec<f64>) -> Field {
        debug_assert!(values.len() == grid.len());
        #[cfg(debug_assertions)]
        for (i, v) in values.iter().enumerate() {
            assert!(
                v.is_finite() && (grid.is_interior(i) || *v == 0.0),
                "invalid field value {v} at node {i} (interior: {})",
                grid.is_interior(i)
            );
        }
        Field {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Applies a pointwise map on interior nodes (boundary stays zero).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        let mut values = self.values.clone();
        for (i, v) in values.iter_mut().enumerate() {
            if self.grid.is_interior(i) {
                *v = f(*v);
            }
        }
        Field {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn scale(&self, c: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// self + c * other.
    pub fn axpy(&self, c: f64, other: &Field) -> Field {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        Field {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn linf_distance(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-node tuple of `dim` reals (stored one plane per axis).
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<Grid>,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &Arc<Grid>) -> VectorField {
        VectorField {
            grid: grid.clone(),
            components: vec![vec![0.0; grid.len()]; grid.dim()],
        }
    }

    /// Builds from a closure of node coordinates returning one tuple per node.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> Vec<f64>) -> VectorField {
        let mut components = vec![vec![0.0; grid.len()]; grid.dim()];
        for i in 0..grid.len() {
            let tuple = f(&grid.position(i));
            assert_eq!(tuple.len(), grid.dim());
            for (a, comps) in components.iter_mut().enumerate() {
                comps[i] = tuple[a];
            }
        }
        VectorField {
            grid: grid.clone(),
            components,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn at(&self, flat: usize) -> Vec<f64> {
        self.components.iter().map(|c| c[flat]).collect()
    }

    pub fn magnitude_sq(&self, flat: usize) -> f64 {
        self.components.iter().map(|c| c[flat] * c[flat]).sum()
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            components: self
                .components
                .iter()
                .map(|comp| comp.iter().map(|v| c * v).collect())
                .collect(),
        }
    }
}

/// Second-order gradient: central differences at interior nodes, one-sided
/// three-point stencils on the boundary.
pub fn gradient(field: &Field) -> VectorField {
    let grid = field.grid();
    let u = field.values();
    let mut components = vec![vec![0.0; grid.len()]; grid.dim()];
    let nodes = grid.nodes().to_vec();
    let strides = grid.strides().to_vec();
    let spacing = grid.spacing().to_vec();
    let mut idx = vec![0usize; grid.dim()];
    for flat in 0..grid.len() {
        for a in 0..grid.dim() {
            let s = strides[a];
            let n = nodes[a];
            let h = spacing[a];
            let i = idx[a];
            components[a][flat] = if i > 0 && i + 1 < n {
                (u[flat + s] - u[flat - s]) / (2.0 * h)
            } else if i == 0 {
                (-3.0 * u[flat] + 4.0 * u[flat + s] - u[flat + 2 * s]) / (2.0 * h)
            } else {
                (3.0 * u[flat] - 4.0 * u[flat - s] + u[flat - 2 * s]) / (2.0 * h)
            };
        }
        advance(&mut idx, &nodes);
    }
    VectorField {
        grid: grid.clone(),
        components,
    }
}

/// (2 dim + 1)-point Laplacian at interior nodes; zero elsewhere.
pub fn laplacian(field: &Field) -> Field {
    let grid = field.grid().clone();
    let mut out = vec![0.0; grid.len()];
    laplacian_into(&grid, field.values(), &mut out);
    Field { grid, values: out }
}

/// Raw Laplacian kernel on a value slice (interior rows only).
pub fn laplacian_into(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let dim = grid.dim();
    let nodes = grid.nodes();
    let strides = grid.strides();
    let inv_h2: Vec<f64> = grid.spacing().iter().map(|h| 1.0 / (h * h)).collect();
    let mut idx = vec![0usize; dim];
    for flat in 0..grid.len() {
        if grid.is_interior(flat) {
            let mut acc = 0.0;
            for a in 0..dim {
                let s = strides[a];
                acc += (u[flat + s] - 2.0 * u[flat] + u[flat - s]) * inv_h2[a];
            }
            out[flat] = acc;
        } else {
            out[flat] = 0.0;
        }
        advance(&mut idx, nodes);
    }
}

/// Composite trapezoid quadrature of per-node samples, optionally restricted
/// to a node predicate (sharp-cut region).
pub fn integrate(samples: &[f64], grid: &Grid, region: Option<&dyn Fn(usize) -> bool>) -> f64 {
    assert_eq!(samples.len(), grid.len());
    let dim = grid.dim();
    let nodes = grid.nodes();
    let spacing = grid.spacing();
    let mut idx = vec![0usize; dim];
    let mut acc = 0.0;
    for (flat, &v) in samples.iter().enumerate() {
        let keep = region.map_or(true, |r| r(flat));
        if keep && v != 0.0 {
            let mut w = 1.0;
            for a in 0..dim {
                w *= spacing[a];
                if idx[a] == 0 || idx[a] + 1 == nodes[a] {
                    w *= 0.5;
                }
            }
            acc += w * v;
        }
        advance(&mut idx, nodes);
    }
    acc
}

/// Trapezoid L2 inner product of two node-value slices.
pub fn l2_inner(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), grid.len());
    assert_eq!(v.len(), grid.len());
    let dim = grid.dim();
    let nodes = grid.nodes();
    let spacing = grid.spacing();
    let mut idx = vec![0usize; dim];
    let mut acc = 0.0;
    for flat in 0..grid.len() {
        let p = u[flat] * v[flat];
        if p != 0.0 {
            let mut w = 1.0;
            for a in 0..dim {
                w *= spacing[a];
                if idx[a] == 0 || idx[a] + 1 == nodes[a] {
                    w *= 0.5;
                }
            }
            acc += w * p;
        }
        advance(&mut idx, nodes);
    }
    acc
}

pub fn l2_norm(grid: &Grid, u: &[f64]) -> f64 {
    l2_inner(grid, u, u).sqrt()
}

/// Face-difference Dirichlet form: the summation-by-parts companion of the
/// compact Laplacian, so that integral(-lap(u) * v) == dirichlet_form(u, v)
/// exactly for zero-trace fields.
pub fn dirichlet_form(u: &Field, v: &Field) -> f64 {
    dirichlet_form_slices(u.grid(), u.values(), v.values())
}

pub fn dirichlet_form_slices(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    let dim = grid.dim();
    let nodes = grid.nodes();
    let strides = grid.strides();
    let cell = grid.cell_volume();
    let mut acc = 0.0;
    for a in 0..dim {
        let s = strides[a];
        let inv_h2 = 1.0 / (grid.spacing()[a] * grid.spacing()[a]);
        let mut idx = vec![0usize; dim];
        let mut axis_acc = 0.0;
        for flat in 0..grid.len() {
            if idx[a] + 1 < nodes[a] {
                let du = u[flat + s] - u[flat];
                let dv = v[flat + s] - v[flat];
                axis_acc += du * dv;
            }
            advance(&mut idx, nodes);
        }
        acc += axis_acc * inv_h2 * cell;
    }
    acc
}

/// Field norms: H1 seminorm (via the gradient operator), trapezoid L2, and
/// the max-norm.
#[derive(Debug, Clone, Copy)]
pub struct Norms {
    pub h1_seminorm: f64,
    pub l2: f64,
    pub linf: f64,
}

pub fn norms(field: &Field) -> Norms {
    let grid = field.grid();
    let grad = gradient(field);
    let mag: Vec<f64> = (0..grid.len()).map(|i| grad.magnitude_sq(i)).collect();
    let h1_sq = integrate(&mag, grid, None);
    let l2 = l2_norm(grid, field.values());
    let linf = field.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    Norms {
        h1_seminorm: h1_sq.max(0.0).sqrt(),
        l2,
        linf,
    }
}

/// Multilinear interpolation of a field at an arbitrary point (clamped to
/// the box).
pub fn sample(field: &Field, point: &[f64]) -> f64 {
    sample_slice(field.grid(), field.values(), point)
}

pub fn sample_slice(grid: &Grid, values: &[f64], point: &[f64]) -> f64 {
    let dim = grid.dim();
    let mut base = vec![0usize; dim];
    let mut frac = vec![0.0f64; dim];
    for a in 0..dim {
        let h = grid.spacing()[a];
        let n = grid.nodes()[a];
        let t = (point[a] / h).clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        base[a] = i;
        frac[a] = t - i as f64;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut flat = 0usize;
        for a in 0..dim {
            let hi = (corner >> a) & 1 == 1;
            w *= if hi { frac[a] } else { 1.0 - frac[a] };
            flat += (base[a] + hi as usize) * grid.strides()[a];
        }
        if w != 0.0 {
            acc += w * values[flat];
        }
    }
    acc
}

/// Resamples a field onto another grid over the same box by multilinear
/// interpolation.
pub fn resample(field: &Field, target: &Arc<Grid>) -> Field {
    Field::from_fn(target, |x| sample(field, x))
}

/// Writes the structured-grid text dump: header `dim extents nodes`, then one
/// node value per line in row-major order.
pub fn write_field(field: &Field) -> String {
    let grid = field.grid();
    let mut out = String::new();
    let mut header = format!("{}", grid.dim());
    for e in grid.extents() {
        let _ = write!(header, " {e:.17e}");
    }
    for n in grid.nodes() {
        let _ = write!(header, " {n}");
    }
    out.push_str(&header);
    out.push('\n');
    for v in field.values() {
        let _ = writeln!(out, "{v:.17e}");
    }
    out
}

/// Parses a structured-grid text dump against an expected grid.
pub fn read_field(grid: &Arc<Grid>, text: &str) -> Result<Field, GridError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| GridError::Io("empty field file".into()))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(GridError::Io("missing header".into()));
    }
    let dim: usize = tokens[0]
        .parse()
        .map_err(|_| GridError::Io("bad dim in header".into()))?;
    if dim != grid.dim() {
        return Err(GridError::FormatMismatch(format!(
            "dim {} != {}",
            dim,
            grid.dim()
        )));
    }
    if tokens.len() != 1 + 2 * dim {
        return Err(GridError::Io("header token count".into()));
    }
    for a in 0..dim {
        let e: f64 = tokens[1 + a]
            .parse()
            .map_err(|_| GridError::Io("bad extent".into()))?;
        if (e - grid.extents()[a]).abs() > 1e-12 * grid.extents()[a].max(1.0) {
            return Err(GridError::FormatMismatch(format!(
                "extent[{a}] {e} != {}",
                grid.extents()[a]
            )));
        }
        let n: usize = tokens[1 + dim + a]
            .parse()
            .map_err(|_| GridError::Io("bad node count".into()))?;
        if n != grid.nodes()[a] {
            return Err(GridError::FormatMismatch(format!(
                "nodes[{a}] {n} != {}",
                grid.nodes()[a]
            )));
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    for line in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(
            t.parse::<f64>()
                .map_err(|_| GridError::Io(format!("bad value line: {t}")))?,
        );
    }
    if values.len() != grid.len() {
        return Err(GridError::FormatMismatch(format!(
            "value count {} != node count {}",
            values.len(),
            grid.len()
        )));
    }
    Field::from_values(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_cube(n: usize) -> Arc<Grid> {
        Grid::new(3, &[1.0, 1.0, 1.0], &[n, n, n]).unwrap()
    }

    fn random_field(grid: &Arc<Grid>, rng: &mut ChaCha8Rng) -> Field {
        let mut values = vec![0.0; grid.len()];
        for (i, v) in values.iter_mut().enumerate() {
            if grid.is_interior(i) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        Field::from_values_unchecked(grid, values)
    }

    #[test]
    fn build_grid_counts_and_spacing() {
        let g = unit_cube(5);
        assert_eq!(g.spacing(), &[0.25, 0.25, 0.25]);
        assert_eq!(g.interior_count(), 27);

        let g2 = Grid::new(3, &[2.0, 1.0, 1.0], &[9, 5, 5]).unwrap();
        assert_eq!(g2.spacing(), &[0.25, 0.25, 0.25]);
    }

    #[test]
    fn build_grid_rejects_bad_input() {
        assert!(matches!(
            Grid::new(2, &[1.0, 1.0], &[5, 5]),
            Err(GridError::DimensionTooLow(2))
        ));
        assert!(matches!(
            Grid::new(3, &[1.0, 1.0, 1.0], &[5, 2, 5]),
            Err(GridError::TooFewNodes { axis: 1, nodes: 2 })
        ));
        assert!(Grid::new(3, &[1.0, 0.0, 1.0], &[5, 5, 5]).is_err());
    }

    #[test]
    fn every_node_classified_once() {
        let g = unit_cube(6);
        let interior = g.interior_count();
        let boundary = (0..g.len()).filter(|&i| g.is_boundary(i)).count();
        assert_eq!(interior + boundary, g.len());
        assert_eq!(interior, 4 * 4 * 4);
    }

    #[test]
    fn gradient_exact_on_linear() {
        let g = unit_cube(7);
        let u = Field::from_fn(&g, |x| x[0]);
        let grad = gradient(&u);
        for i in 0..g.len() {
            if g.is_interior(i) {
                // interior stencils never touch the clamped boundary values
                let idx = g.unflatten(i);
                if idx.iter().zip(g.nodes()).all(|(&k, &n)| k > 1 && k + 2 < n) {
                    assert!((grad.component(0)[i] - 1.0).abs() < 1e-12);
                    assert!(grad.component(1)[i].abs() < 1e-12);
                    assert!(grad.component(2)[i].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_zero_on_zero_field() {
        let g = unit_cube(5);
        let u = Field::zeros(&g);
        let grad = gradient(&u);
        for a in 0..3 {
            assert!(grad.component(a).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradient_second_order_on_sine_product() {
        // max-node error vs analytic gradient shrinks ~4x when nodes double
        let errs: Vec<f64> = [17, 33]
            .iter()
            .map(|&n| {
                let g = unit_cube(n);
                let u = Field::from_fn(&g, |x| {
                    (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
                });
                let grad = gradient(&u);
                let mut err: f64 = 0.0;
                for i in 0..g.len() {
                    if !g.is_interior(i) {
                        continue;
                    }
                    let x = g.position(i);
                    let exact = [
                        PI * (PI * x[0]).cos() * (PI * x[1]).sin() * (PI * x[2]).sin(),
                        PI * (PI * x[0]).sin() * (PI * x[1]).cos() * (PI * x[2]).sin(),
                        PI * (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).cos(),
                    ];
                    for a in 0..3 {
                        err = err.max((grad.component(a)[i] - exact[a]).abs());
                    }
                }
                err
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!(
            ratio > 3.2 && ratio < 4.8,
            "convergence ratio {ratio} not ~4 (errors {errs:?})"
        );
    }

    #[test]
    fn laplacian_exact_on_quadratic() {
        let g = unit_cube(9);
        let u = Field::from_fn(&g, |x| x[0] * x[0]);
        let lap = laplacian(&u);
        for i in 0..g.len() {
            let idx = g.unflatten(i);
            // deep interior: the stencil never touches the zero-trace ring
            if idx.iter().zip(g.nodes()).all(|(&k, &n)| k > 1 && k + 2 < n) {
                assert!(
                    (lap.values()[i] - 2.0).abs() < 1e-10,
                    "lap {} at {i}",
                    lap.values()[i]
                );
            }
            if g.is_boundary(i) {
                assert_eq!(lap.values()[i], 0.0);
            }
        }
    }

    #[test]
    fn laplacian_eigenfunction_second_order() {
        let errs: Vec<f64> = [17, 33]
            .iter()
            .map(|&n| {
                let g = unit_cube(n);
                let u = Field::from_fn(&g, |x| {
                    (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
                });
                let lap = laplacian(&u);
                let mut err: f64 = 0.0;
                for i in 0..g.len() {
                    if g.is_interior(i) {
                        let rel = (-lap.values()[i] - 3.0 * PI * PI * u.values()[i]).abs()
                            / (3.0 * PI * PI);
                        err = err.max(rel);
                    }
                }
                err
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.2 && ratio < 4.8, "ratio {ratio}");
    }

    #[test]
    fn integrate_constant_and_half_volume() {
        let g = unit_cube(9);
        let ones = vec![1.0; g.len()];
        assert!((integrate(&ones, &g, None) - 1.0).abs() < 1e-14);

        let region = |i: usize| g.position(i)[0] > 0.5;
        let half = integrate(&ones, &g, Some(&region));
        assert!((half - 0.5).abs() <= g.spacing()[0] + 1e-12, "half {half}");
    }

    #[test]
    fn integrate_sine_squared_product() {
        // closed form: integral over the unit cube of prod sin^2(pi x_a) = 1/8
        let g = unit_cube(33);
        let u = Field::from_fn(&g, |x| {
            ((PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()).powi(2)
        });
        let v = integrate(u.values(), &g, None);
        assert!((v - 0.125).abs() < 4e-4, "got {v}");
    }

    #[test]
    fn integrate_linear_and_monotone() {
        let g = unit_cube(7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_field(&g, &mut rng);
        let v = random_field(&g, &mut rng);
        let sum: Vec<f64> = u
            .values()
            .iter()
            .zip(v.values())
            .map(|(a, b)| 2.0 * a + 3.0 * b)
            .collect();
        let lhs = integrate(&sum, &g, None);
        let rhs = 2.0 * integrate(u.values(), &g, None) + 3.0 * integrate(v.values(), &g, None);
        assert!((lhs - rhs).abs() < 1e-13);

        let nonneg: Vec<f64> = u.values().iter().map(|a| a.abs()).collect();
        assert!(integrate(&nonneg, &g, None) >= 0.0);
    }

    #[test]
    fn norms_zero_scaling_and_rayleigh() {
        let g = unit_cube(33);
        let zero = Field::zeros(&g);
        let n0 = norms(&zero);
        assert_eq!((n0.h1_seminorm, n0.l2, n0.linf), (0.0, 0.0, 0.0));

        let u = Field::from_fn(&g, |x| {
            (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
        });
        let n1 = norms(&u);
        let n2 = norms(&u.scale(2.0));
        assert!((n2.h1_seminorm - 2.0 * n1.h1_seminorm).abs() < 1e-12 * n2.h1_seminorm);
        assert!((n2.l2 - 2.0 * n1.l2).abs() < 1e-12);
        assert!((n2.linf - 2.0 * n1.linf).abs() < 1e-12);

        // Rayleigh quotient of the exact eigenfunction approaches 3 pi^2
        let quot = n1.h1_seminorm.powi(2) / n1.l2.powi(2);
        assert!(
            (quot - 3.0 * PI * PI).abs() / (3.0 * PI * PI) < 5e-3,
            "quot {quot}"
        );
    }

    #[test]
    fn summation_by_parts_matches_laplacian_pairing() {
        let g = unit_cube(9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let u = random_field(&g, &mut rng);
            let v = random_field(&g, &mut rng);
            let lap = laplacian(&u);
            let neg: Vec<f64> = lap.values().iter().map(|x| -x).collect();
            let lhs = l2_inner(&g, &neg, v.values());
            let rhs = dirichlet_form(&u, &v);
            let scale = rhs.abs().max(1.0);
            assert!(
                (lhs - rhs).abs() / scale < 1e-10,
                "lhs {lhs} rhs {rhs} diff {}",
                (lhs - rhs).abs()
            );
        }
    }

    #[test]
    fn field_validation() {
        let g = unit_cube(5);
        let mut vals = vec![0.0; g.len()];
        vals[0] = 1.0; // corner node
        assert!(matches!(
            Field::from_values(&g, vals),
            Err(GridError::NonzeroTrace { .. })
        ));
        let mut vals = vec![0.0; g.len()];
        let mid = g.flatten(&[2, 2, 2]);
        vals[mid] = f64::NAN;
        assert!(matches!(
            Field::from_values(&g, vals),
            Err(GridError::NonFinite(_))
        ));
    }

    #[test]
    fn field_text_roundtrip() {
        let g = unit_cube(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_field(&g, &mut rng);
        let text = write_field(&u);
        let back = read_field(&g, &text).unwrap();
        assert_eq!(u.values(), back.values());

        // truncated file rejected
        let truncated: String = text.lines().take(g.len() / 2).collect::<Vec<_>>().join("\n");
        assert!(read_field(&g, &truncated).is_err());
    }

    #[test]
    fn resample_reproduces_multilinear_values() {
        let g = unit_cube(9);
        let fine = unit_cube(17);
        let u = Field::from_fn(&g, |x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[2]));
        let v = resample(&u, &fine);
        // coarse nodes are a subset of fine nodes
        for i in 0..g.len() {
            if g.is_interior(i) {
                let idx = g.unflatten(i);
                let fidx: Vec<usize> = idx.iter().map(|&k| 2 * k).collect();
                let fi = fine.flatten(&fidx);
                assert!((v.values()[fi] - u.values()[i]).abs() < 1e-13);
            }
        }
    }
}
