//! Exact direct solver for the compact discrete Laplacian with zero
//! Dirichlet data on a box, via per-axis type-I sine transforms.
//!
//! Used for Poisson problems (barrier fields), inverse power iteration, and
//! as the SPD preconditioner inside the nonlinear solver.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

struct AxisTransform {
    /// Interior node count along the axis.
    m: usize,
    fft: Arc<dyn Fft<f64>>,
    /// Discrete 1-D eigenvalues (4/h^2) sin^2(pi j / (2(m+1))), j = 1..=m.
    eigs: Vec<f64>,
}

/// Direct solver bound to one grid; reusable across many right-hand sides.
pub struct PoissonSolver {
    grid: Arc<Grid>,
    axes: Vec<AxisTransform>,
}

impl PoissonSolver {
    pub fn new(grid: &Arc<Grid>) -> PoissonSolver {
        let mut planner = FftPlanner::new();
        let axes = (0..grid.dim())
            .map(|a| {
                let m = grid.nodes()[a] - 2;
                let h = grid.spacing()[a];
                let eigs = (1..=m)
                    .map(|j| {
                        let s = (std::f64::consts::PI * j as f64 / (2.0 * (m + 1) as f64)).sin();
                        4.0 / (h * h) * s * s
                    })
                    .collect();
                AxisTransform {
                    m,
                    fft: planner.plan_fft_forward(2 * (m + 1)),
                    eigs,
                }
            })
            .collect();
        PoissonSolver {
            grid: grid.clone(),
            axes,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Solves -lap(w) = rhs (interior rows; boundary of w is zero).
    /// `rhs` and `out` are full node arrays; boundary entries of `rhs` are
    /// ignored.
    pub fn solve_into(&self, rhs: &[f64], out: &mut [f64]) {
        assert_eq!(rhs.len(), self.grid.len());
        assert_eq!(out.len(), self.grid.len());
        out.copy_from_slice(rhs);
        for (i, v) in out.iter_mut().enumerate() {
            if self.grid.is_boundary(i) {
                *v = 0.0;
            }
        }
        let dim = self.grid.dim();
        for a in 0..dim {
            self.transform_axis(a, out);
        }
        self.scale_modes(out);
        let mut norm = 1.0;
        for (a, ax) in self.axes.iter().enumerate() {
            self.transform_axis(a, out);
            norm *= 2.0 / (ax.m + 1) as f64;
        }
        for (i, v) in out.iter_mut().enumerate() {
            if self.grid.is_interior(i) {
                *v *= norm;
            } else {
                *v = 0.0;
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rhs.len()];
        self.solve_into(rhs, &mut out);
        out
    }

    fn scale_modes(&self, data: &mut [f64]) {
        let grid = &self.grid;
        let dim = grid.dim();
        let nodes = grid.nodes();
        let mut idx = vec![0usize; dim];
        for v in data.iter_mut() {
            let interior = idx.iter().zip(nodes).all(|(&i, &n)| i > 0 && i + 1 < n);
            if interior {
                let mut lam = 0.0;
                for a in 0..dim {
                    lam += self.axes[a].eigs[idx[a] - 1];
                }
                *v /= lam;
            }
            advance(&mut idx, nodes);
        }
    }

    /// In-place DST-I along one axis for every interior line.
    fn transform_axis(&self, axis: usize, data: &mut [f64]) {
        let grid = &self.grid;
        let ax = &self.axes[axis];
        let m = ax.m;
        let len = 2 * (m + 1);
        let stride = grid.strides()[axis];
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        let mut scratch = vec![Complex::new(0.0, 0.0); ax.fft.get_inplace_scratch_len()];

        // Iterate over all lines: nodes with axis-index 1, interior in
        // the transverse directions.
        let dim = grid.dim();
        let nodes = grid.nodes();
        let mut idx = vec![0usize; dim];
        for flat in 0..grid.len() {
            let mut on_line_start = idx[axis] == 1;
            if on_line_start {
                for b in 0..dim {
                    if b != axis && (idx[b] == 0 || idx[b] + 1 == nodes[b]) {
                        on_line_start = false;
                        break;
                    }
                }
            }
            if on_line_start {
                let base = flat - stride;
                for z in buf.iter_mut() {
                    *z = Complex::new(0.0, 0.0);
                }
                for k in 1..=m {
                    let v = data[base + k * stride];
                    buf[k] = Complex::new(v, 0.0);
                    buf[len - k] = Complex::new(-v, 0.0);
                }
                ax.fft.process_with_scratch(&mut buf, &mut scratch);
                for k in 1..=m {
                    data[base + k * stride] = -buf[k].im / 2.0;
                }
            }
            advance(&mut idx, nodes);
        }
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
