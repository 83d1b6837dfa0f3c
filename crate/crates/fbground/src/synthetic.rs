//! Constructed fields: seeded random trial fields and closed-form profiles
//! used for detector sanity checks and randomized verification.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{Field, Grid};

/// Band-limited random field: a random combination of low sine modes scaled
/// to the given amplitude. Smooth at the grid scale, zero trace by
/// construction.
pub fn random_smooth(grid: &Arc<Grid>, rng: &mut ChaCha8Rng, amplitude: f64) -> Field {
    let dim = grid.dim();
    let max_mode = 3usize;
    let n_terms = 6;
    let mut terms = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        let coeff: f64 = rng.gen_range(-1.0..1.0);
        let modes: Vec<f64> = (0..dim).map(|_| rng.gen_range(1..=max_mode) as f64).collect();
        terms.push((coeff, modes));
    }
    let extents = grid.extents().to_vec();
    let raw = Field::from_fn(grid, |x| {
        terms
            .iter()
            .map(|(c, modes)| {
                c * x
                    .iter()
                    .zip(modes)
                    .zip(&extents)
                    .map(|((&xi, &m), &e)| (m * PI * xi / e).sin())
                    .product::<f64>()
            })
            .sum()
    });
    let max = raw.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    if max == 0.0 {
        raw
    } else {
        raw.scale(amplitude / max)
    }
}

/// Independent uniform node values in [lo, hi] on the interior; rough at the
/// grid scale.
pub fn random_rough(grid: &Arc<Grid>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Field {
    let mut values = vec![0.0; grid.len()];
    for (i, v) in values.iter_mut().enumerate() {
        if grid.is_interior(i) {
            *v = rng.gen_range(lo..hi);
        }
    }
    Field::from_values_unchecked(grid, values)
}

/// Centered product-of-sines bump scaled so the peak is `peak`.
pub fn sine_bump(grid: &Arc<Grid>, peak: f64) -> Field {
    let extents = grid.extents().to_vec();
    Field::from_fn(grid, |x| {
        peak * x
            .iter()
            .zip(&extents)
            .map(|(&xi, &e)| (PI * xi / e).sin())
            .product::<f64>()
    })
}

/// Radial profile with prescribed one-sided slopes at the unit level set:
/// values fall from `1 + a*r_core` at the center with slope `a` until the
/// level 1 sphere of radius `r_core`, continue with slope `b` below it, and
/// taper linearly to zero before the boundary. The level-1 interface is the
/// sphere |x - c| = r_core with |grad u| = a inside and b outside.
pub fn radial_two_slope(grid: &Arc<Grid>, center: &[f64], r_core: f64, a: f64, b: f64) -> Field {
    // taper start: below 1 by at least 2*b*r_core, then straight to zero
    let r_taper = r_core * 3.0;
    let v_taper = 1.0 - b * (r_taper - r_core);
    let min_boundary = center
        .iter()
        .zip(grid.extents())
        .map(|(&c, &e)| c.min(e - c))
        .fold(f64::INFINITY, f64::min);
    let r_zero = 0.97 * min_boundary;
    assert!(
        r_zero > r_taper && v_taper > 0.0,
        "profile does not fit the box: r_taper {r_taper}, r_zero {r_zero}, v_taper {v_taper}"
    );
    let center = center.to_vec();
    Field::from_fn(grid, |x| {
        let r = x
            .iter()
            .zip(&center)
            .map(|(&xi, &ci)| (xi - ci) * (xi - ci))
            .sum::<f64>()
            .sqrt();
        if r <= r_core {
            1.0 + a * (r_core - r)
        } else if r <= r_taper {
            1.0 - b * (r - r_core)
        } else if r < r_zero {
            v_taper * (r_zero - r) / (r_zero - r_taper)
        } else {
            0.0
        }
    })
}

/// Radial cone `peak - |x - c|` tapered to zero before the boundary; its
/// level sets are exact spheres.
pub fn radial_cone(grid: &Arc<Grid>, center: &[f64], peak: f64, taper_start: f64) -> Field {
    let min_boundary = center
        .iter()
        .zip(grid.extents())
        .map(|(&c, &e)| c.min(e - c))
        .fold(f64::INFINITY, f64::min);
    let r_zero = 0.97 * min_boundary;
    assert!(r_zero > taper_start);
    let v_taper = peak - taper_start;
    assert!(v_taper > 0.0);
    let center = center.to_vec();
    Field::from_fn(grid, |x| {
        let r = x
            .iter()
            .zip(&center)
            .map(|(&xi, &ci)| (xi - ci) * (xi - ci))
            .sum::<f64>()
            .sqrt();
        if r <= taper_start {
            peak - r
        } else if r < r_zero {
            v_taper * (r_zero - r) / (r_zero - taper_start)
        } else {
            0.0
        }
    })
}

/// Quadratic cap touching the unit level from above at the center node:
/// u = 1 + curv * |x - c|^2 near c, windowed to zero at the boundary. The
/// phase {u > 1} degenerates to a point contact at c.
pub fn quadratic_cap(grid: &Arc<Grid>, center: &[f64], curv: f64) -> Field {
    let min_boundary = center
        .iter()
        .zip(grid.extents())
        .map(|(&c, &e)| c.min(e - c))
        .fold(f64::INFINITY, f64::min);
    let r_win = 0.5 * min_boundary;
    let r_zero = 0.95 * min_boundary;
    let center = center.to_vec();
    Field::from_fn(grid, |x| {
        let r = x
            .iter()
            .zip(&center)
            .map(|(&xi, &ci)| (xi - ci) * (xi - ci))
            .sum::<f64>()
            .sqrt();
        if r <= r_win {
            1.0 + curv * r * r
        } else if r < r_zero {
            (1.0 + curv * r_win * r_win) * (r_zero - r) / (r_zero - r_win)
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn profiles_are_valid_fields() {
        let grid = Grid::new(3, &[2.0, 2.0, 2.0], &[17, 17, 17]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fields = [
            random_smooth(&grid, &mut rng, 2.0),
            random_rough(&grid, &mut rng, -1.0, 2.0),
            sine_bump(&grid, 2.5),
            radial_two_slope(&grid, &[1.0, 1.0, 1.0], 0.25, 3.0_f64.sqrt(), 1.0),
            radial_cone(&grid, &[1.0, 1.0, 1.0], 2.0, 0.6),
            quadratic_cap(&grid, &[1.0, 1.0, 1.0], 2.0),
        ];
        for f in &fields {
            for i in 0..grid.len() {
                assert!(f.values()[i].is_finite());
                if grid.is_boundary(i) {
                    assert_eq!(f.values()[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn two_slope_profile_has_prescribed_slopes() {
        let grid = Grid::new(3, &[2.0, 2.0, 2.0], &[33, 33, 33]).unwrap();
        let (a, b) = (3.0_f64.sqrt(), 1.0);
        let u = radial_two_slope(&grid, &[1.0, 1.0, 1.0], 0.3, a, b);
        // sample along the x-axis through the center
        let center = grid.flatten(&[16, 16, 16]);
        assert!(u.values()[center] > 1.0);
        let h = grid.spacing()[0];
        let at = |k: usize| u.values()[grid.flatten(&[k, 16, 16])];
        // inside the core the radial slope is a
        let slope_in = (at(16) - at(18)) / (2.0 * h);
        assert!((slope_in - a).abs() < 1e-9, "slope {slope_in}");
    }
}
