use super::AnalysisError;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// σ_axis · n^(−1/6) per axis.
    Scott,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Explicit (x_min, x_max, y_min, y_max); otherwise data bounds padded by
    /// `pad_bandwidths` bandwidths.
    pub bounds: Option<(f64, f64, f64, f64)>,
    pub pad_bandwidths: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { nx: 100, ny: 100, bounds: None, pad_bandwidths: 3.0 }
    }
}

/// Gaussian density on a regular grid of cell centres, row-major in y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub label: Option<String>,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub bandwidth: (f64, f64),
    /// `density[iy * nx + ix]`.
    pub density: Vec<f64>,
}

impl DensityGrid {
    pub fn cell_size(&self) -> (f64, f64) {
        ((self.x_max - self.x_min) / self.nx as f64, (self.y_max - self.y_min) / self.ny as f64)
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let (dx, dy) = self.cell_size();
        (self.x_min + (ix as f64 + 0.5) * dx, self.y_min + (iy as f64 + 0.5) * dy)
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.density[iy * self.nx + ix]
    }

    /// Riemann sum of the density over the grid.
    pub fn integral(&self) -> f64 {
        let (dx, dy) = self.cell_size();
        self.density.iter().sum::<f64>() * dx * dy
    }

    /// Density levels whose super-level sets hold the given fractions of the
    /// grid mass (highest-density regions), one level per fraction.
    pub fn contour_levels(&self, mass_fractions: &[f64]) -> Vec<f64> {
        let mut sorted = self.density.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sorted.iter().sum();
        mass_fractions
            .iter()
            .map(|&q| {
                let target = q.clamp(0.0, 1.0) * total;
                let mut acc = 0.0;
                for &v in &sorted {
                    acc += v;
                    if acc >= target {
                        return v;
                    }
                }
                sorted.last().copied().unwrap_or(0.0)
            })
            .collect()
    }
}

/// Default contour mass fractions.
pub const CONTOUR_MASS: [f64; 3] = [0.25, 0.5, 0.75];

fn scott(values: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    let m = values.clone().sum::<f64>() / n as f64;
    let var = if n > 1 { values.map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let h = var.sqrt() * (n as f64).powf(-1.0 / 6.0);
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

/// Product-Gaussian KDE: f(x) = (1/n) Σ w_i K_h(x − p_i). With unit weights
/// the density integrates to 1. Scott's rule falls back to 1.0 on an axis
/// with no spread.
pub fn kde_grid(
    points: &[(f64, f64)],
    weights: Option<&[f64]>,
    bandwidth: Bandwidth,
    grid: &GridSpec,
    label: Option<String>,
) -> Result<DensityGrid, AnalysisError> {
    let n = points.len();
    if n == 0 {
        return Err(AnalysisError::TooFewRows(0));
    }
    if grid.nx == 0 || grid.ny == 0 {
        return Err(AnalysisError::Config("grid must have at least one cell per axis".into()));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(AnalysisError::Dimension { expected: n, got: w.len() });
        }
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let (hx, hy) = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => (h, h),
        Bandwidth::Fixed(h) => return Err(AnalysisError::Config(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::Scott => (scott(points.iter().map(|p| p.0), n), scott(points.iter().map(|p| p.1), n)),
    };
    let (x_min, x_max, y_min, y_max) = grid.bounds.unwrap_or_else(|| {
        let fold = |f: fn(&(f64, f64)) -> f64| {
            points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (x0, x1) = fold(|p| p.0);
        let (y0, y1) = fold(|p| p.1);
        let (px, py) = (grid.pad_bandwidths * hx, grid.pad_bandwidths * hy);
        (x0 - px, x1 + px, y0 - py, y1 + py)
    });
    if !(x_max > x_min && y_max > y_min) {
        return Err(AnalysisError::Config("grid bounds are empty".into()));
    }
    let mut g = DensityGrid { label, x_min, x_max, y_min, y_max, nx: grid.nx, ny: grid.ny, bandwidth: (hx, hy), density: Vec::new() };
    let norm = 1.0 / (2.0 * PI * hx * hy * n as f64);
    let mut density = vec![0.0; grid.nx * grid.ny];
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (cx, cy) = g.cell_center(ix, iy);
            let mut s = 0.0;
            for (i, p) in points.iter().enumerate() {
                let (u, v) = ((cx - p.0) / hx, (cy - p.1) / hy);
                s += weights.map_or(1.0, |w| w[i]) * (-0.5 * (u * u + v * v)).exp();
            }
            density[iy * grid.nx + ix] = s * norm;
        }
    }
    g.density = density;
    Ok(g)
}
