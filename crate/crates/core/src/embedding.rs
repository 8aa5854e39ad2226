//! Delay embedding and phase-space occupancy grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Trajectory;
use crate::series::{mean, TimeSeries};

/// Points of equal dimension stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::precondition(
                "dim",
                "coordinate count must be a multiple of dim",
            ));
        }
        Ok(Self { dim, coords })
    }

    /// Two-dimensional cloud from paired coordinates.
    pub fn from_pairs(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::precondition("points", "coordinate lengths differ"));
        }
        let coords = xs.iter().zip(ys).flat_map(|(&x, &y)| [x, y]).collect();
        Self::new(2, coords)
    }

    /// The `(x, v)` plane of a simulated trajectory.
    pub fn phase_plane(traj: &Trajectory) -> Self {
        let coords = traj.samples.iter().flat_map(|s| [s.x, s.v]).collect();
        Self { dim: 2, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }
}

/// Points `(x[k], x[k + tau], ..., x[k + (m - 1) tau])`.
pub fn delay_embed(ts: &TimeSeries, tau: usize, m: usize) -> Result<PointCloud> {
    if tau == 0 || m == 0 {
        return Err(Error::precondition("tau", "tau and m must be >= 1"));
    }
    let span = (m - 1) * tau;
    if span >= ts.len() {
        return Err(Error::precondition(
            "tau",
            format!(
                "(m - 1) * tau = {span} must be below the series length {}",
                ts.len()
            ),
        ));
    }
    let n = ts.len() - span;
    let mut coords = Vec::with_capacity(n * m);
    for k in 0..n {
        coords.extend((0..m).map(|j| ts.values[k + j * tau]));
    }
    PointCloud::new(m, coords)
}

/// First lag at which the autocorrelation drops to zero or below, searched
/// up to a quarter of the series length.
pub fn autocorr_first_zero(values: &[f64]) -> Option<usize> {
    let m = mean(values);
    let centred: Vec<f64> = values.iter().map(|v| v - m).collect();
    let var: f64 = centred.iter().map(|v| v * v).sum();
    if var <= 0.0 {
        return None;
    }
    (1..=centred.len() / 4).find(|&lag| {
        let c: f64 = centred
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum();
        c <= 0.0
    })
}

/// Rectangle of the `(x, y)` plane covered by a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    /// Bounding box of the first two coordinates, widened by 5% per side.
    pub fn fit(points: &PointCloud) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientData("empty point set".into()));
        }
        if points.dim() < 2 {
            return Err(Error::precondition(
                "points",
                "need at least two coordinates",
            ));
        }
        let mut b = Bounds {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for p in points.iter() {
            b.x_min = b.x_min.min(p[0]);
            b.x_max = b.x_max.max(p[0]);
            b.y_min = b.y_min.min(p[1]);
            b.y_max = b.y_max.max(p[1]);
        }
        if ![b.x_min, b.x_max, b.y_min, b.y_max]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite {
                field: "points".into(),
            });
        }
        let widen = |lo: f64, hi: f64| {
            let span = hi - lo;
            let margin = if span > 0.0 {
                0.05 * span
            } else {
                0.5 * lo.abs().max(1.0)
            };
            (lo - margin, hi + margin)
        };
        (b.x_min, b.x_max) = widen(b.x_min, b.x_max);
        (b.y_min, b.y_max) = widen(b.y_min, b.y_max);
        Ok(b)
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &Bounds) -> Bounds {
        Bounds {
            x_min: self.x_min.min(other.x_min),
            x_max: self.x_max.max(other.x_max),
            y_min: self.y_min.min(other.y_min),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

/// Normalized occupancy histogram; `mass[row * bins + col]` with rows
/// along `y` and columns along `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub bounds: Bounds,
    pub bins: usize,
    pub mass: Vec<f64>,
}

impl DensityGrid {
    pub fn cell(&self, row: usize, col: usize) -> f64 {
        self.mass[row * self.bins + col]
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn occupied_cells(&self) -> usize {
        self.mass.iter().filter(|&&m| m > 0.0).count()
    }

    /// Mass of `self` on the cells occupied in `support`.
    pub fn mass_on_support(&self, support: &DensityGrid) -> Result<f64> {
        if self.bins != support.bins || self.bounds != support.bounds {
            return Err(Error::precondition("support", "grid geometry differs"));
        }
        Ok(self
            .mass
            .iter()
            .zip(&support.mass)
            .filter(|(_, s)| **s > 0.0)
            .map(|(m, _)| m)
            .sum())
    }
}

/// Histogram over auto-fitted bounds.
pub fn density_grid(points: &PointCloud, bins: usize) -> Result<DensityGrid> {
    let bounds = Bounds::fit(points)?;
    density_grid_with_bounds(points, bins, bounds)
}

/// Histogram over fixed bounds; points outside are clamped to edge cells.
pub fn density_grid_with_bounds(
    points: &PointCloud,
    bins: usize,
    bounds: Bounds,
) -> Result<DensityGrid> {
    if points.is_empty() {
        return Err(Error::InsufficientData("empty point set".into()));
    }
    if points.dim() < 2 {
        return Err(Error::precondition(
            "points",
            "need at least two coordinates",
        ));
    }
    if bins == 0 {
        return Err(Error::precondition("bins", "must be >= 1"));
    }
    if !(bounds.x_max > bounds.x_min && bounds.y_max > bounds.y_min) {
        return Err(Error::precondition("bounds", "empty rectangle"));
    }
    let index = |v: f64, lo: f64, hi: f64| -> usize {
        let f = (v - lo) / (hi - lo) * bins as f64;
        if f.is_nan() {
            0
        } else {
            (f.max(0.0) as usize).min(bins - 1)
        }
    };
    let mut counts = vec![0u64; bins * bins];
    for p in points.iter() {
        let col = index(p[0], bounds.x_min, bounds.x_max);
        let row = index(p[1], bounds.y_min, bounds.y_max);
        counts[row * bins + col] += 1;
    }
    let total = points.len() as f64;
    Ok(DensityGrid {
        bounds,
        bins,
        mass: counts.iter().map(|&c| c as f64 / total).collect(),
    })
}
