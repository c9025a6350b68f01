//! Source and target measures.
//!
//! The source measure is a piecewise-constant density on a rectangle of
//! square pixels ([`DensityGrid`]); the target measure is a finite set of
//! weighted atoms ([`DiscreteMeasure`]). Masses are arbitrary positive reals:
//! nothing downstream assumes probability measures.

mod io;
pub mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::Point;

pub use io::{
    load_density, load_density_csv, load_measure_csv, parse_measure_csv, parse_pgm, read_pgm,
    write_density_csv, write_measure_csv, write_pgm, DensitySource, Pgm,
};

/// Relative tolerance for the pixel squareness check.
pub const SQUARE_PIXEL_RTOL: f64 = 1e-9;

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite bounds {b}")));
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::InvalidArgument(format!("empty rectangle {b}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Rectangle anchored at the origin whose longer side has length one and whose
    /// pixels are square for an `nx × ny` image.
    pub fn unit_aspect(nx: usize, ny: usize) -> Self {
        let m = nx.max(ny) as f64;
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: nx as f64 / m,
            y_max: ny as f64 / m,
        }
    }
}

impl fmt::Display for Bounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

impl FromStr for Bounds {
    type Err = Error;

    /// Parses `x0,y0,x1,y1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("bounds `{s}`: {e}")))?;
        match parts[..] {
            [x0, y0, x1, y1] => Bounds::new(x0, y0, x1, y1),
            _ => Err(Error::InvalidArgument(format!(
                "bounds `{s}`: expected four comma-separated numbers"
            ))),
        }
    }
}

/// Piecewise-constant density on a grid of square pixels.
///
/// `values` is row-major with the first row at the top (largest `y`). A value
/// is a density level, i.e. mass per unit area; the mass of a pixel is its
/// value times the pixel area.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    bounds: Bounds,
    nx: usize,
    ny: usize,
    side: f64,
    values: Vec<f64>,
    total_mass: f64,
}

impl DensityGrid {
    pub fn new(bounds: Bounds, nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Malformed(format!("empty grid {nx}x{ny}")));
        }
        if values.len() != nx * ny {
            return Err(Error::DimensionMismatch {
                expected: nx * ny,
                actual: values.len(),
            });
        }
        let bounds = Bounds::new(bounds.x_min, bounds.y_min, bounds.x_max, bounds.y_max)?;
        let side_x = bounds.width() / nx as f64;
        let side_y = bounds.height() / ny as f64;
        if (side_x - side_y).abs() > SQUARE_PIXEL_RTOL * side_x.max(side_y) {
            return Err(Error::NonSquarePixels { side_x, side_y });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Malformed(format!(
                "density value {value} at index {index} is negative or not finite"
            )));
        }
        let area = side_x * side_x;
        let total_mass: f64 = values.iter().map(|v| v * area).sum();
        if !(total_mass.is_finite() && total_mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(Self {
            bounds,
            nx,
            ny,
            side: side_x,
            values,
            total_mass,
        })
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn pixel_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Pixel side length.
    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn pixel_area(&self) -> f64 {
        self.side * self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.nx + col]
    }

    pub fn pixel_mass(&self, index: usize) -> f64 {
        self.values[index] * self.pixel_area()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Centre of pixel `(col, row)`; row 0 is the top row.
    pub fn pixel_center(&self, col: usize, row: usize) -> Point {
        Point::new(
            self.bounds.x_min + (col as f64 + 0.5) * self.side,
            self.bounds.y_max - (row as f64 + 0.5) * self.side,
        )
    }

    pub fn positive_pixel_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Pixel centres and masses of all positive pixels, in row-major order.
    pub fn positive_pixels(&self) -> (Vec<Point>, Vec<f64>) {
        let area = self.pixel_area();
        let mut points = Vec::new();
        let mut masses = Vec::new();
        for row in 0..self.ny {
            for col in 0..self.nx {
                let v = self.value(col, row);
                if v > 0.0 {
                    points.push(self.pixel_center(col, row));
                    masses.push(v * area);
                }
            }
        }
        (points, masses)
    }

    /// Multiplies every density value by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale factor {factor} must be positive"
            )));
        }
        Self::new(
            self.bounds,
            self.nx,
            self.ny,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    /// Rescales the density so that its total mass equals `target_mass`.
    pub fn normalized(&self, target_mass: f64) -> Result<Self> {
        if !(target_mass.is_finite() && target_mass > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "target mass {target_mass} must be positive"
            )));
        }
        self.scaled(target_mass / self.total_mass)
    }
}

/// Finitely supported measure `Σ_j m_j δ_{y_j}` with distinct points and positive masses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    points: Vec<Point>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                actual: masses.len(),
            });
        }
        if points.is_empty() {
            return Err(Error::Malformed("measure has no support points".into()));
        }
        if let Some((index, &value)) = masses
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.is_finite() && **m > 0.0))
        {
            return Err(Error::InvalidMass { index, value });
        }
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            if !p.is_finite() {
                return Err(Error::Malformed(format!(
                    "non-finite point ({}, {})",
                    p.x, p.y
                )));
            }
            if !seen.insert(p.key()) {
                return Err(Error::DuplicatePoints { x: p.x, y: p.y });
            }
        }
        Ok(Self { points, masses })
    }

    /// Measure with the given points and equal masses summing to `total_mass`.
    pub fn uniform(points: Vec<Point>, total_mass: f64) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![total_mass / n as f64; n])?.normalized(total_mass)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale factor {factor} must be positive"
            )));
        }
        Self::new(
            self.points.clone(),
            self.masses.iter().map(|m| m * factor).collect(),
        )
    }

    /// Rescales the masses to sum to `target_mass`; the last mass absorbs rounding.
    pub fn normalized(&self, target_mass: f64) -> Result<Self> {
        if !(target_mass.is_finite() && target_mass > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "target mass {target_mass} must be positive"
            )));
        }
        let factor = target_mass / self.total_mass();
        let mut masses: Vec<f64> = self.masses.iter().map(|m| m * factor).collect();
        let n = masses.len();
        let head: f64 = masses[..n - 1].iter().sum();
        let last = target_mass - head;
        if last > 0.0 && (last - masses[n - 1]).abs() <= 1e-12 * target_mass {
            masses[n - 1] = last;
        }
        Self::new(self.points.clone(), masses)
    }

    /// Sum of two measures; atoms at identical locations are merged.
    pub fn add(&self, other: &DiscreteMeasure) -> DiscreteMeasure {
        let mut points = self.points.clone();
        let mut masses = self.masses.clone();
        let index: std::collections::HashMap<_, _> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.key(), i))
            .collect();
        for (p, m) in other.points.iter().zip(&other.masses) {
            match index.get(&p.key()) {
                Some(&i) => masses[i] += m,
                None => {
                    points.push(*p);
                    masses.push(*m);
                }
            }
        }
        DiscreteMeasure { points, masses }
    }
}

/// Comparison of the total masses of the source and target measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceCheck {
    pub mu_mass: f64,
    pub nu_mass: f64,
    pub relative_gap: f64,
    pub ok: bool,
}

pub const DEFAULT_BALANCE_TOL: f64 = 1e-6;

pub fn check_balance(mu: &DensityGrid, nu: &DiscreteMeasure, tol: f64) -> BalanceCheck {
    balance_of(mu.total_mass(), nu.total_mass(), tol)
}

pub(crate) fn balance_of(mu_mass: f64, nu_mass: f64, tol: f64) -> BalanceCheck {
    let relative_gap = (mu_mass - nu_mass).abs() / mu_mass.max(nu_mass);
    BalanceCheck {
        mu_mass,
        nu_mass,
        relative_gap,
        ok: relative_gap <= tol,
    }
}
