//! Additively weighted nearest-site queries and rasterized cell assignment.
//!
//! Each pixel of the density grid is split into `k × k` subpixels. A subpixel
//! is assigned, as a whole, to the weighted Voronoi cell containing its
//! centre; per-cell masses and transport costs are then sums over subpixels.

mod kdtree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DensityGrid, Pgm};
use crate::point::Point;

pub use kdtree::{KdTree, WeightedTree};

/// Marker for subpixels without mass in [`Rasterization::assignment`].
pub const NONE: u32 = u32::MAX;

/// Target number of subpixels per site used by [`subpixel_count`].
pub const SUBPIXELS_PER_SITE: usize = 1000;

pub const DEFAULT_MAX_K: usize = 64;

/// Sites `y_j` with additive weights `w_j`, aligned by index.
#[derive(Debug, Clone, Copy)]
pub struct SiteSet<'a> {
    points: &'a [Point],
    weights: &'a [f64],
}

impl<'a> SiteSet<'a> {
    pub fn new(points: &'a [Point], weights: &'a [f64]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("site set is empty".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                actual: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite weight {w}")));
        }
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &'a [Point] {
        self.points
    }

    pub fn weights(&self) -> &'a [f64] {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Index `j` minimising `‖x − y_j‖ − w_j`; the smallest index wins ties.
pub fn weighted_argmin(x: Point, sites: &SiteSet<'_>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (j, (&y, &w)) in sites.points.iter().zip(sites.weights).enumerate() {
        let v = x.dist(y) - w;
        if v < best_v {
            best_v = v;
            best = j;
        }
    }
    best
}

/// Smallest `k ≥ 1` with `pixels · k² ≥ 1000 · n`, capped at `max_k`.
pub fn subpixel_count(n: usize, grid: &DensityGrid, max_k: usize) -> usize {
    let pixels = grid.pixel_count();
    let need = SUBPIXELS_PER_SITE * n.max(1);
    let mut k = 1;
    while pixels * k * k < need && k < max_k.max(1) {
        k += 1;
    }
    k
}

/// How many subpixels each pixel is split into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubpixelPolicy {
    /// Pick `k` with [`subpixel_count`] for the current number of sites.
    Auto { max_k: usize },
    /// Use this `k` regardless of the number of sites.
    Fixed(usize),
}

impl Default for SubpixelPolicy {
    fn default() -> Self {
        SubpixelPolicy::Auto {
            max_k: DEFAULT_MAX_K,
        }
    }
}

impl SubpixelPolicy {
    pub fn resolve(self, n: usize, grid: &DensityGrid) -> usize {
        match self {
            SubpixelPolicy::Auto { max_k } => subpixel_count(n, grid, max_k),
            SubpixelPolicy::Fixed(k) => k.max(1),
        }
    }
}

/// Point-location strategy for the weighted nearest-site queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    /// Linear scan over all sites.
    BruteForce,
    /// k-d tree search from scratch for every subpixel.
    KdTree,
    /// k-d tree search seeded with the previous subpixel's cell.
    #[default]
    KdTreeWarmStart,
}

/// Subpixel-to-site assignment with per-cell mass and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Rasterization {
    /// Subpixels per pixel side.
    pub k: usize,
    /// Width of the subpixel raster, `nx · k`.
    pub width: usize,
    /// Height of the subpixel raster, `ny · k`.
    pub height: usize,
    /// Row-major over the subpixel raster (top row first); [`NONE`] for zero-mass subpixels.
    pub assignment: Vec<u32>,
    /// Mass of the subpixels assigned to each site.
    pub cell_mass: Vec<f64>,
    /// `Σ mass · ‖centre − y_j‖` over the subpixels assigned to site `j`.
    pub cell_cost: Vec<f64>,
}

impl Rasterization {
    pub fn total_mass(&self) -> f64 {
        self.cell_mass.iter().sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.cell_cost.iter().sum()
    }

    /// Assignment as a PGM: site index as gray level, `NONE` as the maximum
    /// gray level (255, or 65535 when there are 255 sites or more).
    pub fn to_pgm(&self) -> Pgm {
        let maxval = if self.cell_mass.len() < 255 {
            255
        } else {
            65535
        };
        let data = self
            .assignment
            .iter()
            .map(|&a| if a == NONE { maxval } else { a })
            .collect();
        Pgm {
            width: self.width,
            height: self.height,
            maxval,
            data,
        }
    }
}

/// Centre of subpixel `(fx, fy)` of the `k`-refined raster; `fy = 0` is the top row.
#[inline]
pub fn subpixel_center(grid: &DensityGrid, k: usize, fx: usize, fy: usize) -> Point {
    let sub = grid.side() / k as f64;
    let b = grid.bounds();
    Point::new(
        b.x_min + (fx as f64 + 0.5) * sub,
        b.y_max - (fy as f64 + 0.5) * sub,
    )
}

/// Centres and masses of all positive-mass subpixels, in accumulation order
/// (pixels row-major, then subpixels row-major within each pixel).
pub fn subpixel_atoms(grid: &DensityGrid, k: usize) -> (Vec<Point>, Vec<f64>) {
    let sub_area = (grid.side() / k as f64).powi(2);
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for row in 0..grid.ny() {
        for col in 0..grid.nx() {
            let v = grid.value(col, row);
            if v <= 0.0 {
                continue;
            }
            for sr in 0..k {
                for sc in 0..k {
                    points.push(subpixel_center(grid, k, col * k + sc, row * k + sr));
                    masses.push(v * sub_area);
                }
            }
        }
    }
    (points, masses)
}

/// Reusable rasterizer for a fixed grid, site locations and subpixel factor.
///
/// The spatial index over the sites is built once; each call to
/// [`Rasterizer::rasterize`] only binds a new weight vector.
#[derive(Debug, Clone)]
pub struct Rasterizer<'g> {
    grid: &'g DensityGrid,
    points: Vec<Point>,
    k: usize,
    strategy: QueryStrategy,
    tree: Option<KdTree>,
}

impl<'g> Rasterizer<'g> {
    pub fn new(
        grid: &'g DensityGrid,
        points: &[Point],
        k: usize,
        strategy: QueryStrategy,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument(
                "subpixel factor must be at least 1".into(),
            ));
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument("site set is empty".into()));
        }
        let tree = match strategy {
            QueryStrategy::BruteForce => None,
            _ => Some(KdTree::build(points)),
        };
        Ok(Self {
            grid,
            points: points.to_vec(),
            k,
            strategy,
            tree,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &'g DensityGrid {
        self.grid
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn rasterize(&self, weights: &[f64]) -> Result<Rasterization> {
        let sites = SiteSet::new(&self.points, weights)?;
        let grid = self.grid;
        let k = self.k;
        let (nx, ny) = (grid.nx(), grid.ny());
        let width = nx * k;
        let height = ny * k;
        let mut assignment = vec![NONE; width * height];

        let weighted = self.tree.as_ref().map(|t| t.with_weights(weights));
        let warm = self.strategy == QueryStrategy::KdTreeWarmStart;
        let max_abs_w = weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
        // farthest subpixel centre from its pixel centre
        let reach = grid.pixel_center(0, 0).dist(subpixel_center(grid, k, 0, 0)) * (1.0 + 1e-12);
        let points = &self.points;

        // one chunk per pixel row; rows are independent
        assignment
            .par_chunks_mut(width * k)
            .enumerate()
            .for_each(|(row, chunk)| {
                let mut hint: Option<usize> = None;
                let mut candidates: Vec<u32> = Vec::new();
                for col in 0..nx {
                    if grid.value(col, row) <= 0.0 {
                        continue;
                    }
                    let Some(tree) = &weighted else {
                        for sr in 0..k {
                            for sc in 0..k {
                                let x = subpixel_center(grid, k, col * k + sc, row * k + sr);
                                chunk[sr * width + col * k + sc] =
                                    weighted_argmin(x, &sites) as u32;
                            }
                        }
                        continue;
                    };
                    let hint_now = if warm { hint } else { None };
                    if k == 1 {
                        let j = tree.nearest(grid.pixel_center(col, row), hint_now);
                        hint = Some(j);
                        chunk[col] = j as u32;
                        continue;
                    }
                    // Values move by at most `reach` between the pixel centre and any of
                    // its subpixel centres, so only sites within 2·reach of the best
                    // value at the centre can win a subpixel.
                    let c = grid.pixel_center(col, row);
                    let (best, v) = tree.nearest_with_value(c, hint_now);
                    hint = Some(best);
                    let slack = 1e-10 * (1.0 + v.abs() + max_abs_w + reach);
                    candidates.clear();
                    tree.within(c, v + 2.0 * reach + slack, &mut candidates);
                    for sr in 0..k {
                        for sc in 0..k {
                            let (fx, fy) = (col * k + sc, row * k + sr);
                            let j = if candidates.len() == 1 {
                                candidates[0]
                            } else {
                                let x = subpixel_center(grid, k, fx, fy);
                                let mut bj = candidates[0];
                                let mut bv = x.dist(points[bj as usize]) - weights[bj as usize];
                                for &i in &candidates[1..] {
                                    let v = x.dist(points[i as usize]) - weights[i as usize];
                                    if v < bv {
                                        bv = v;
                                        bj = i;
                                    }
                                }
                                bj
                            };
                            chunk[sr * width + fx] = j;
                        }
                    }
                }
            });

        let n = self.points.len();
        let mut cell_mass = vec![0.0; n];
        let mut cell_cost = vec![0.0; n];
        let sub_area = (grid.side() / k as f64).powi(2);
        for row in 0..ny {
            for col in 0..nx {
                let v = grid.value(col, row);
                if v <= 0.0 {
                    continue;
                }
                let m = v * sub_area;
                for sr in 0..k {
                    for sc in 0..k {
                        let (fx, fy) = (col * k + sc, row * k + sr);
                        let j = assignment[fy * width + fx] as usize;
                        let x = subpixel_center(grid, k, fx, fy);
                        cell_mass[j] += m;
                        cell_cost[j] += m * x.dist(self.points[j]);
                    }
                }
            }
        }
        Ok(Rasterization {
            k,
            width,
            height,
            assignment,
            cell_mass,
            cell_cost,
        })
    }
}

/// One-shot rasterization of `grid` against `sites`.
pub fn rasterize(grid: &DensityGrid, sites: &SiteSet<'_>, k: usize) -> Result<Rasterization> {
    Rasterizer::new(grid, sites.points(), k, QueryStrategy::default())?.rasterize(sites.weights())
}
