//! JSON run reports.
//!
//! Reports are deterministic apart from [`RunManifest::wall_time_s`]: maps are
//! ordered and floats are written in shortest round-trip form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bounds::ErrorReport;
use crate::error::{Error, Result};
use crate::geometry::{subpixel_center, Rasterization, NONE};
use crate::measures::{Bounds, DensityGrid, DiscreteMeasure};
use crate::multiscale::LevelSummary;
use crate::optimizer::{SolveReport, TerminationReason};
use crate::point::Point;
use crate::render::PartitionView;

/// Everything needed to rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Input role (e.g. `density`) to path.
    pub inputs: BTreeMap<String, String>,
    /// Effective configuration, defaults filled in.
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub x: f64,
    pub y: f64,
    pub mass: f64,
    /// Shift-normalised weight (the smallest is zero).
    pub weight: f64,
    /// Mass of the cell actually assigned to the site.
    pub cell_mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub bounds: Bounds,
    pub nx: usize,
    pub ny: usize,
    pub pixel_side: f64,
    pub total_mass: f64,
    /// Subpixels per pixel side.
    pub subpixels: usize,
}

/// Run-length encoded subpixel assignment, row-major from the top row.
/// Each run is `[site, length]`; empty subpixels use site `4294967295`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionRle {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<[u32; 2]>,
}

impl PartitionRle {
    pub fn encode(assignment: &[u32], width: usize, height: usize) -> Self {
        let mut runs: Vec<[u32; 2]> = Vec::new();
        for &a in assignment {
            match runs.last_mut() {
                Some(run) if run[0] == a && run[1] < u32::MAX => run[1] += 1,
                _ => runs.push([a, 1]),
            }
        }
        Self {
            width,
            height,
            runs,
        }
    }

    pub fn decode(&self) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for &[a, len] in &self.runs {
            out.extend(std::iter::repeat_n(a, len as usize));
        }
        if out.len() != self.width * self.height {
            return Err(Error::DimensionMismatch {
                expected: self.width * self.height,
                actual: out.len(),
            });
        }
        Ok(out)
    }
}

/// Cell-shape diagnostics of a goodness-of-fit partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofSummary {
    /// Per cell, ratio of the principal second moments; `null` for empty cells.
    pub eccentricity: Vec<Option<f64>>,
    pub median_eccentricity: Option<f64>,
}

impl GofSummary {
    pub fn from_partition(grid: &DensityGrid, partition: &Rasterization) -> Self {
        let eccentricity = cell_eccentricities(grid, partition);
        let mut present: Vec<f64> = eccentricity.iter().flatten().copied().collect();
        Self {
            eccentricity,
            median_eccentricity: median(&mut present),
        }
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// `λ_max / λ_min` of each cell's covariance matrix under the source density,
/// counting the spread inside every subpixel so that no cell is degenerate.
pub fn cell_eccentricities(grid: &DensityGrid, partition: &Rasterization) -> Vec<Option<f64>> {
    let n = partition.cell_mass.len();
    let k = partition.k;
    let sub = grid.side() / k as f64;
    let sub_area = sub * sub;
    // mass, first moments, second moments (xx, xy, yy) relative to the site's first subpixel
    let mut acc = vec![[0.0f64; 6]; n];
    let mut anchor: Vec<Option<Point>> = vec![None; n];
    for fy in 0..partition.height {
        for fx in 0..partition.width {
            let a = partition.assignment[fy * partition.width + fx];
            if a == NONE {
                continue;
            }
            let j = a as usize;
            let m = grid.value(fx / k, fy / k) * sub_area;
            let c = subpixel_center(grid, k, fx, fy);
            let o = *anchor[j].get_or_insert(c);
            let (dx, dy) = (c.x - o.x, c.y - o.y);
            let e = &mut acc[j];
            e[0] += m;
            e[1] += m * dx;
            e[2] += m * dy;
            e[3] += m * dx * dx;
            e[4] += m * dx * dy;
            e[5] += m * dy * dy;
        }
    }
    let within = sub * sub / 12.0;
    acc.iter()
        .map(|e| {
            if e[0] <= 0.0 {
                return None;
            }
            let (mx, my) = (e[1] / e[0], e[2] / e[0]);
            let a = e[3] / e[0] - mx * mx + within;
            let b = e[4] / e[0] - mx * my;
            let c = e[5] / e[0] - my * my + within;
            let mid = (a + c) / 2.0;
            let rad = (((a - c) / 2.0).powi(2) + b * b).sqrt();
            Some((mid + rad) / (mid - rad).max(f64::MIN_POSITIVE))
        })
        .collect()
}

/// Output of `solve` and `gof`.
#[derive(Debug, Clone, Serialize)]
pub struct SolveRecord {
    pub manifest: RunManifest,
    pub converged: bool,
    pub termination_reason: TerminationReason,
    /// Transport cost of the final partition.
    pub w1: f64,
    pub mistransported_mass: f64,
    pub epsilon: f64,
    /// Iterations on the finest level.
    pub iterations: usize,
    /// Φ evaluations over all levels.
    pub evaluations: usize,
    pub final_phi: f64,
    pub phi_history: Vec<f64>,
    pub sites: Vec<SiteRecord>,
    pub error_bounds: Vec<ErrorReport>,
    /// Per-level summaries, coarsest first; a single entry without multiscale.
    pub levels: Vec<LevelSummary>,
    pub grid: GridRecord,
    pub partition: PartitionRle,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gof: Option<GofSummary>,
}

impl SolveRecord {
    pub fn new(
        manifest: RunManifest,
        grid: &DensityGrid,
        nu: &DiscreteMeasure,
        epsilon: f64,
        report: &SolveReport,
        levels: Vec<LevelSummary>,
        evaluations: usize,
    ) -> Self {
        let p = &report.partition;
        let sites = nu
            .points()
            .iter()
            .zip(nu.masses())
            .zip(&report.final_w)
            .zip(&report.cell_mass)
            .map(|(((pt, &mass), &weight), &cell_mass)| SiteRecord {
                x: pt.x,
                y: pt.y,
                mass,
                weight,
                cell_mass,
            })
            .collect();
        Self {
            manifest,
            converged: report.converged,
            termination_reason: report.termination_reason,
            w1: report.w1_cost,
            mistransported_mass: report.final_mistransported_mass,
            epsilon,
            iterations: report.iterations,
            evaluations,
            final_phi: report.final_phi,
            phi_history: report.phi_history.clone(),
            sites,
            error_bounds: Vec::new(),
            levels,
            grid: GridRecord {
                bounds: grid.bounds(),
                nx: grid.nx(),
                ny: grid.ny(),
                pixel_side: grid.side(),
                total_mass: grid.total_mass(),
                subpixels: p.k,
            },
            partition: PartitionRle::encode(&p.assignment, p.width, p.height),
            gof: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Malformed(format!("report serialisation: {e}")))
    }
}

/// The parts of a saved report needed to draw it again.
#[derive(Debug, Clone, Deserialize)]
pub struct StoredPartition {
    pub grid: GridRecord,
    pub sites: Vec<SiteRecord>,
    pub partition: PartitionRle,
}

impl StoredPartition {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Malformed(format!("report: {e}")))
    }

    /// Decoded raster, site locations and masses, ready for a [`PartitionView`].
    pub fn unpack(&self) -> Result<(Vec<u32>, Vec<Point>, Vec<f64>)> {
        let assignment = self.partition.decode()?;
        let points = self.sites.iter().map(|s| Point::new(s.x, s.y)).collect();
        let masses = self.sites.iter().map(|s| s.mass).collect();
        Ok((assignment, points, masses))
    }

    pub fn view<'a>(
        &self,
        assignment: &'a [u32],
        points: &'a [Point],
        masses: &'a [f64],
    ) -> PartitionView<'a> {
        PartitionView {
            bounds: self.grid.bounds,
            width: self.partition.width,
            height: self.partition.height,
            assignment,
            sites: points,
            masses,
        }
    }
}
