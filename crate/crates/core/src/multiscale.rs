//! Coarse-to-fine solving.
//!
//! The target is coarsened repeatedly by weighted K-means (Lloyd's algorithm):
//! each coarse atom sits at the weighted centroid of a cluster and carries the
//! cluster's total mass. Φ is minimised on the coarsest level from `w = 0`,
//! and each optimum seeds the next finer level by giving every fine atom the
//! weight of the cluster it was merged into.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::KdTree;
use crate::measures::{DensityGrid, DiscreteMeasure};
use crate::objective::Objective;
use crate::optimizer::{minimize_objective, IterationRecord, SolveReport, SolverConfig};
use crate::oracle;
use crate::point::Point;

/// Iteration cap for Lloyd's algorithm.
pub const LLOYD_MAX_ITERATIONS: usize = 100;

/// Independent seedings per clustering; the lowest-inertia result is kept.
pub const LLOYD_RESTARTS: usize = 8;

/// Weighted mean of `members`, accumulated relative to the first member so
/// that singleton clusters reproduce their point exactly.
fn centroid(points: &[Point], masses: &[f64], members: &[usize]) -> Point {
    let anchor = points[members[0]];
    let (mut sx, mut sy, mut sm) = (0.0, 0.0, 0.0);
    for &i in members {
        let m = masses[i];
        sx += m * (points[i].x - anchor.x);
        sy += m * (points[i].y - anchor.y);
        sm += m;
    }
    Point::new(anchor.x + sx / sm, anchor.y + sy / sm)
}

fn nearest_centers(points: &[Point], centers: &[Point]) -> Vec<usize> {
    let tree = KdTree::build(centers);
    let zeros = vec![0.0; centers.len()];
    let bound = tree.with_weights(&zeros);
    points.par_iter().map(|&p| bound.nearest(p, None)).collect()
}

/// Lloyd iterations from `centers` until the assignment is stable or the
/// iteration cap is hit. Empty clusters are reseeded with the point farthest
/// from its current centre. Returns final centres and the point-to-cluster map.
pub fn weighted_kmeans(
    points: &[Point],
    masses: &[f64],
    mut centers: Vec<Point>,
    max_iterations: usize,
) -> (Vec<Point>, Vec<usize>) {
    let k = centers.len();
    let mut assignment: Vec<usize> = Vec::new();
    for _ in 0..max_iterations.max(1) {
        let mut next = nearest_centers(points, &centers);
        let mut counts = vec![0usize; k];
        next.iter().for_each(|&c| counts[c] += 1);
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[next[i]] > 1)
                .map(|i| (points[i].dist_sq(centers[next[i]]), i))
                .fold(None, |best: Option<(f64, usize)>, cand| match best {
                    Some(b) if b.0 >= cand.0 => Some(b),
                    _ => Some(cand),
                });
            if let Some((_, i)) = far {
                counts[next[i]] -= 1;
                next[i] = empty;
                counts[empty] = 1;
                centers[empty] = points[i];
            }
        }
        if next == assignment {
            break;
        }
        assignment = next;
        let mut members = vec![Vec::new(); k];
        assignment
            .iter()
            .enumerate()
            .for_each(|(i, &c)| members[c].push(i));
        centers = members
            .iter()
            .map(|m| centroid(points, masses, m))
            .collect();
    }
    (centers, assignment)
}

fn inertia(points: &[Point], masses: &[f64], centers: &[Point], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(masses)
        .zip(assignment)
        .map(|((p, m), &c)| m * p.dist_sq(centers[c]))
        .sum()
}

/// Runs Lloyd from `restarts` seedings drawn by `seed_centers` and keeps the
/// first result of lowest inertia.
fn best_of_restarts(
    points: &[Point],
    masses: &[f64],
    restarts: usize,
    rng: &mut ChaCha8Rng,
    mut seed_centers: impl FnMut(&mut ChaCha8Rng) -> Result<Vec<Point>>,
) -> Result<(Vec<Point>, Vec<usize>)> {
    let mut best: Option<(f64, Vec<Point>, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let init = seed_centers(rng)?;
        let (centers, assignment) = weighted_kmeans(points, masses, init, LLOYD_MAX_ITERATIONS);
        let e = inertia(points, masses, &centers, &assignment);
        if best.as_ref().is_none_or(|b| e < b.0) {
            best = Some((e, centers, assignment));
        }
    }
    let (_, centers, assignment) = best.expect("at least one restart");
    Ok((centers, assignment))
}

fn clustered_measure(
    centers: Vec<Point>,
    masses: &[f64],
    assignment: &[usize],
) -> Result<DiscreteMeasure> {
    let mut cluster_mass = vec![0.0; centers.len()];
    assignment
        .iter()
        .zip(masses)
        .for_each(|(&c, &m)| cluster_mass[c] += m);
    DiscreteMeasure::new(centers, cluster_mass)
}

/// Weighted k-means++ seeding: first centre drawn by mass, later ones by mass · D².
fn kmeans_plus_plus(
    points: &[Point],
    masses: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Point>> {
    let pick = |weights: &[f64], rng: &mut ChaCha8Rng| -> Result<usize> {
        let dist = WeightedIndex::new(weights)
            .map_err(|e| Error::InvalidArgument(format!("seeding: {e}")))?;
        Ok(dist.sample(rng))
    };
    let first = pick(masses, rng)?;
    let mut centers = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist_sq(points[first])).collect();
    while centers.len() < k {
        let weights: Vec<f64> = d2.iter().zip(masses).map(|(d, m)| d * m).collect();
        let next = pick(&weights, rng)?;
        let c = points[next];
        centers.push(c);
        d2.iter_mut()
            .zip(points)
            .for_each(|(d, p)| *d = d.min(p.dist_sq(c)));
    }
    Ok(centers)
}

/// Coarsens `nu` to `k` atoms by weighted K-means.
///
/// Returns the coarse measure and, for every atom of `nu`, the index of the
/// coarse atom it was merged into.
pub fn lloyd_coarsen(
    nu: &DiscreteMeasure,
    k: usize,
    seed: u64,
) -> Result<(DiscreteMeasure, Vec<usize>)> {
    let n = nu.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} must lie in 1..={n}"
        )));
    }
    if k == n {
        return Ok((nu.clone(), (0..n).collect()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (centers, assignment) =
        best_of_restarts(nu.points(), nu.masses(), LLOYD_RESTARTS, &mut rng, |rng| {
            kmeans_plus_plus(nu.points(), nu.masses(), k, rng)
        })?;
    let coarse = clustered_measure(centers, nu.masses(), &assignment)?;
    Ok((coarse, assignment))
}

/// Quantizes a density to `n` atoms by weighted K-means over pixel centres,
/// each run starting from `n` distinct pixels drawn with probability
/// proportional to mass.
pub fn quantize(grid: &DensityGrid, n: usize, seed: u64) -> Result<DiscreteMeasure> {
    let (points, masses) = grid.positive_pixels();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "support size must be at least 1".into(),
        ));
    }
    if points.len() < n {
        return Err(Error::InvalidArgument(format!(
            "cannot quantize {} positive pixels to {n} atoms",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (centers, assignment) =
        best_of_restarts(&points, &masses, LLOYD_RESTARTS, &mut rng, |rng| {
            let mut picked = rand::seq::index::sample_weighted(rng, points.len(), |i| masses[i], n)
                .map_err(|e| Error::InvalidArgument(format!("seeding: {e}")))?
                .into_vec();
            picked.sort_unstable();
            Ok(picked.iter().map(|&i| points[i]).collect())
        })?;
    clustered_measure(centers, &masses, &assignment)?.normalized(grid.total_mass())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyOptions {
    /// Each level has about `1/ratio` as many atoms as the one below.
    pub ratio: f64,
    /// Coarsening stops once a level has at most this many atoms.
    pub min_size: usize,
    pub seed: u64,
    /// Also compute the exact W₁ between consecutive levels (discrete oracle).
    pub level_gaps: bool,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        Self {
            ratio: 5.0,
            min_size: 20,
            seed: 0,
            level_gaps: false,
        }
    }
}

/// Sizes of the levels, finest first: `n, ⌈n/r⌉, ⌈n/r²⌉, …` until one is at most `min_size`.
pub fn level_sizes(n: usize, ratio: f64, min_size: usize) -> Vec<usize> {
    let mut sizes = vec![n];
    let mut cur = n;
    while cur > min_size.max(1) {
        let next = ((cur as f64 / ratio).ceil() as usize).clamp(1, cur - 1);
        sizes.push(next);
        cur = next;
    }
    sizes
}

/// `levels[0]` is the original measure; `parent_maps[l][i]` is the index in
/// `levels[l + 1]` of the cluster containing atom `i` of `levels[l]`.
#[derive(Debug, Clone, Serialize)]
pub struct Hierarchy {
    pub levels: Vec<DiscreteMeasure>,
    pub parent_maps: Vec<Vec<usize>>,
}

impl Hierarchy {
    /// Index of the coarsest level.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }
}

pub fn build_hierarchy(nu: &DiscreteMeasure, opts: &HierarchyOptions) -> Result<Hierarchy> {
    if !(opts.ratio > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "coarsening ratio {} must exceed 1",
            opts.ratio
        )));
    }
    let sizes = level_sizes(nu.len(), opts.ratio, opts.min_size);
    let mut levels = vec![nu.clone()];
    let mut parent_maps = Vec::new();
    for (l, &size) in sizes.iter().enumerate().skip(1) {
        let (coarse, parents) =
            lloyd_coarsen(&levels[l - 1], size, opts.seed.wrapping_add(l as u64))?;
        levels.push(coarse);
        parent_maps.push(parents);
    }
    Ok(Hierarchy {
        levels,
        parent_maps,
    })
}

/// `w_fine[i] = w_coarse[parent_map[i]]`.
pub fn propagate_weights(w_coarse: &[f64], parent_map: &[usize]) -> Result<Vec<f64>> {
    parent_map
        .iter()
        .map(|&p| {
            w_coarse.get(p).copied().ok_or(Error::DimensionMismatch {
                expected: w_coarse.len(),
                actual: p + 1,
            })
        })
        .collect()
}

/// Iteration callback of a multiscale solve, called with the level index.
pub type LevelLog<'a> = &'a mut dyn FnMut(usize, &IterationRecord);

/// Per-level statistics of a multiscale solve.
#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub size: usize,
    pub subpixels: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub mistransported_mass: f64,
    pub w1_cost: f64,
    /// Exact W₁ to the next finer level, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_to_finer: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiscaleReport {
    /// Result on the original target measure.
    pub finest: SolveReport,
    /// Coarsest level first.
    pub levels: Vec<LevelSummary>,
    pub total_evaluations: usize,
    #[serde(skip)]
    pub hierarchy: Hierarchy,
}

/// Solves coarse-to-fine over the hierarchy of `nu`.
pub fn solve_multiscale(
    grid: &DensityGrid,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
    opts: &HierarchyOptions,
) -> Result<MultiscaleReport> {
    solve_multiscale_logged(grid, nu, cfg, opts, None)
}

/// [`solve_multiscale`] with an iteration log; records carry the level in `log`'s first argument.
pub fn solve_multiscale_logged(
    grid: &DensityGrid,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
    opts: &HierarchyOptions,
    mut log: Option<LevelLog<'_>>,
) -> Result<MultiscaleReport> {
    cfg.validate()?;
    let hierarchy = build_hierarchy(nu, opts)?;
    let mut summaries = Vec::new();
    let mut total_evaluations = 0;
    let mut weights: Option<Vec<f64>> = None;
    let mut finest = None;
    for l in (0..hierarchy.levels.len()).rev() {
        let level = &hierarchy.levels[l];
        let w0 = match &weights {
            None => vec![0.0; level.len()],
            Some(w) => propagate_weights(w, &hierarchy.parent_maps[l])?,
        };
        let k = cfg.subpixels.resolve(level.len(), grid);
        let objective = Objective::with_strategy(grid, level, k, cfg.query)?;
        let report = match log.as_mut() {
            Some(log) => {
                let mut tagged = |r: &IterationRecord| log(l, r);
                minimize_objective(&objective, &w0, cfg, Some(&mut tagged))?
            }
            None => minimize_objective(&objective, &w0, cfg, None)?,
        };
        let gap_to_finer = if opts.level_gaps && l > 0 {
            Some(oracle::measure_w1(level, &hierarchy.levels[l - 1])?)
        } else {
            None
        };
        total_evaluations += report.evaluations;
        summaries.push(LevelSummary {
            level: l,
            size: level.len(),
            subpixels: k,
            iterations: report.iterations,
            evaluations: report.evaluations,
            converged: report.converged,
            mistransported_mass: report.final_mistransported_mass,
            w1_cost: report.w1_cost,
            gap_to_finer,
        });
        weights = Some(report.final_w.clone());
        finest = Some(report);
    }
    let finest = finest.expect("hierarchy has at least one level");
    Ok(MultiscaleReport {
        finest,
        levels: summaries,
        total_evaluations,
        hierarchy,
    })
}
