//! Approximation errors of the discretised problem: the quantization error
//! `W₁(μ, ν)` of a discrete target against its density, and the blur bound
//! for a discrete measure spread uniformly over square pixels.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{subpixel_center, NONE};
use crate::measures::{DensityGrid, DiscreteMeasure};
use crate::multiscale::{solve_multiscale, HierarchyOptions};
use crate::optimizer::SolverConfig;

/// Mean distance from the centre of the unit square to a uniform point in it.
pub const KAPPA: f64 = 0.382_597_858_232_106_1;

/// Default tolerance on pulled-back cell masses in [`quantization_error_bound`].
pub const DEFAULT_ASSIGNMENT_MASS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    QuantizationExact,
    QuantizationBound,
    BlurBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorReport {
    pub value: f64,
    pub kind: ErrorKind,
}

/// `W₁(fine, nu)`, computed with the semi-discrete solver.
pub fn quantization_error_exact(
    fine: &DensityGrid,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
    opts: &HierarchyOptions,
) -> Result<ErrorReport> {
    let report = solve_multiscale(fine, nu, cfg, opts)?;
    let finest = &report.finest;
    if !finest.converged {
        return Err(Error::NotConverged(format!(
            "quantization error solve stopped ({:?}) with mistransported mass {}",
            finest.termination_reason, finest.final_mistransported_mass
        )));
    }
    Ok(ErrorReport {
        value: finest.w1_cost,
        kind: ErrorKind::QuantizationExact,
    })
}

/// Cost of moving `fine` onto `nu` along a given assignment.
///
/// `assignment` covers the `k`-refined raster of `fine` row-major from the top
/// (`k = 1` is a plain pixel map, a solver partition uses its own `k`).
/// Zero-mass entries are ignored and may hold [`NONE`]. Every atom must
/// receive its mass within `mass_tol`.
pub fn quantization_error_bound(
    fine: &DensityGrid,
    nu: &DiscreteMeasure,
    assignment: &[u32],
    k: usize,
    mass_tol: f64,
) -> Result<ErrorReport> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "subpixel factor must be at least 1".into(),
        ));
    }
    let width = fine.nx() * k;
    let expected = width * fine.ny() * k;
    if assignment.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: assignment.len(),
        });
    }
    let n = nu.len();
    let sub_area = (fine.side() / k as f64).powi(2);
    let mut pulled = vec![0.0; n];
    let mut value = 0.0;
    for row in 0..fine.ny() {
        for col in 0..fine.nx() {
            let v = fine.value(col, row);
            if v <= 0.0 {
                continue;
            }
            let m = v * sub_area;
            for sr in 0..k {
                for sc in 0..k {
                    let (fx, fy) = (col * k + sc, row * k + sr);
                    let a = assignment[fy * width + fx];
                    if a == NONE || a as usize >= n {
                        return Err(Error::Malformed(format!(
                            "pixel ({col}, {row}) carries mass but is assigned to no atom"
                        )));
                    }
                    let j = a as usize;
                    pulled[j] += m;
                    value += m * subpixel_center(fine, k, fx, fy).dist(nu.points()[j]);
                }
            }
        }
    }
    for (j, (p, q)) in pulled.iter().zip(nu.masses()).enumerate() {
        if (p - q).abs() > mass_tol {
            return Err(Error::Malformed(format!(
                "assignment gives atom {j} mass {p}, expected {q} (tolerance {mass_tol})"
            )));
        }
    }
    Ok(ErrorReport {
        value,
        kind: ErrorKind::QuantizationBound,
    })
}

/// Upper bound on `W₁` between `mu_discrete` and the measure obtained by
/// spreading each atom uniformly over a square of side `pixel_side`.
pub fn blur_error_bound(mu_discrete: &DiscreteMeasure, pixel_side: f64) -> Result<ErrorReport> {
    if !(pixel_side > 0.0 && pixel_side.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "pixel side {pixel_side} must be positive"
        )));
    }
    Ok(ErrorReport {
        value: mu_discrete.total_mass() * pixel_side * KAPPA,
        kind: ErrorKind::BlurBound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::synthetic::uniform_grid;
    use crate::measures::Bounds;
    use crate::optimizer::minimize;
    use crate::point::Point;

    /// Midpoint rule for the mean of `‖x‖` over `[-1/2, 1/2]²`, by symmetry on one quadrant.
    fn kappa_quadrature(n: usize) -> f64 {
        let h = 0.5 / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) * h;
            for j in 0..n {
                let y = (j as f64 + 0.5) * h;
                s += x.hypot(y);
            }
        }
        4.0 * s * h * h
    }

    #[test]
    fn kappa_matches_quadrature_and_closed_form() {
        assert!((KAPPA - kappa_quadrature(4000)).abs() < 1e-6);
        let closed = (2f64.sqrt() + 1f64.asinh()) / 6.0;
        assert!((KAPPA - closed).abs() < 1e-15);
    }

    fn unit() -> Bounds {
        Bounds::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn blur_examples() {
        let one = DiscreteMeasure::new(vec![Point::new(0.0, 0.0)], vec![1.0]).unwrap();
        assert!((blur_error_bound(&one, 1.0).unwrap().value - 0.3825978).abs() < 1e-6);
        let ten = DiscreteMeasure::new(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)],
            vec![4.0, 6.0],
        )
        .unwrap();
        let r = blur_error_bound(&ten, 0.01).unwrap();
        assert!((r.value - 0.03825978).abs() < 1e-8);
        assert_eq!(r.kind, ErrorKind::BlurBound);
        let a = blur_error_bound(&one, 1e-3).unwrap().value;
        let b = blur_error_bound(&one, 2e-3).unwrap().value;
        assert_eq!(b, 2.0 * a);
        assert!(blur_error_bound(&one, 0.0).is_err());
    }

    #[test]
    fn exact_error_for_centre_atom() {
        let g = uniform_grid(unit(), 16, 16, 1.0).unwrap();
        let nu = DiscreteMeasure::new(vec![Point::new(0.5, 0.5)], vec![1.0]).unwrap();
        let r = quantization_error_exact(
            &g,
            &nu,
            &SolverConfig::default(),
            &HierarchyOptions::default(),
        )
        .unwrap();
        assert_eq!(r.kind, ErrorKind::QuantizationExact);
        assert!((r.value - KAPPA).abs() < 1e-3, "{}", r.value);
    }

    #[test]
    fn atoms_at_pixel_centres() {
        let g = DensityGrid::new(unit(), 4, 4, (1..=16).map(f64::from).collect()).unwrap();
        let (pts, masses) = g.positive_pixels();
        let nu = DiscreteMeasure::new(pts, masses).unwrap();
        let identity: Vec<u32> = (0..16).collect();
        let r =
            quantization_error_bound(&g, &nu, &identity, 1, DEFAULT_ASSIGNMENT_MASS_TOL).unwrap();
        assert_eq!(r.value, 0.0);
        let diag = g.side() * 2f64.sqrt() / 2.0;
        let exact = quantization_error_exact(
            &g,
            &nu,
            &SolverConfig::default(),
            &HierarchyOptions::default(),
        )
        .unwrap();
        assert!(exact.value <= diag * g.total_mass());
    }

    #[test]
    fn optimal_assignment_is_tight_and_swaps_are_worse() {
        let g = uniform_grid(unit(), 16, 16, 1.0).unwrap();
        let nu = DiscreteMeasure::new(
            vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let cfg = SolverConfig::default().with_epsilon(1e-3);
        let solve = minimize(&g, &nu, &[0.0, 0.0], &cfg).unwrap();
        let p = &solve.partition;
        let tol = cfg.epsilon;
        let tight = quantization_error_bound(&g, &nu, &p.assignment, p.k, tol).unwrap();
        let exact = quantization_error_exact(&g, &nu, &cfg, &HierarchyOptions::default()).unwrap();
        let diam = g.bounds().diameter();
        assert!((tight.value - exact.value).abs() <= 2.0 * cfg.epsilon * diam);
        let swapped: Vec<u32> = p
            .assignment
            .iter()
            .map(|&a| if a == NONE { a } else { 1 - a })
            .collect();
        let worse = quantization_error_bound(&g, &nu, &swapped, p.k, tol).unwrap();
        assert!(worse.value > exact.value + 0.1);
    }

    #[test]
    fn bound_rejects_bad_assignments() {
        let g = uniform_grid(unit(), 2, 2, 1.0).unwrap();
        let nu = DiscreteMeasure::new(
            vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let tol = DEFAULT_ASSIGNMENT_MASS_TOL;
        assert!(quantization_error_bound(&g, &nu, &[0, 1, 0, 1], 1, tol).is_ok());
        assert!(quantization_error_bound(&g, &nu, &[0, 0, 0, 1], 1, tol).is_err());
        assert!(quantization_error_bound(&g, &nu, &[0, 1, 0], 1, tol).is_err());
        assert!(quantization_error_bound(&g, &nu, &[0, 1, NONE, 1], 1, tol).is_err());
        assert!(quantization_error_bound(&g, &nu, &[0, 1, 2, 1], 1, tol).is_err());
    }
}
