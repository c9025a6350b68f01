//! The dual objective Φ, its gradient and the transport cost, all evaluated
//! on the subpixel-rasterized source measure.
//!
//! On the rasterized measure Φ is a maximum of finitely many affine functions
//! of `w`: convex and piecewise linear, with gradient `cell_mass − ν` wherever
//! no subpixel centre sits on a cell boundary.

use crate::error::{Error, Result};
use crate::geometry::{QueryStrategy, Rasterization, Rasterizer};
use crate::measures::{DensityGrid, DiscreteMeasure};

/// Φ and its gradient at one weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub phi: f64,
    /// `cell_mass[j] − ν_j`.
    pub gradient: Vec<f64>,
    pub cell_mass: Vec<f64>,
    pub cell_cost: Vec<f64>,
    /// `Σ_j cell_cost[j]`, the cost of transporting along the current partition.
    pub cost: f64,
}

impl ObjectiveValue {
    /// Builds the value from a rasterization and the target masses.
    pub fn from_rasterization(r: &Rasterization, weights: &[f64], masses: &[f64]) -> Self {
        let gradient: Vec<f64> = r
            .cell_mass
            .iter()
            .zip(masses)
            .map(|(m, nu)| -nu + m)
            .collect();
        let cost = r.total_cost();
        let phi = weights
            .iter()
            .zip(&gradient)
            .map(|(w, g)| w * g)
            .sum::<f64>()
            - cost;
        Self {
            phi,
            gradient,
            cell_mass: r.cell_mass.clone(),
            cell_cost: r.cell_cost.clone(),
            cost,
        }
    }

    pub fn mistransported_mass(&self) -> f64 {
        mistransported_mass(&self.gradient)
    }

    pub fn transport_cost(&self) -> f64 {
        self.cost
    }
}

/// `‖g‖₁ / 2`: the mass missing from, or in surplus at, the target atoms.
pub fn mistransported_mass(gradient: &[f64]) -> f64 {
    gradient.iter().map(|g| g.abs()).sum::<f64>() / 2.0
}

/// Φ for a fixed grid, target measure and subpixel factor.
#[derive(Debug, Clone)]
pub struct Objective<'g> {
    rasterizer: Rasterizer<'g>,
    nu: DiscreteMeasure,
}

impl<'g> Objective<'g> {
    pub fn new(grid: &'g DensityGrid, nu: &DiscreteMeasure, k: usize) -> Result<Self> {
        Self::with_strategy(grid, nu, k, QueryStrategy::default())
    }

    pub fn with_strategy(
        grid: &'g DensityGrid,
        nu: &DiscreteMeasure,
        k: usize,
        strategy: QueryStrategy,
    ) -> Result<Self> {
        let rasterizer = Rasterizer::new(grid, nu.points(), k, strategy)?;
        Ok(Self {
            rasterizer,
            nu: nu.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn k(&self) -> usize {
        self.rasterizer.k()
    }

    pub fn grid(&self) -> &'g DensityGrid {
        self.rasterizer.grid()
    }

    pub fn nu(&self) -> &DiscreteMeasure {
        &self.nu
    }

    pub fn evaluate(&self, weights: &[f64]) -> Result<ObjectiveValue> {
        Ok(self.evaluate_with_partition(weights)?.0)
    }

    pub fn evaluate_with_partition(
        &self,
        weights: &[f64],
    ) -> Result<(ObjectiveValue, Rasterization)> {
        if weights.len() != self.nu.len() {
            return Err(Error::DimensionMismatch {
                expected: self.nu.len(),
                actual: weights.len(),
            });
        }
        let r = self.rasterizer.rasterize(weights)?;
        let v = ObjectiveValue::from_rasterization(&r, weights, self.nu.masses());
        Ok((v, r))
    }
}

/// One-shot evaluation of Φ at `weights`.
pub fn evaluate(
    grid: &DensityGrid,
    nu: &DiscreteMeasure,
    weights: &[f64],
    k: usize,
) -> Result<ObjectiveValue> {
    Objective::new(grid, nu, k)?.evaluate(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Bounds;
    use crate::point::Point;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: usize) -> DensityGrid {
        DensityGrid::new(
            Bounds::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            n,
            n,
            vec![1.0; n * n],
        )
        .unwrap()
    }

    /// Midpoint rule for `∫_{[0,1]²} min_j ‖x − y_j‖ dx` on an `m × m` lattice.
    fn quadrature_nearest(points: &[Point], m: usize) -> f64 {
        let h = 1.0 / m as f64;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = Point::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                s += points
                    .iter()
                    .map(|p| x.dist(*p))
                    .fold(f64::INFINITY, f64::min);
            }
        }
        s * h * h
    }

    #[test]
    fn mistransported_examples() {
        assert_eq!(mistransported_mass(&[0.0, 0.0]), 0.0);
        assert!((mistransported_mass(&[0.1, -0.1]) - 0.1).abs() < 1e-16);
        assert!((mistransported_mass(&[0.05, 0.03, -0.08]) - 0.08).abs() < 1e-16);
    }

    #[test]
    fn single_site_phi_is_minus_cost() {
        let g = unit_grid(6);
        let nu = DiscreteMeasure::new(vec![Point::new(0.2, 0.7)], vec![1.0]).unwrap();
        let obj = Objective::new(&g, &nu, 2).unwrap();
        let a = obj.evaluate(&[0.0]).unwrap();
        let b = obj.evaluate(&[3.7]).unwrap();
        assert!(a.gradient[0].abs() < 1e-12);
        assert!((a.phi + a.cost).abs() < 1e-12);
        assert!((a.phi - b.phi).abs() < 1e-12);
    }

    #[test]
    fn two_symmetric_sites_at_zero_weights() {
        let g = unit_grid(16);
        let pts = vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)];
        let nu = DiscreteMeasure::new(pts.clone(), vec![0.5, 0.5]).unwrap();
        let v = evaluate(&g, &nu, &[0.0, 0.0], 4).unwrap();
        assert!(v.gradient.iter().all(|x| x.abs() < 1e-12));
        // 64×64 subpixel midpoint rule vs a much finer midpoint oracle
        let oracle = quadrature_nearest(&pts, 2048);
        assert!(
            (v.phi + oracle).abs() < 2e-4,
            "phi {} oracle {}",
            v.phi,
            oracle
        );
        assert!((v.cost - oracle).abs() < 2e-4);
    }

    #[test]
    fn dimension_mismatch() {
        let g = unit_grid(2);
        let nu = DiscreteMeasure::new(vec![Point::new(0.2, 0.7)], vec![1.0]).unwrap();
        assert!(matches!(
            evaluate(&g, &nu, &[0.0, 1.0], 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cost_vanishes_for_quantized_copy() {
        // one site at every pixel centre, carrying that pixel's mass
        let b = Bounds::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let g =
            DensityGrid::new(b, 3, 3, vec![1.0, 2.0, 0.5, 3.0, 1.0, 1.0, 0.25, 4.0, 1.0]).unwrap();
        let (pts, masses) = g.positive_pixels();
        let nu = DiscreteMeasure::new(pts, masses).unwrap();
        let v = evaluate(&g, &nu, &[0.0; 9], 1).unwrap();
        assert_eq!(v.cost, 0.0);
        assert!(v.mistransported_mass() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gradient_identity_and_convexity(seed in any::<u64>(), lambda in 0.01..0.99f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..7);
            let g = DensityGrid::new(
                Bounds::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                8,
                8,
                (0..64).map(|_| rng.random::<f64>()).collect(),
            ).unwrap().normalized(1.0).unwrap();
            let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.random(), rng.random())).collect();
            let nu = DiscreteMeasure::uniform(pts, 1.0).unwrap();
            let obj = Objective::new(&g, &nu, 2).unwrap();
            let w1: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let w2: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let mid: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let (v1, v2, vm) = (obj.evaluate(&w1).unwrap(), obj.evaluate(&w2).unwrap(), obj.evaluate(&mid).unwrap());
            for j in 0..n {
                prop_assert_eq!(v1.gradient[j], -nu.masses()[j] + v1.cell_mass[j]);
            }
            prop_assert!(v1.gradient.iter().sum::<f64>().abs() <= 1e-9);
            prop_assert!(vm.phi <= lambda * v1.phi + (1.0 - lambda) * v2.phi + 1e-9);
        }
    }
}
