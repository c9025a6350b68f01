//! Synthetic densities: truncated isotropic Gaussians and their mixtures.

use super::{Bounds, DensityGrid};
use crate::error::{Error, Result};
use crate::point::Point;

/// One isotropic Gaussian bump `weight · N(mean, variance · I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: Point,
    pub variance: f64,
    pub weight: f64,
}

impl Gaussian {
    pub fn density(&self, p: Point) -> f64 {
        let norm = 1.0 / (2.0 * std::f64::consts::PI * self.variance);
        self.weight * norm * (-p.dist_sq(self.mean) / (2.0 * self.variance)).exp()
    }
}

/// Samples a mixture of Gaussians (plus an optional constant floor) at pixel
/// centres and rescales the result to `total_mass` on the truncated domain.
pub fn mixture_grid(
    bounds: Bounds,
    nx: usize,
    ny: usize,
    components: &[Gaussian],
    floor: f64,
    total_mass: f64,
) -> Result<DensityGrid> {
    if components
        .iter()
        .any(|c| !(c.variance > 0.0 && c.weight >= 0.0))
    {
        return Err(Error::InvalidArgument(
            "mixture components need positive variance".into(),
        ));
    }
    let side = bounds.width() / nx as f64;
    let mut values = Vec::with_capacity(nx * ny);
    for row in 0..ny {
        for col in 0..nx {
            let p = Point::new(
                bounds.x_min + (col as f64 + 0.5) * side,
                bounds.y_max - (row as f64 + 0.5) * side,
            );
            values.push(floor + components.iter().map(|c| c.density(p)).sum::<f64>());
        }
    }
    DensityGrid::new(bounds, nx, ny, values)?.normalized(total_mass)
}

/// `MVN₂(mean, variance · I)` truncated to `bounds`, with total mass `total_mass`.
pub fn gaussian_grid(
    bounds: Bounds,
    nx: usize,
    ny: usize,
    mean: Point,
    variance: f64,
    total_mass: f64,
) -> Result<DensityGrid> {
    mixture_grid(
        bounds,
        nx,
        ny,
        &[Gaussian {
            mean,
            variance,
            weight: 1.0,
        }],
        0.0,
        total_mass,
    )
}

/// Constant density with the given total mass.
pub fn uniform_grid(bounds: Bounds, nx: usize, ny: usize, total_mass: f64) -> Result<DensityGrid> {
    DensityGrid::new(bounds, nx, ny, vec![1.0; nx * ny])?.normalized(total_mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_mass_and_symmetry() {
        let b = Bounds::new(0.0, 0.0, 3.0, 3.0).unwrap();
        let g = gaussian_grid(b, 64, 64, Point::new(1.5, 1.5), 0.1, 1.0).unwrap();
        assert!((g.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(g.value(10, 20), g.value(20, 10));
        assert_eq!(g.value(10, 20), g.value(53, 43));
    }
}
