use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::grid::ScalarField;

/// Photon counts drawn voxel by voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSample {
    pub counts: ScalarField,
    /// Number of voxels whose mean was negative and clamped to zero.
    pub clamped: usize,
}

/// Independent Poisson draws with the given per-voxel means.
///
/// The stream is a ChaCha8 generator seeded from `seed` and consumed in
/// voxel order, so a given (mean, seed) pair always yields the same field.
pub fn poisson_sample(mean: &ScalarField, seed: u64) -> PoissonSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clamped = 0;
    let mut counts = mean.clone();
    for v in counts.values_mut() {
        if *v < 0.0 {
            clamped += 1;
        }
        let lambda = v.max(0.0);
        *v = if lambda == 0.0 {
            0.0
        } else {
            // lambda is finite and positive here, so construction cannot fail
            Poisson::new(lambda).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
        };
    }
    PoissonSample { counts, clamped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn zero_mean_gives_zero_counts() {
        let m = ScalarField::zeros(Grid::new(&[10, 10], &[1.0, 1.0]).unwrap());
        let s = poisson_sample(&m, 1);
        assert!(s.counts.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.clamped, 0);
    }

    #[test]
    fn sample_mean_tracks_intensity() {
        let m = ScalarField::constant(Grid::new(&[100, 100], &[1.0, 1.0]).unwrap(), 100.0);
        let s = poisson_sample(&m, 42);
        let mean = s.counts.values().iter().sum::<f64>() / 1e4;
        // standard error of the mean is sqrt(100/1e4) = 0.1; allow 4 sigma
        assert!((mean - 100.0).abs() <= 0.4, "{mean}");
        assert!(s.counts.values().iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
    }

    #[test]
    fn same_seed_same_field() {
        let m = ScalarField::from_fn(Grid::new(&[16, 16], &[1.0, 1.0]).unwrap(), |x| 5.0 + x[0].abs());
        let a = poisson_sample(&m, 7);
        let b = poisson_sample(&m, 7);
        let c = poisson_sample(&m, 8);
        assert_eq!(a, b);
        assert!(a.counts.values().iter().zip(c.counts.values()).any(|(x, y)| x.to_bits() != y.to_bits()));
    }

    #[test]
    fn negative_means_are_clamped_and_counted() {
        let m = ScalarField::new(Grid::new(&[4], &[1.0]).unwrap(), vec![-1.0, 3.0, -0.5, 0.0]).unwrap();
        let s = poisson_sample(&m, 0);
        assert_eq!(s.clamped, 2);
        assert_eq!(s.counts.values()[0], 0.0);
        assert_eq!(s.counts.values()[2], 0.0);
    }
}
