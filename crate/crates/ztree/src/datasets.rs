//! Deterministic synthetic point sets for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::points::PointSet;

/// Shape of a generated point set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// Regular lattice of cell centres; n must be a d-th power.
    Grid,
    /// Independent uniform coordinates in [0, L).
    Uniform,
    /// Isotropic normal; centred in the box and wrapped when a box
    /// length is given, standard normal otherwise.
    Gaussian,
}

impl Distribution {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grid" => Some(Self::Grid),
            "uniform" => Some(Self::Uniform),
            "gaussian" => Some(Self::Gaussian),
            _ => None,
        }
    }
}

/// Integer d-th root of n when exact.
fn exact_root(n: usize, dim: usize) -> Option<usize> {
    let side = (n as f64).powf(1.0 / dim as f64).round() as usize;
    (side.saturating_sub(1)..=side + 1).find(|&s| s.checked_pow(dim as u32) == Some(n))
}

/// Generate `n` points. `box_len` fixes the box edge (default 1.0 for
/// grid and uniform); positions only, no masses or velocities.
pub fn generate(
    dist: Distribution,
    n: usize,
    dim: usize,
    seed: u64,
    box_len: Option<f64>,
) -> Result<PointSet> {
    if dim == 0 {
        return Err(Error::ZeroDimension);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = match dist {
        Distribution::Grid => {
            let l = box_len.unwrap_or(1.0);
            let side = exact_root(n, dim).ok_or(Error::BadGridCount { n, dim })?;
            let step = l / side as f64;
            let mut coords = Vec::with_capacity(n * dim);
            let mut idx = vec![0usize; dim];
            for _ in 0..n {
                for &i in &idx {
                    coords.push((i as f64 + 0.5) * step);
                }
                for d in (0..dim).rev() {
                    idx[d] += 1;
                    if idx[d] < side {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            coords
        }
        Distribution::Uniform => {
            let l = box_len.unwrap_or(1.0);
            (0..n * dim).map(|_| rng.random_range(0.0..l)).collect()
        }
        Distribution::Gaussian => match box_len {
            Some(l) => (0..n * dim)
                .map(|_| {
                    let g: f64 = rng.sample(StandardNormal);
                    (0.5 * l + 0.125 * l * g).rem_euclid(l)
                })
                .collect(),
            None => (0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        },
    };
    PointSet::new(dim, coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_fills_cell_centres() {
        let p = generate(Distribution::Grid, 9, 2, 0, Some(3.0)).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(p.point(0), &[0.5, 0.5]);
        assert_eq!(p.point(1), &[0.5, 1.5]);
        assert_eq!(p.point(8), &[2.5, 2.5]);
    }

    #[test]
    fn grid_rejects_non_power_counts() {
        assert!(matches!(
            generate(Distribution::Grid, 10, 2, 0, None),
            Err(Error::BadGridCount { n: 10, dim: 2 })
        ));
        assert!(generate(Distribution::Grid, 27, 3, 0, None).is_ok());
    }

    #[test]
    fn uniform_stays_inside_the_box() {
        let p = generate(Distribution::Uniform, 500, 3, 1, Some(4.0)).unwrap();
        assert!(p.coords().iter().all(|&c| (0.0..4.0).contains(&c)));
    }

    #[test]
    fn boxed_gaussian_wraps_and_centres() {
        let p = generate(Distribution::Gaussian, 2000, 2, 2, Some(10.0)).unwrap();
        assert!(p.coords().iter().all(|&c| (0.0..10.0).contains(&c)));
        let mean = p.coords().iter().sum::<f64>() / p.coords().len() as f64;
        assert!((mean - 5.0).abs() < 0.5);
    }

    #[test]
    fn open_gaussian_is_roughly_standard() {
        let p = generate(Distribution::Gaussian, 4000, 1, 3, None).unwrap();
        let mean = p.coords().iter().sum::<f64>() / 4000.0;
        let var = p.coords().iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / 4000.0;
        assert!(mean.abs() < 0.1);
        assert!((var - 1.0).abs() < 0.2);
    }

    #[test]
    fn same_seed_same_points() {
        let a = generate(Distribution::Uniform, 64, 2, 9, Some(1.0)).unwrap();
        let b = generate(Distribution::Uniform, 64, 2, 9, Some(1.0)).unwrap();
        assert_eq!(a.coords(), b.coords());
        let c = generate(Distribution::Uniform, 64, 2, 10, Some(1.0)).unwrap();
        assert_ne!(a.coords(), c.coords());
    }
}
