//! Seeded random sampling shared by the analysis modules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::point::Point;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent seed for task `index` of a batch seeded with `seed` (splitmix64).
pub fn substream(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform direction on the unit sphere of `R^dim` (normalised Gaussian).
pub fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::point::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform point in the closed ball `B_radius(center)`.
pub fn uniform_in_ball<R: Rng>(rng: &mut R, center: &Point, radius: f64) -> Point {
    let dim = center.dim();
    let dir = unit_vector(rng, dim);
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    Point::new(center.coords().iter().zip(&dir).map(|(c, d)| c + r * d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_samples_stay_inside() {
        let mut r = rng(7);
        let c = Point::from([1.0, -2.0, 0.5]);
        for _ in 0..1000 {
            assert!(uniform_in_ball(&mut r, &c, 0.3).dist(&c) <= 0.3 + 1e-15);
        }
    }

    #[test]
    fn substreams_differ() {
        assert_ne!(substream(1, 0), substream(1, 1));
        assert_ne!(substream(1, 0), substream(2, 0));
        assert_eq!(substream(5, 9), substream(5, 9));
    }
}
