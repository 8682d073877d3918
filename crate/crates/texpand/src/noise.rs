//! Classic 2D gradient (Perlin) noise with fractal octave summation, used to
//! perturb exemplars for diversified synthesis.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Lattice spacing of the coarsest octave, in pixels. Each further octave
/// halves the spacing.
pub const LATTICE_SPACING: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    height: usize,
    width: usize,
    seed: u64,
    octaves: u32,
    persistence: f64,
    values: Vec<f32>,
}

impl NoiseField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn octaves(&self) -> u32 {
        self.octaves
    }

    pub fn persistence(&self) -> f64 {
        self.persistence
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Deterministic fractal gradient noise in [-1, 1].
pub fn perlin(
    height: usize,
    width: usize,
    seed: u64,
    octaves: u32,
    persistence: f64,
) -> Result<NoiseField> {
    if height == 0 || width == 0 {
        return Err(Error::EmptyNoiseField { height, width });
    }
    if octaves == 0 {
        return Err(Error::msg("octaves must be at least 1"));
    }
    if !(0.0 < persistence && persistence <= 1.0) {
        return Err(Error::msg(format!(
            "persistence must be in (0, 1], got {persistence}"
        )));
    }

    let perm = permutation_table(seed);
    let mut values = vec![0.0f32; height * width];

    // Sum of octave amplitudes; dividing by it and rescaling by sqrt(2) maps
    // the theoretical single-octave extrema (+-sqrt(2)/2) onto [-1, 1].
    let amp_sum: f64 = (0..octaves).map(|o| persistence.powi(o as i32)).sum();
    let scale = std::f64::consts::SQRT_2 / amp_sum;

    for y in 0..height {
        for x in 0..width {
            let mut sum = 0.0f64;
            let mut amp = 1.0f64;
            let mut spacing = LATTICE_SPACING as f64;
            for _ in 0..octaves {
                sum += amp * gradient_noise(&perm, x as f64 / spacing, y as f64 / spacing);
                amp *= persistence;
                spacing /= 2.0;
            }
            values[y * width + x] = (sum * scale).clamp(-1.0, 1.0) as f32;
        }
    }

    Ok(NoiseField {
        height,
        width,
        seed,
        octaves,
        persistence,
        values,
    })
}

fn permutation_table(seed: u64) -> [u8; 512] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base: Vec<u8> = (0..=255).collect();
    base.shuffle(&mut rng);
    let mut table = [0u8; 512];
    for i in 0..512 {
        table[i] = base[i & 255];
    }
    table
}

/// Unit gradients at 45-degree increments, picked by the hashed lattice corner.
#[inline]
fn gradient(h: u8) -> (f64, f64) {
    const D: f64 = std::f64::consts::FRAC_1_SQRT_2;
    match h & 7 {
        0 => (1.0, 0.0),
        1 => (D, D),
        2 => (0.0, 1.0),
        3 => (-D, D),
        4 => (-1.0, 0.0),
        5 => (-D, -D),
        6 => (0.0, -1.0),
        _ => (D, -D),
    }
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Single-octave gradient noise at lattice coordinates (x, y); zero whenever
/// both coordinates are integers.
fn gradient_noise(perm: &[u8; 512], x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let xf = x - x0;
    let yf = y - y0;
    let xi = (x0 as i64 & 255) as usize;
    let yi = (y0 as i64 & 255) as usize;

    let corner = |dx: usize, dy: usize| -> f64 {
        let h = perm[perm[xi + dx] as usize + yi + dy];
        let (gx, gy) = gradient(h);
        gx * (xf - dx as f64) + gy * (yf - dy as f64)
    };

    let u = fade(xf);
    let v = fade(yf);
    let top = corner(0, 0) + u * (corner(1, 0) - corner(0, 0));
    let bot = corner(0, 1) + u * (corner(1, 1) - corner(0, 1));
    top + v * (bot - top)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straightforward reference implementation of one octave of 2D gradient
    /// noise over the same permutation table and gradient set, written as an
    /// independent nested-loop oracle.
    fn reference_single_octave(height: usize, width: usize, seed: u64) -> Vec<f64> {
        let perm = permutation_table(seed);
        let mut out = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let fx = x as f64 / LATTICE_SPACING as f64;
                let fy = y as f64 / LATTICE_SPACING as f64;
                let (cx, cy) = (fx.floor() as i64, fy.floor() as i64);
                let mut acc = 0.0;
                let mut weight_total = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let h = perm[perm[((cx + dx) & 255) as usize] as usize
                        + ((cy + dy) & 255) as usize];
                    let (gx, gy) = gradient(h);
                    let rx = fx - (cx + dx) as f64;
                    let ry = fy - (cy + dy) as f64;
                    let wx = if dx == 0 {
                        1.0 - fade(fx - cx as f64)
                    } else {
                        fade(fx - cx as f64)
                    };
                    let wy = if dy == 0 {
                        1.0 - fade(fy - cy as f64)
                    } else {
                        fade(fy - cy as f64)
                    };
                    acc += wx * wy * (gx * rx + gy * ry);
                    weight_total += wx * wy;
                }
                assert!((weight_total - 1.0).abs() < 1e-12);
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn deterministic_in_seed() {
        let a = perlin(64, 48, 42, 4, 0.5).unwrap();
        let b = perlin(64, 48, 42, 4, 0.5).unwrap();
        assert_eq!(a, b);
        let c = perlin(64, 48, 43, 4, 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_at_lattice_points_single_octave() {
        let field = perlin(4 * LATTICE_SPACING + 1, 4 * LATTICE_SPACING + 1, 3, 1, 0.5).unwrap();
        for gy in 0..=4 {
            for gx in 0..=4 {
                let v = field.get(gy * LATTICE_SPACING, gx * LATTICE_SPACING);
                assert!(
                    v.abs() < 1e-6,
                    "lattice point ({gy},{gx}) has value {v}, expected 0"
                );
            }
        }
    }

    #[test]
    fn matches_reference_oracle_single_octave() {
        let field = perlin(80, 96, 9, 1, 0.5).unwrap();
        let reference = reference_single_octave(80, 96, 9);
        let scale = std::f64::consts::SQRT_2;
        for (got, want) in field.values().iter().zip(&reference) {
            assert!(
                (*got as f64 - want * scale).abs() < 1e-5,
                "got {got}, reference {}",
                want * scale
            );
        }
    }

    #[test]
    fn range_bounded_512() {
        let field = perlin(512, 512, 17, 4, 0.5).unwrap();
        let min = field.values().iter().copied().fold(f32::INFINITY, f32::min);
        let max = field
            .values()
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max);
        assert!((-1.0..=1.0).contains(&min));
        assert!((-1.0..=1.0).contains(&max));
        // The field should actually use a good part of the range.
        assert!(max - min > 0.5, "field nearly constant: [{min}, {max}]");
    }

    #[test]
    fn rejects_zero_dimensions_and_bad_params() {
        assert!(perlin(0, 10, 0, 1, 0.5).is_err());
        assert!(perlin(10, 0, 0, 1, 0.5).is_err());
        assert!(perlin(10, 10, 0, 0, 0.5).is_err());
        assert!(perlin(10, 10, 0, 1, 0.0).is_err());
        assert!(perlin(10, 10, 0, 1, 1.5).is_err());
    }
}
