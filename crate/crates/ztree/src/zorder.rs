//! Z-order comparison of floating-point points without constructing keys.
//!
//! Two coordinates are compared through their binary representation: the
//! position of the most significant differing bit, measured on the value's
//! fixed-point expansion, decides which dimension dominates a point
//! comparison. This gives the same order a bit-interleaved integer Morton
//! key would give on a dyadic lattice, but works on raw floats of any
//! magnitude, including subnormals, without picking an origin or a cell
//! size up front.
//!
//! Zeros of both signs compare equal everywhere. NaN and infinities are
//! rejected when points are ingested, so comparators here assume finite
//! input.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::points::PointSet;

/// Level / exponent sentinel lying below every finite exponent: the msb of
/// a pair of equal values, and the exponent of zero. Half of i32::MIN so
/// that small offsets added by extent computations cannot overflow.
pub const LEVEL_MIN: i32 = i32::MIN / 2;

/// A finite float split into sign, unbiased exponent and normalized
/// mantissa. Zeros decompose to positive sign, exponent [`LEVEL_MIN`] and
/// mantissa 0; subnormals are renormalized so the leading mantissa bit is
/// always set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposed {
    pub sign: i8,
    pub exponent: i32,
    /// Significand with the leading bit at [`ZScalar::MANT_BITS`]; 0 for zero.
    pub mantissa: u64,
}

/// Float scalars that support z-order comparison.
pub trait ZScalar: Copy + PartialOrd {
    /// One above the largest finite exponent; the msb of a sign-mismatched
    /// pair.
    const EMAX: i32;
    /// Fraction bits in the encoding; also the fixed-point position of the
    /// mantissa's leading bit after decomposition.
    const MANT_BITS: u32;
    fn decompose(self) -> Decomposed;
}

macro_rules! impl_zscalar {
    ($t:ty, $u:ty, $emax:expr, $mant:expr, $ebits:expr, $bias:expr) => {
        impl ZScalar for $t {
            const EMAX: i32 = $emax;
            const MANT_BITS: u32 = $mant;

            #[inline]
            fn decompose(self) -> Decomposed {
                let bits = self.to_bits();
                let sign = if bits >> ($mant + $ebits) & 1 == 1 { -1 } else { 1 };
                let exp_raw = (bits >> $mant & ((1 << $ebits) - 1)) as i32;
                let frac = (bits & ((1 << $mant) - 1)) as u64;
                debug_assert!(
                    exp_raw != (1 << $ebits) - 1,
                    "non-finite value reached the comparator"
                );
                if exp_raw == 0 {
                    if frac == 0 {
                        return Decomposed { sign: 1, exponent: LEVEL_MIN, mantissa: 0 };
                    }
                    let lead = 63 - frac.leading_zeros() as i32;
                    Decomposed {
                        sign,
                        exponent: lead - $mant as i32 + 1 - $bias,
                        mantissa: frac << ($mant as i32 - lead),
                    }
                } else {
                    Decomposed {
                        sign,
                        exponent: exp_raw - $bias,
                        mantissa: 1 << $mant | frac,
                    }
                }
            }
        }
    };
}

impl_zscalar!(f64, u64, 1024, 52, 11, 1023);
impl_zscalar!(f32, u32, 128, 23, 8, 127);

/// Position of the most significant differing bit of two fixed-point
/// numbers whose binary point sits `point_position` bits from the bottom.
/// [`LEVEL_MIN`] when equal.
#[inline]
pub fn msb_fixed(a: u64, b: u64, point_position: u32) -> i32 {
    let x = a ^ b;
    if x == 0 {
        return LEVEL_MIN;
    }
    63 - x.leading_zeros() as i32 - point_position as i32
}

/// Position of the most significant differing bit of two finite floats,
/// measured on their value's fixed-point expansion (bit p has weight 2^p).
///
/// Sign mismatch dominates everything and reports [`ZScalar::EMAX`];
/// exponent mismatch reports the larger exponent; otherwise the mantissas
/// decide. [`LEVEL_MIN`] when the values are equal (zeros of both signs
/// included).
#[inline]
pub fn msb<T: ZScalar>(a: T, b: T) -> i32 {
    let da = a.decompose();
    let db = b.decompose();
    if da.sign != db.sign {
        return T::EMAX;
    }
    if da.exponent != db.exponent {
        return da.exponent.max(db.exponent);
    }
    if da.exponent == LEVEL_MIN {
        return LEVEL_MIN;
    }
    let m = msb_fixed(da.mantissa, db.mantissa, T::MANT_BITS);
    if m == LEVEL_MIN {
        LEVEL_MIN
    } else {
        da.exponent + m
    }
}

/// Index of the dimension that decides the z-order of p and q: the first
/// dimension attaining the maximal msb. Dimension 0 for equal points.
#[inline]
pub fn deciding_dim<T: ZScalar>(p: &[T], q: &[T]) -> usize {
    debug_assert_eq!(p.len(), q.len());
    let mut best_dim = 0;
    let mut best = LEVEL_MIN;
    for k in 0..p.len() {
        let m = msb(p[k], q[k]);
        if m > best {
            best = m;
            best_dim = k;
        }
    }
    best_dim
}

/// Z-order comparison of two points. Total over finite coordinates; points
/// differing only between -0.0 and +0.0 compare equal.
#[inline]
pub fn z_cmp<T: ZScalar>(p: &[T], q: &[T]) -> Ordering {
    let k = deciding_dim(p, q);
    // Finite and never NaN, so partial_cmp always succeeds.
    p[k].partial_cmp(&q[k]).unwrap()
}

/// Strict z-order: does p precede q?
#[inline]
pub fn z_less<T: ZScalar>(p: &[T], q: &[T]) -> bool {
    z_cmp(p, q) == Ordering::Less
}

/// Stable z-order sort of flat row-major coordinates; returns the
/// permutation (sorted position -> original row).
pub fn z_sort_coords(coords: &[f64], dim: usize) -> Vec<u32> {
    debug_assert!(dim > 0 && coords.len().is_multiple_of(dim));
    let n = coords.len() / dim;
    let row = |i: u32| &coords[i as usize * dim..(i as usize + 1) * dim];
    let mut perm: Vec<u32> = (0..n as u32).collect();
    perm.par_sort_by(|&a, &b| z_cmp(row(a), row(b)));
    perm
}

/// Stable z-order sort of a point set; returns the permutation
/// (sorted position -> original index).
pub fn z_sort(points: &PointSet) -> Vec<u32> {
    z_sort_coords(points.coords(), points.dim())
}

/// Evenly spaced splitter points from a z-sorted random sample, flat
/// row-major, `(n_ranks - 1) * dim` values. An input with fewer points than
/// ranks cannot be split and is an error; `n_samp` is clamped to
/// `[n_ranks, n]`.
pub fn sample_splitters(
    coords: &[f64],
    dim: usize,
    n_ranks: usize,
    n_samp: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    debug_assert!(dim > 0 && coords.len().is_multiple_of(dim));
    let n = coords.len() / dim;
    if n < n_ranks {
        return Err(Error::TooFewPoints {
            needed: n_ranks,
            got: n,
        });
    }
    if n_ranks <= 1 {
        return Ok(Vec::new());
    }
    let m = n_samp.clamp(n_ranks, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample: Vec<usize> = rand::seq::index::sample(&mut rng, n, m).into_vec();
    sample.sort_by(|&a, &b| z_cmp(&coords[a * dim..a * dim + dim], &coords[b * dim..b * dim + dim]));
    let mut out = Vec::with_capacity((n_ranks - 1) * dim);
    for r in 1..n_ranks {
        let i = sample[r * m / n_ranks];
        out.extend_from_slice(&coords[i * dim..i * dim + dim]);
    }
    Ok(out)
}

/// Rank owning point p under the given splitters: the number of splitters
/// strictly z-preceding p. Splitters must be z-sorted (as produced by
/// [`sample_splitters`]).
pub fn partition_rank(splitters: &[f64], dim: usize, p: &[f64]) -> usize {
    debug_assert_eq!(p.len(), dim);
    let n = splitters.len() / dim;
    let mut lo = 0;
    let mut hi = n;
    // First splitter not z-preceding p.
    while lo < hi {
        let mid = (lo + hi) / 2;
        if z_less(&splitters[mid * dim..mid * dim + dim], p) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decompose_basics() {
        let d = 1.0f64.decompose();
        assert_eq!((d.sign, d.exponent, d.mantissa), (1, 0, 1 << 52));
        let d = (-2.5f64).decompose();
        assert_eq!((d.sign, d.exponent), (-1, 1));
        let z = 0.0f64.decompose();
        let nz = (-0.0f64).decompose();
        assert_eq!(z, nz);
        assert_eq!(z.exponent, LEVEL_MIN);
    }

    #[test]
    fn decompose_subnormal_renormalizes() {
        // 3 * 2^-1074: leading bit at position 1, exponent -1073.
        let v = f64::from_bits(3);
        let d = v.decompose();
        assert_eq!(d.exponent, -1073);
        assert_eq!(d.mantissa, 3 << 51);
        let tiny = f64::from_bits(1).decompose();
        assert_eq!(tiny.exponent, -1074);
        assert_eq!(tiny.mantissa, 1 << 52);
    }

    #[test]
    fn msb_fixed_examples() {
        assert_eq!(msb_fixed(0b1010_1001_0101, 0b1010_0101_1011, 4), 3);
        assert_eq!(msb_fixed(0b1100, 0b1010, 0), 2);
        assert_eq!(msb_fixed(7, 7, 3), LEVEL_MIN);
    }

    #[test]
    fn msb_examples() {
        assert_eq!(msb(1.6f64, 3.1), 1);
        assert_eq!(msb(3.1f64, 3.3), -2);
        assert_eq!(msb(6.8f64, 9.4), 3);
        assert_eq!(msb(-1.0f32, 2.0), 128);
        assert_eq!(msb(-1.0f64, 2.0), 1024);
        assert_eq!(msb(5.5f64, 5.5), LEVEL_MIN);
        assert_eq!(msb(0.0f64, -0.0), LEVEL_MIN);
        assert_eq!(msb(0.0f64, 1.0), 0);
        assert_eq!(msb(2.0f64, 0.0), 1);
    }

    #[test]
    fn msb_is_symmetric_and_bounds_exponents() {
        let vals = [
            -9.7, -0.001, -0.0, 0.0, 1e-300, 0.3, 1.0, 1.5, 2.0, 6.8, 9.4, 1e300,
        ];
        for &a in &vals {
            for &b in &vals {
                assert_eq!(msb(a, b), msb(b, a));
                if a != b {
                    let m = msb(a, b);
                    assert!(m >= a.decompose().exponent.min(b.decompose().exponent) - 60);
                    assert!(m <= 1024);
                }
            }
        }
    }

    #[test]
    fn one_dimensional_order_is_numeric() {
        let mut vals = vec![3.3, -1.0, 9.7, 0.0, -0.0, 1.6, -250.5, 0.25];
        vals.sort_by(|a, b| z_cmp(std::slice::from_ref(a), std::slice::from_ref(b)));
        let expect = [-250.5, -1.0, 0.0, -0.0, 0.25, 1.6, 3.3, 9.7];
        assert_eq!(vals, expect);
    }

    #[test]
    fn quadrants_order_x_major() {
        // Sign mismatch dominates, first dimension breaks the tie.
        let pts = [
            [1.0, 1.0],
            [-1.0, 1.0],
            [1.0, -1.0],
            [-1.0, -1.0],
        ];
        let mut idx = [0usize, 1, 2, 3];
        idx.sort_by(|&a, &b| z_cmp(&pts[a], &pts[b]));
        assert_eq!(idx, [3, 1, 2, 0]);
    }

    #[test]
    fn z_sort_is_stable_on_duplicates() {
        let coords = vec![2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 1.0, 1.0];
        let perm = z_sort_coords(&coords, 2);
        assert_eq!(perm, vec![1, 3, 0, 2]);
    }

    #[test]
    fn splitters_partition_consistently() {
        let coords: Vec<f64> = (0..300).map(|i| (i * 7919 % 1000) as f64 / 10.0).collect();
        let spl = sample_splitters(&coords, 1, 4, 64, 9).unwrap();
        assert_eq!(spl.len(), 3);
        assert!(spl.windows(2).all(|w| w[0] <= w[1]));
        let mut counts = [0usize; 4];
        for i in 0..300 {
            counts[partition_rank(&spl, 1, &coords[i..i + 1])] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 300);
        assert!(counts.iter().all(|&c| c > 0));
        // Same seed, same splitters.
        assert_eq!(spl, sample_splitters(&coords, 1, 4, 64, 9).unwrap());
    }

    #[test]
    fn splitters_need_enough_points() {
        let coords = vec![1.0, 2.0];
        assert!(matches!(
            sample_splitters(&coords, 1, 3, 8, 0),
            Err(crate::error::Error::TooFewPoints { .. })
        ));
    }

    proptest! {
        #[test]
        fn z_order_is_strict_weak(raw in prop::collection::vec(-100.0f64..100.0, 3 * 3)) {
            let p = &raw[0..3];
            let q = &raw[3..6];
            let r = &raw[6..9];
            // Irreflexive, asymmetric.
            prop_assert!(!z_less(p, p));
            prop_assert!(!(z_less(p, q) && z_less(q, p)));
            // Transitive.
            if z_less(p, q) && z_less(q, r) {
                prop_assert!(z_less(p, r));
            }
            // Consistent with z_cmp.
            prop_assert_eq!(z_less(p, q), z_cmp(p, q) == std::cmp::Ordering::Less);
        }

        #[test]
        fn msb_grows_with_distance(a in -1000.0f64..1000.0, b in -1000.0f64..1000.0, c in -1000.0f64..1000.0) {
            // The msb of a pair bounds the msb of any value between them.
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if c > lo && c < hi {
                prop_assert!(msb(lo, c) <= msb(lo, hi));
                prop_assert!(msb(c, hi) <= msb(lo, hi));
            }
        }
    }
}
