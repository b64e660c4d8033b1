//! Axis-aligned boxes and distance bounds between them, in open or
//! periodic domains.
//!
//! Periodic displacements are reduced with `rem_euclid` and a single
//! conditional subtraction, which lands exactly in [-P/2, P/2). A rounding
//! based reduction would misplace the -P/2 edge case.

use crate::error::{Error, Result};

/// Per-dimension periodicity. `None` means the dimension is unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicDomain {
    periods: Vec<Option<f64>>,
}

impl PeriodicDomain {
    /// Fully open domain.
    pub fn open(dim: usize) -> Self {
        Self {
            periods: vec![None; dim],
        }
    }

    /// Periodic in every dimension with the given edge lengths.
    pub fn periodic(lengths: &[f64]) -> Result<Self> {
        Self::mixed(lengths.iter().map(|&l| Some(l)).collect())
    }

    /// Periodic cube.
    pub fn cube(dim: usize, length: f64) -> Result<Self> {
        Self::periodic(&vec![length; dim])
    }

    /// Arbitrary mix of periodic and open dimensions.
    pub fn mixed(periods: Vec<Option<f64>>) -> Result<Self> {
        for (i, p) in periods.iter().enumerate() {
            if let Some(l) = p {
                if !(l.is_finite() && *l > 0.0) {
                    return Err(Error::BadPeriod { dim: i, value: *l });
                }
            }
        }
        Ok(Self { periods })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.periods.len()
    }

    #[inline]
    pub fn period(&self, i: usize) -> Option<f64> {
        self.periods[i]
    }

    pub fn is_periodic(&self) -> bool {
        self.periods.iter().any(|p| p.is_some())
    }

    /// Box volume; `None` when any dimension is open.
    pub fn volume(&self) -> Option<f64> {
        self.periods
            .iter()
            .try_fold(1.0, |acc, p| p.map(|l| acc * l))
    }

    /// Minimal-image difference a - b in one dimension, in [-P/2, P/2) for
    /// periodic dimensions.
    #[inline]
    pub fn delta(&self, i: usize, a: f64, b: f64) -> f64 {
        let d = a - b;
        match self.periods[i] {
            None => d,
            Some(p) => {
                let mut d = d.rem_euclid(p);
                if d >= 0.5 * p {
                    d -= p;
                }
                d
            }
        }
    }

    /// Minimal-image displacement a - b written to `out`.
    pub fn displacement(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for i in 0..self.periods.len() {
            out[i] = self.delta(i, a[i], b[i]);
        }
    }

    /// Squared minimal-image distance between two points.
    #[inline]
    pub fn dist_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.periods.len() {
            let d = self.delta(i, a[i], b[i]);
            acc += d * d;
        }
        acc
    }

    /// Wrap a single coordinate into [0, P) for periodic dimensions.
    #[inline]
    pub fn wrap_coord(&self, i: usize, x: f64) -> f64 {
        match self.periods[i] {
            None => x,
            Some(p) => x.rem_euclid(p),
        }
    }
}

/// Axis-aligned box given by center and half extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Aabb {
    pub center: Vec<f64>,
    pub half: Vec<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &[f64]) -> bool {
        self.center
            .iter()
            .zip(&self.half)
            .zip(p)
            .all(|((c, h), x)| (x - c).abs() <= *h)
    }
}

/// Squared lower and upper bounds on the distance between any point of box
/// 1 and any point of box 2.
///
/// Per dimension, with wrapped center difference `a` and combined half
/// extent `b`: the lower bound contribution is max(a - b, 0), the upper
/// bound contribution a + b. When a box spans half a period or more in a
/// periodic dimension the minimal-image reasoning for the lower bound
/// degrades, so the whole lower bound collapses to zero; the upper bound
/// stands either way.
pub fn dist_bounds_sq(
    domain: &PeriodicDomain,
    c1: &[f64],
    h1: &[f64],
    c2: &[f64],
    h2: &[f64],
) -> (f64, f64) {
    let mut low = 0.0;
    let mut up = 0.0;
    let mut low_valid = true;
    for i in 0..domain.dim() {
        let a = domain.delta(i, c1[i], c2[i]).abs();
        let b = h1[i] + h2[i];
        if let Some(p) = domain.period(i) {
            if 2.0 * h1[i] >= 0.5 * p || 2.0 * h2[i] >= 0.5 * p {
                low_valid = false;
            }
        }
        let l = (a - b).max(0.0);
        low += l * l;
        let u = a + b;
        up += u * u;
    }
    if !low_valid {
        low = 0.0;
    }
    (low, up)
}
