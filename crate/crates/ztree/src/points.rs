//! Point storage: flat row-major coordinates with optional masses and
//! velocities.
//!
//! All coordinates are validated finite at construction. Downstream code
//! (comparators, tree builds, distance kernels) relies on never seeing a NaN
//! or infinity, so the check lives here and nowhere else. Point counts are
//! capped at u32 range because node and interaction indices are u32
//! throughout.

use crate::error::{Error, Result};

/// Largest supported point count per set.
pub const MAX_POINTS: usize = u32::MAX as usize;

/// A set of points in d dimensions, coordinates stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    masses: Option<Vec<f64>>,
    velocities: Option<Vec<f64>>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::RaggedCoordinates {
                len: coords.len(),
                dim,
            });
        }
        let n = coords.len() / dim;
        if n > MAX_POINTS {
            return Err(Error::TooManyPoints {
                n,
                max: MAX_POINTS,
            });
        }
        for (i, &v) in coords.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    index: i / dim,
                    dim: i % dim,
                    value: v,
                });
            }
        }
        Ok(Self {
            dim,
            coords,
            masses: None,
            velocities: None,
        })
    }

    pub fn with_masses(mut self, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "masses",
                got: masses.len(),
                expected: self.len(),
            });
        }
        if let Some(i) = masses.iter().position(|m| !m.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                dim: 0,
                value: masses[i],
            });
        }
        self.masses = Some(masses);
        Ok(self)
    }

    pub fn with_velocities(mut self, velocities: Vec<f64>) -> Result<Self> {
        if velocities.len() != self.coords.len() {
            return Err(Error::LengthMismatch {
                what: "velocities",
                got: velocities.len(),
                expected: self.coords.len(),
            });
        }
        if let Some(i) = velocities.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i / self.dim,
                dim: i % self.dim,
                value: velocities[i],
            });
        }
        self.velocities = Some(velocities);
        Ok(self)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    #[inline]
    pub fn masses(&self) -> Option<&[f64]> {
        self.masses.as_deref()
    }

    #[inline]
    pub fn velocities(&self) -> Option<&[f64]> {
        self.velocities.as_deref()
    }

    /// Mass of point i, defaulting to unit mass when no masses are stored.
    #[inline]
    pub fn mass(&self, i: usize) -> f64 {
        match &self.masses {
            Some(m) => m[i],
            None => 1.0,
        }
    }

    /// Copy of the rows selected by `idx`, carrying masses and velocities.
    pub fn gather(&self, idx: &[u32]) -> PointSet {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.point(i as usize));
        }
        let masses = self.masses.as_ref().map(|m| {
            idx.iter().map(|&i| m[i as usize]).collect()
        });
        let velocities = self.velocities.as_ref().map(|v| {
            let mut out = Vec::with_capacity(idx.len() * self.dim);
            for &i in idx {
                out.extend_from_slice(&v[i as usize * self.dim..(i as usize + 1) * self.dim]);
            }
            out
        });
        PointSet {
            dim: self.dim,
            coords,
            masses,
            velocities,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = PointSet::new(2, vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 0, dim: 1, .. }));
        let err = PointSet::new(1, vec![f64::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn rejects_ragged_and_zero_dim() {
        assert!(matches!(
            PointSet::new(3, vec![1.0, 2.0]).unwrap_err(),
            Error::RaggedCoordinates { .. }
        ));
        assert!(matches!(
            PointSet::new(0, vec![]).unwrap_err(),
            Error::ZeroDimension
        ));
    }

    #[test]
    fn mass_defaults_to_unit() {
        let p = PointSet::new(1, vec![0.0, 1.0]).unwrap();
        assert_eq!(p.mass(1), 1.0);
        let p = p.with_masses(vec![2.0, 3.0]).unwrap();
        assert_eq!(p.mass(1), 3.0);
    }

    #[test]
    fn gather_reorders_rows() {
        let p = PointSet::new(2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
            .unwrap()
            .with_masses(vec![10.0, 20.0, 30.0])
            .unwrap();
        let g = p.gather(&[2, 0]);
        assert_eq!(g.coords(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(g.masses().unwrap(), &[30.0, 10.0]);
    }
}
