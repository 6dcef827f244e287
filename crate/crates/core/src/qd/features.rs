use serde::{Deserialize, Serialize};

use super::QdError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub lo: f64,
    pub hi: f64,
}

impl FeatureRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self, QdError> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(QdError::InvalidRange { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Observed extent widened by `margin` of the span on both sides. A
    /// zero span is widened around the value instead.
    pub fn from_observations(values: &[f64], margin: f64) -> Result<Self, QdError> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(QdError::NonFinite);
        }
        let span = hi - lo;
        let pad = if span > 0.0 {
            margin * span
        } else {
            (0.1 * lo.abs()).max(1e-6)
        };
        Self::new(lo - pad, hi + pad)
    }

    /// Maps into `[0,1]`, clamping values outside the range.
    pub fn normalize(&self, v: f64) -> f64 {
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, t: f64) -> f64 {
        self.lo + t * (self.hi - self.lo)
    }
}

/// Area and enstrophy ranges that place raw features in the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub area: FeatureRange,
    pub enstrophy: FeatureRange,
}

/// A rectangle in normalized feature coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRegion {
    pub a_lo: f64,
    pub a_hi: f64,
    pub e_lo: f64,
    pub e_hi: f64,
}

impl FeatureRegion {
    pub const FULL: FeatureRegion = FeatureRegion {
        a_lo: 0.0,
        a_hi: 1.0,
        e_lo: 0.0,
        e_hi: 1.0,
    };

    /// Inside the unit square (edges allowed) with positive width and height.
    pub fn is_valid(&self) -> bool {
        let ok = |lo: f64, hi: f64| {
            lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi <= 1.0 && hi > lo
        };
        ok(self.a_lo, self.a_hi) && ok(self.e_lo, self.e_hi)
    }

    pub fn contains(&self, point: [f64; 2]) -> bool {
        (self.a_lo..=self.a_hi).contains(&point[0]) && (self.e_lo..=self.e_hi).contains(&point[1])
    }
}

impl FeatureSpace {
    pub fn from_observations(
        areas: &[f64],
        enstrophies: &[f64],
        margin: f64,
    ) -> Result<Self, QdError> {
        Ok(Self {
            area: FeatureRange::from_observations(areas, margin)?,
            enstrophy: FeatureRange::from_observations(enstrophies, margin)?,
        })
    }

    pub fn normalize(&self, area: f64, enstrophy: f64) -> [f64; 2] {
        [
            self.area.normalize(area),
            self.enstrophy.normalize(enstrophy),
        ]
    }

    pub fn denormalize(&self, point: [f64; 2]) -> (f64, f64) {
        (
            self.area.denormalize(point[0]),
            self.enstrophy.denormalize(point[1]),
        )
    }

    /// The raw-feature box covered by `region`, as a space of its own.
    pub fn subspace(&self, region: &FeatureRegion) -> Result<Self, QdError> {
        if !region.is_valid() {
            return Err(QdError::InvalidRegion(*region));
        }
        Ok(Self {
            area: FeatureRange::new(
                self.area.denormalize(region.a_lo),
                self.area.denormalize(region.a_hi),
            )?,
            enstrophy: FeatureRange::new(
                self.enstrophy.denormalize(region.e_lo),
                self.enstrophy.denormalize(region.e_hi),
            )?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_and_clamping() {
        let r = FeatureRange::from_observations(&[2.0, 4.0, 3.0], 0.1).unwrap();
        assert!((r.lo - 1.8).abs() < 1e-12 && (r.hi - 4.2).abs() < 1e-12);
        assert_eq!(r.normalize(0.0), 0.0);
        assert_eq!(r.normalize(10.0), 1.0);
        assert!((r.normalize(3.0) - 0.5).abs() < 1e-12);
        assert!((r.denormalize(r.normalize(2.5)) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_observations_still_give_a_range() {
        let r = FeatureRange::from_observations(&[0.5, 0.5], 0.1).unwrap();
        assert!(r.hi > r.lo);
        assert!(FeatureRange::from_observations(&[], 0.1).is_err());
    }

    #[test]
    fn subspace_maps_region_onto_unit_square() {
        let space = FeatureSpace {
            area: FeatureRange::new(0.0, 1.0).unwrap(),
            enstrophy: FeatureRange::new(10.0, 20.0).unwrap(),
        };
        let region = FeatureRegion {
            a_lo: 0.2,
            a_hi: 0.4,
            e_lo: 0.5,
            e_hi: 1.0,
        };
        let child = space.subspace(&region).unwrap();
        assert_eq!(child.normalize(0.2, 15.0), [0.0, 0.0]);
        let p = child.normalize(0.3, 17.5);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        let flat = FeatureRegion {
            a_hi: 0.2,
            ..region
        };
        assert!(matches!(
            space.subspace(&flat),
            Err(QdError::InvalidRegion(_))
        ));
        assert!(space.subspace(&FeatureRegion::FULL).unwrap() == space);
    }
}
