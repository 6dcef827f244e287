//! Spline shape encoding.
//!
//! A [`ShapeGenome`] holds eight `(radius, angular offset)` pairs in `[0,1]`.
//! They become polar control points around the grid midpoint, a periodic
//! cubic spline `ρ(θ)` interpolates them, and the sampled outline is
//! scanline-filled into a square [`Bitmap`].
//!
//! Radii map to `[0.1, 0.9]` of the usable half-width and angular offsets to
//! at most ±45% of a sector, so every genome in `[0,1]^16` yields a valid,
//! connected shape that never touches the grid border.

mod bitmap;
mod spline;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bitmap::{area, Bitmap};
pub use spline::PeriodicSpline;

pub const GENOME_LEN: usize = 16;
pub const CONTROL_POINTS: usize = 8;
pub const DEFAULT_RESOLUTION: usize = 64;
pub const MIN_RESOLUTION: usize = 16;
pub const OUTLINE_SAMPLES: usize = 256;

const RADIUS_MIN: f64 = 0.1;
const RADIUS_SPAN: f64 = 0.8;
const ANGLE_JITTER: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("genome must have {GENOME_LEN} parameters, got {0}")]
    GenomeLength(usize),
    #[error("genome parameter {0} is not finite")]
    NonFinite(usize),
    #[error("resolution {0} is below the minimum of {MIN_RESOLUTION}")]
    InvalidResolution(usize),
    #[error("{cells} cells do not form a {resolution}x{resolution} grid")]
    CellCount { resolution: usize, cells: usize },
    #[error("shape covers no cell centers")]
    DegenerateShape,
    #[error("malformed bitmap data: {0}")]
    Format(String),
}

/// Sixteen parameters in `[0,1]`, interleaved as `(r_0, a_0, r_1, a_1, ...)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ShapeGenome([f64; GENOME_LEN]);

impl ShapeGenome {
    /// Clamps every component into `[0,1]`; NaN becomes 0.
    pub fn new(mut params: [f64; GENOME_LEN]) -> Self {
        for p in &mut params {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self(params)
    }

    pub fn splat(value: f64) -> Self {
        Self::new([value; GENOME_LEN])
    }

    pub fn from_slice(params: &[f64]) -> Result<Self, EncodingError> {
        let arr: [f64; GENOME_LEN] = params
            .try_into()
            .map_err(|_| EncodingError::GenomeLength(params.len()))?;
        if let Some(i) = arr.iter().position(|p| !p.is_finite()) {
            return Err(EncodingError::NonFinite(i));
        }
        Ok(Self::new(arr))
    }

    pub fn params(&self) -> &[f64; GENOME_LEN] {
        &self.0
    }

    pub fn radius_param(&self, i: usize) -> f64 {
        self.0[2 * i]
    }

    pub fn angle_param(&self, i: usize) -> f64 {
        self.0[2 * i + 1]
    }
}

impl TryFrom<Vec<f64>> for ShapeGenome {
    type Error = EncodingError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_slice(&v)
    }
}

impl From<ShapeGenome> for Vec<f64> {
    fn from(g: ShapeGenome) -> Self {
        g.0.to_vec()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarPoint {
    /// Pixels from the grid midpoint.
    pub radius: f64,
    /// Radians.
    pub angle: f64,
}

/// Decoded spline: control points, the interpolating spline and its closed,
/// uniformly sampled outline in grid coordinates (cell `(i, j)` has its
/// center at `(i + 0.5, j + 0.5)`).
#[derive(Clone, Debug)]
pub struct SplineShape {
    control_points: Vec<PolarPoint>,
    spline: PeriodicSpline,
    center: (f64, f64),
    radius_bounds: (f64, f64),
    outline: Vec<(f64, f64)>,
}

impl SplineShape {
    pub fn control_points(&self) -> &[PolarPoint] {
        &self.control_points
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn outline(&self) -> &[(f64, f64)] {
        &self.outline
    }

    /// Outline radius at `angle`, limited to the encoding's radius range.
    pub fn radius_at(&self, angle: f64) -> f64 {
        let (lo, hi) = self.radius_bounds;
        self.spline.eval(angle).clamp(lo, hi)
    }
}

pub fn decode_genome(
    genome: &ShapeGenome,
    resolution: usize,
) -> Result<SplineShape, EncodingError> {
    if resolution < MIN_RESOLUTION {
        return Err(EncodingError::InvalidResolution(resolution));
    }
    let half = resolution as f64 / 2.0;
    let usable = half - 1.0;
    let sector = TAU / CONTROL_POINTS as f64;

    let control_points: Vec<PolarPoint> = (0..CONTROL_POINTS)
        .map(|i| PolarPoint {
            angle: sector * i as f64 + (genome.angle_param(i) - 0.5) * sector * ANGLE_JITTER,
            radius: (RADIUS_MIN + RADIUS_SPAN * genome.radius_param(i)) * usable,
        })
        .collect();
    let knots: Vec<f64> = control_points.iter().map(|p| p.angle).collect();
    let values: Vec<f64> = control_points.iter().map(|p| p.radius).collect();
    let spline = PeriodicSpline::new(&knots, &values);

    let mut shape = SplineShape {
        control_points,
        spline,
        center: (half, half),
        radius_bounds: (RADIUS_MIN * usable, usable),
        outline: Vec::with_capacity(OUTLINE_SAMPLES + 1),
    };
    let start = knots[0];
    let mut outline: Vec<(f64, f64)> = (0..OUTLINE_SAMPLES)
        .map(|j| {
            let theta = start + TAU * j as f64 / OUTLINE_SAMPLES as f64;
            let r = shape.radius_at(theta);
            (half + r * theta.cos(), half + r * theta.sin())
        })
        .collect();
    outline.push(outline[0]);
    shape.outline = outline;
    Ok(shape)
}

/// Even-odd scanline fill of the outline, sampled at cell centers; a center
/// exactly on the outline counts as solid.
///
/// The result is reduced to its largest 4-connected component, so sliver
/// protrusions thinner than a cell cannot leave detached islands.
pub fn rasterize(shape: &SplineShape, resolution: usize) -> Result<Bitmap, EncodingError> {
    let mut bitmap = Bitmap::empty(resolution);
    let outline = shape.outline();
    let mut crossings = Vec::with_capacity(16);
    for row in 0..resolution {
        let y = row as f64 + 0.5;
        crossings.clear();
        for edge in outline.windows(2) {
            let ((x0, y0), (x1, y1)) = (edge[0], edge[1]);
            // Half-open rule so shared vertices are counted once.
            if (y0 <= y && y < y1) || (y1 <= y && y < y0) {
                crossings.push(x0 + (y - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let first = (span[0] - 0.5).ceil().max(0.0) as usize;
            let last = (span[1] - 0.5).floor();
            if last < 0.0 {
                continue;
            }
            let last = (last as usize).min(resolution - 1);
            for col in first..=last {
                bitmap.set(col, row, true);
            }
        }
    }
    if bitmap.solid_count() == 0 {
        return Err(EncodingError::DegenerateShape);
    }
    if !bitmap.is_connected() {
        bitmap = bitmap.largest_component();
    }
    Ok(bitmap)
}

/// Genome to bitmap at the given resolution.
pub fn express(genome: &ShapeGenome, resolution: usize) -> Result<Bitmap, EncodingError> {
    rasterize(&decode_genome(genome, resolution)?, resolution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_genome(rng: &mut impl Rng) -> ShapeGenome {
        let mut p = [0.0; GENOME_LEN];
        for v in &mut p {
            *v = rng.random();
        }
        ShapeGenome::new(p)
    }

    /// Brute-force count of cell centers inside a centered disk.
    fn disk_cells(resolution: usize, radius: f64) -> usize {
        let c = resolution as f64 / 2.0;
        let mut n = 0;
        for y in 0..resolution {
            for x in 0..resolution {
                let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
                if dx * dx + dy * dy <= radius * radius {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn construction_clamps() {
        let mut p = [0.5; GENOME_LEN];
        p[0] = -3.0;
        p[1] = 7.0;
        p[2] = f64::NAN;
        let g = ShapeGenome::new(p);
        assert_eq!(&g.params()[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(
            ShapeGenome::from_slice(&[0.5; 15]),
            Err(EncodingError::GenomeLength(15))
        );
        let mut bad = vec![0.5; 16];
        bad[4] = f64::INFINITY;
        assert_eq!(
            ShapeGenome::from_slice(&bad),
            Err(EncodingError::NonFinite(4))
        );
    }

    #[test]
    fn genome_json_is_a_plain_array() {
        let g = ShapeGenome::splat(0.25);
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.starts_with("[0.25,0.25"));
        let back: ShapeGenome = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<ShapeGenome>("[0.1, 0.2]").is_err());
    }

    #[test]
    fn mid_genome_is_a_circle_of_radius_15_5() {
        let shape = decode_genome(&ShapeGenome::splat(0.5), 64).unwrap();
        let (cx, cy) = shape.center();
        assert_eq!((cx, cy), (32.0, 32.0));
        for (i, p) in shape.control_points().iter().enumerate() {
            assert!((p.radius - 15.5).abs() < 1e-12);
            assert!((p.angle - TAU * i as f64 / 8.0).abs() < 1e-12);
        }
        for &(x, y) in shape.outline() {
            let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            assert!((r - 15.5).abs() < 1e-6, "radius {r}");
        }
    }

    #[test]
    fn zero_radii_hit_the_lower_bound() {
        let mut p = [0.5; GENOME_LEN];
        for i in 0..CONTROL_POINTS {
            p[2 * i] = 0.0;
        }
        let shape = decode_genome(&ShapeGenome::new(p), 64).unwrap();
        for cp in shape.control_points() {
            assert!((cp.radius - 3.1).abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_genome_interpolates_knots() {
        let mut p = [0.5; GENOME_LEN];
        for i in 0..CONTROL_POINTS {
            p[2 * i] = if i % 2 == 0 { 0.9 } else { 0.2 };
        }
        let shape = decode_genome(&ShapeGenome::new(p), 64).unwrap();
        for (i, cp) in shape.control_points().iter().enumerate() {
            let mapped = (0.1 + 0.8 * p[2 * i]) * 31.0;
            assert!((shape.radius_at(cp.angle) - mapped).abs() < 1e-6);
        }
        // Four lobes: radius peaks at even control angles, dips at odd ones.
        let r0 = shape.radius_at(0.0);
        let r1 = shape.radius_at(TAU / 8.0);
        assert!(r0 > 25.0 && r1 < 10.0);
    }

    #[test]
    fn outline_is_closed_with_enough_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = decode_genome(&random_genome(&mut rng), 64).unwrap();
        let o = shape.outline();
        assert!(o.len() > OUTLINE_SAMPLES);
        let (a, b) = (o[0], o[o.len() - 1]);
        assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        let angles: Vec<f64> = shape.control_points().iter().map(|c| c.angle).collect();
        assert!(angles.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn disk_raster_matches_area_oracles() {
        let bitmap = express(&ShapeGenome::splat(0.5), 64).unwrap();
        let count = bitmap.solid_count();
        let analytic = std::f64::consts::PI * 15.5 * 15.5;
        assert!(
            (count as f64 - analytic).abs() <= 0.04 * analytic,
            "{count}"
        );
        let brute = disk_cells(64, 15.5);
        assert!(count.abs_diff(brute) <= 4, "{count} vs {brute}");
        assert!((area(&bitmap) - 754.0 / 4096.0).abs() < 0.008);
        assert!(bitmap.is_connected());
    }

    #[test]
    fn smallest_disk_is_solid_and_connected() {
        let mut p = [0.5; GENOME_LEN];
        for i in 0..CONTROL_POINTS {
            p[2 * i] = 0.0;
        }
        let bitmap = express(&ShapeGenome::new(p), 64).unwrap();
        assert!(bitmap.is_connected());
        assert!(bitmap.solid_count() >= 21);
        assert_eq!(bitmap.solid_count(), disk_cells(64, 3.1));
    }

    #[test]
    fn random_genomes_give_valid_bitmaps_off_the_border() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let b = express(&random_genome(&mut rng), 64).unwrap();
            assert!(b.is_valid_shape());
            for k in 0..64 {
                assert!(!b.get(k, 0) && !b.get(0, k) && !b.get(k, 63) && !b.get(63, k));
            }
        }
    }

    #[test]
    fn other_resolutions() {
        assert_eq!(
            decode_genome(&ShapeGenome::splat(0.5), 8).unwrap_err(),
            EncodingError::InvalidResolution(8)
        );
        let b = express(&ShapeGenome::splat(0.5), 32).unwrap();
        assert_eq!(b.resolution(), 32);
        assert!(b.is_connected());
    }

    #[test]
    fn identical_genomes_give_identical_bitmaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_genome(&mut rng);
        assert_eq!(express(&g, 64).unwrap(), express(&g, 64).unwrap());
    }
}
