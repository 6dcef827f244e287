//! Centroidal Voronoi tessellation of the unit square.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::surrogate::sobol_points;

use super::QdError;

pub const CVT_ITERATIONS: usize = 50;
pub const CVT_POINTS_PER_CENTROID: usize = 100;

/// Uniform-grid bucket index for exact nearest-point queries in the unit
/// square. Ties go to the lowest index, as with a linear scan.
#[derive(Clone, Debug)]
pub struct NearestIndex {
    points: Vec<[f64; 2]>,
    grid: usize,
    buckets: Vec<Vec<u32>>,
}

fn squared_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

impl NearestIndex {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        assert!(!points.is_empty());
        let grid = ((points.len() as f64).sqrt().ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); grid * grid];
        for (i, p) in points.iter().enumerate() {
            let (bx, by) = Self::bucket_of(grid, *p);
            buckets[by * grid + bx].push(i as u32);
        }
        Self {
            points,
            grid,
            buckets,
        }
    }

    fn bucket_of(grid: usize, p: [f64; 2]) -> (usize, usize) {
        let b = |v: f64| ((v.clamp(0.0, 1.0) * grid as f64) as usize).min(grid - 1);
        (b(p[0]), b(p[1]))
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the point closest to `q` (`q` is clamped into the square).
    pub fn nearest(&self, q: [f64; 2]) -> usize {
        let q = [q[0].clamp(0.0, 1.0), q[1].clamp(0.0, 1.0)];
        let g = self.grid as i64;
        let (cx, cy) = Self::bucket_of(self.grid, q);
        let (cx, cy) = (cx as i64, cy as i64);
        let h = 1.0 / self.grid as f64;
        let mut best = (f64::INFINITY, usize::MAX);
        for ring in 0..=g {
            for by in (cy - ring).max(0)..=(cy + ring).min(g - 1) {
                for bx in (cx - ring).max(0)..=(cx + ring).min(g - 1) {
                    if (bx - cx).abs() != ring && (by - cy).abs() != ring {
                        continue;
                    }
                    for &i in &self.buckets[(by * g + bx) as usize] {
                        let d = squared_distance(q, self.points[i as usize]);
                        if (d, i as usize) < best {
                            best = (d, i as usize);
                        }
                    }
                }
            }
            // Everything outside the searched block is at least `ring·h` away.
            let reach = ring as f64 * h;
            if best.0 < reach * reach {
                break;
            }
        }
        best.1
    }
}

/// Lloyd iterations over `100·k` Sobol points, starting from `k` of those
/// points picked with a seeded generator.
pub fn cvt_centroids(k: usize, seed: u64) -> Result<Vec<[f64; 2]>, QdError> {
    if k == 0 {
        return Err(QdError::InvalidCapacity(k));
    }
    let samples: Vec<[f64; 2]> = sobol_points(2, CVT_POINTS_PER_CENTROID * k, 1)?
        .into_iter()
        .map(|p| [p[0], p[1]])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, samples.len(), k).into_vec();
    picks.sort_unstable();
    let mut centroids: Vec<[f64; 2]> = picks.iter().map(|&i| samples[i]).collect();
    for _ in 0..CVT_ITERATIONS {
        let index = NearestIndex::new(centroids.clone());
        let mut sums = vec![[0.0, 0.0]; k];
        let mut counts = vec![0usize; k];
        for &p in &samples {
            let c = index.nearest(p);
            sums[c][0] += p[0];
            sums[c][1] += p[1];
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
    }
    Ok(centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(points: &[[f64; 2]], q: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, &p) in points.iter().enumerate() {
            let d = squared_distance(q, p);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    proptest! {
        #[test]
        fn grid_lookup_matches_linear_scan(
            points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..60),
            queries in prop::collection::vec((-0.2f64..1.2, -0.2f64..1.2), 1..30),
        ) {
            let points: Vec<[f64; 2]> = points.into_iter().map(|(a, b)| [a, b]).collect();
            let index = NearestIndex::new(points.clone());
            for (a, b) in queries {
                let q = [a.clamp(0.0, 1.0), b.clamp(0.0, 1.0)];
                prop_assert_eq!(index.nearest([a, b]), brute_nearest(&points, q));
            }
        }
    }

    #[test]
    fn duplicate_points_resolve_to_lowest_index() {
        let index = NearestIndex::new(vec![[0.3, 0.3], [0.7, 0.7], [0.3, 0.3]]);
        assert_eq!(index.nearest([0.31, 0.29]), 0);
    }

    #[test]
    fn single_centroid_sits_in_the_middle() {
        let c = cvt_centroids(1, 7).unwrap();
        assert!((c[0][0] - 0.5).abs() < 0.02 && (c[0][1] - 0.5).abs() < 0.02);
    }

    #[test]
    fn hundred_centroids_are_evenly_spread() {
        let c = cvt_centroids(100, 3).unwrap();
        let nn: Vec<f64> = (0..c.len())
            .map(|i| {
                (0..c.len())
                    .filter(|&j| j != i)
                    .map(|j| squared_distance(c[i], c[j]).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mean = nn.iter().sum::<f64>() / nn.len() as f64;
        let sd = (nn.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / nn.len() as f64).sqrt();
        assert!(sd / mean < 0.5, "cv {}", sd / mean);
        assert!(c
            .iter()
            .all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
    }

    #[test]
    fn seeded_construction_is_reproducible() {
        assert_eq!(
            cvt_centroids(20, 11).unwrap(),
            cvt_centroids(20, 11).unwrap()
        );
        assert_ne!(
            cvt_centroids(20, 11).unwrap(),
            cvt_centroids(20, 12).unwrap()
        );
        assert!(matches!(
            cvt_centroids(0, 1),
            Err(QdError::InvalidCapacity(0))
        ));
    }
}
