//! GP predictors over the VAE latent space, latent walks and generated sets.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{area, Bitmap};
use crate::qd::{cvt_centroids, FeatureSpace, Measurement, NearestIndex};
use crate::surrogate::{GpBounds, GpModel};

use super::{GenError, VaeModel};

pub const MIN_PREDICTOR_SAMPLES: usize = 20;
pub const DEFAULT_WALK_STEPS: usize = 11;
pub const DEFAULT_WALK_SPAN: f64 = 2.0;
const DECODE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPrediction {
    pub u_max: f64,
    pub area: f64,
    pub enstrophy: f64,
}

/// Three GPs on the same latent inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPredictorSet {
    pub u_max: GpModel,
    pub area: GpModel,
    pub enstrophy: GpModel,
    /// Extent of the measured training features, with a 10% margin.
    pub feature_space: FeatureSpace,
}

#[derive(Serialize, Deserialize)]
struct PredictorFile {
    u_max: serde_json::Value,
    area: serde_json::Value,
    enstrophy: serde_json::Value,
    feature_space: FeatureSpace,
}

impl LatentPredictorSet {
    pub fn predict(&self, latent: &[f64]) -> Result<LatentPrediction, GenError> {
        Ok(LatentPrediction {
            u_max: self.u_max.predict_mean(latent)?,
            area: self.area.predict_mean(latent)?,
            enstrophy: self.enstrophy.predict_mean(latent)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.u_max.dimension()
    }

    pub fn to_json(&self) -> String {
        let value = |gp: &GpModel| serde_json::from_str(&gp.to_json()).expect("GP JSON is valid");
        let file = PredictorFile {
            u_max: value(&self.u_max),
            area: value(&self.area),
            enstrophy: value(&self.enstrophy),
            feature_space: self.feature_space,
        };
        serde_json::to_string_pretty(&file).expect("predictors serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, GenError> {
        let file: PredictorFile =
            serde_json::from_str(text).map_err(|e| GenError::Format(e.to_string()))?;
        let gp = |v: &serde_json::Value| GpModel::from_json(&v.to_string());
        Ok(Self {
            u_max: gp(&file.u_max)?,
            area: gp(&file.area)?,
            enstrophy: gp(&file.enstrophy)?,
            feature_space: file.feature_space,
        })
    }
}

/// Encodes every bitmap and fits latent → `u_max`, `A` and `E`.
pub fn fit_latent_predictors(
    model: &VaeModel,
    samples: &[(Bitmap, Measurement)],
) -> Result<LatentPredictorSet, GenError> {
    if samples.len() < MIN_PREDICTOR_SAMPLES {
        return Err(GenError::InsufficientData {
            needed: MIN_PREDICTOR_SAMPLES,
            got: samples.len(),
        });
    }
    let bitmaps: Vec<&Bitmap> = samples.iter().map(|(b, _)| b).collect();
    let latents = model.encode_batch(&bitmaps)?;
    let fit = |targets: Vec<f64>| {
        GpModel::fit(&latents, &targets, &GpBounds::for_data(&latents, &targets))
    };
    let u: Vec<f64> = samples.iter().map(|(_, m)| m.u_max).collect();
    let a: Vec<f64> = samples.iter().map(|(_, m)| m.area).collect();
    let e: Vec<f64> = samples.iter().map(|(_, m)| m.enstrophy).collect();
    let feature_space = FeatureSpace::from_observations(&a, &e, 0.1)?;
    Ok(LatentPredictorSet {
        u_max: fit(u)?,
        area: fit(a)?,
        enstrophy: fit(e)?,
        feature_space,
    })
}

/// One column of a latent walk. `shape` is `None` for a degenerate decode.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkPoint {
    pub dim: usize,
    pub step: usize,
    pub offset: f64,
    pub latent: Vec<f64>,
    pub shape: Option<Bitmap>,
    pub prediction: LatentPrediction,
}

impl WalkPoint {
    pub fn is_degenerate(&self) -> bool {
        self.shape.is_none()
    }
}

/// `steps` evenly spaced offsets over `[-span, span]`; one step is `[0]`.
pub fn walk_offsets(steps: usize, span: f64) -> Vec<f64> {
    if steps == 1 {
        return vec![0.0];
    }
    (0..steps)
        .map(|k| -span + 2.0 * span * k as f64 / (steps - 1) as f64)
        .collect()
}

/// Varies coordinate `dim` of `center` over `center[dim] ± span`, keeping
/// the others fixed.
pub fn latent_walk(
    model: &VaeModel,
    predictors: &LatentPredictorSet,
    center: &[f64],
    dim: usize,
    steps: usize,
    span: f64,
) -> Result<Vec<WalkPoint>, GenError> {
    let latent_dim = model.latent_dim();
    if center.len() != latent_dim {
        return Err(GenError::LatentDimension {
            expected: latent_dim,
            got: center.len(),
        });
    }
    if dim >= latent_dim {
        return Err(GenError::WalkDimension { dim, latent_dim });
    }
    if steps % 2 == 0 {
        return Err(GenError::EvenSteps(steps));
    }
    if !(span.is_finite() && span >= 0.0) {
        return Err(GenError::InvalidSpan(span));
    }
    let offsets = walk_offsets(steps, span);
    let latents: Vec<Vec<f64>> = offsets
        .iter()
        .map(|o| {
            let mut z = center.to_vec();
            z[dim] += o;
            z
        })
        .collect();
    let shapes = model.decode_batch(&latents)?;
    let mut points = Vec::with_capacity(steps);
    for (step, ((offset, latent), shape)) in
        offsets.into_iter().zip(latents).zip(shapes).enumerate()
    {
        let shape = match shape {
            Ok(b) => Some(b),
            Err(e) if e.is_degenerate() => None,
            Err(e) => return Err(e),
        };
        points.push(WalkPoint {
            dim,
            step,
            offset,
            prediction: predictors.predict(&latent)?,
            latent,
            shape,
        });
    }
    Ok(points)
}

/// One walk per latent dimension: rows are dimensions, columns steps.
pub fn latent_walk_grid(
    model: &VaeModel,
    predictors: &LatentPredictorSet,
    center: &[f64],
    steps: usize,
    span: f64,
) -> Result<Vec<Vec<WalkPoint>>, GenError> {
    (0..model.latent_dim())
        .map(|dim| latent_walk(model, predictors, center, dim, steps, span))
        .collect()
}

pub const WALK_CSV_HEADER: &str =
    "dim,step,offset,latent,degenerate,pred_u_max,pred_area,pred_enstrophy,shape_rle";

pub fn write_walk_csv<W: Write>(points: &[WalkPoint], out: W) -> Result<(), GenError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WALK_CSV_HEADER.split(','))
        .map_err(|e| GenError::Format(e.to_string()))?;
    for p in points {
        w.write_record([
            p.dim.to_string(),
            p.step.to_string(),
            p.offset.to_string(),
            join(&p.latent),
            p.is_degenerate().to_string(),
            p.prediction.u_max.to_string(),
            p.prediction.area.to_string(),
            p.prediction.enstrophy.to_string(),
            p.shape.as_ref().map(Bitmap::to_rle).unwrap_or_default(),
        ])
        .map_err(|e| GenError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A decoded prior sample. `area` is measured on the decoded bitmap;
/// `enstrophy` and `fitness` (predicted `u_max`) come from the GPs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRow {
    pub latent: Vec<f64>,
    pub area: f64,
    pub predicted_area: f64,
    pub enstrophy: f64,
    pub fitness: f64,
}

/// Fitness statistics of the rows falling in one cell of a `bins × bins`
/// grid over the normalized feature square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolineBin {
    pub area_bin: usize,
    pub enstrophy_bin: usize,
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

pub const GENERATED_CSV_HEADER: &str = "row,latent,area,predicted_area,enstrophy,fitness";

/// Result of [`generate_set`]. `niches[k]` is the row index of the elite of
/// niche `k`, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSet {
    pub feature_space: FeatureSpace,
    pub centroids: Vec<[f64; 2]>,
    pub niches: Vec<Option<usize>>,
    pub rows: Vec<GeneratedRow>,
    pub degenerate: usize,
    pub bins: usize,
    pub isolines: Vec<IsolineBin>,
}

impl GeneratedSet {
    pub fn occupancy(&self) -> usize {
        self.niches.iter().flatten().count()
    }

    pub fn capacity(&self) -> usize {
        self.centroids.len()
    }

    /// `(niche, row)` pairs in niche order.
    pub fn elites(&self) -> impl Iterator<Item = (usize, &GeneratedRow)> {
        self.niches
            .iter()
            .enumerate()
            .filter_map(|(k, r)| r.map(|r| (k, &self.rows[r])))
    }

    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<(), GenError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(GENERATED_CSV_HEADER.split(','))
            .map_err(|e| GenError::Format(e.to_string()))?;
        for (i, r) in self.rows.iter().enumerate() {
            w.write_record([
                i.to_string(),
                join(&r.latent),
                r.area.to_string(),
                r.predicted_area.to_string(),
                r.enstrophy.to_string(),
                r.fitness.to_string(),
            ])
            .map_err(|e| GenError::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_isolines_csv<W: Write>(&self, out: W) -> Result<(), GenError> {
        let mut w = csv::Writer::from_writer(out);
        for b in &self.isolines {
            w.serialize(b)
                .map_err(|e| GenError::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `n` latents from the standard normal prior, decodes them (in
/// parallel), and fills a Voronoi archive of `capacity` niches over
/// `space` (the predictors' training extent when `None`) with the lowest
/// predicted `u_max` per niche. Degenerate decodes are counted and skipped.
pub fn generate_set(
    model: &VaeModel,
    predictors: &LatentPredictorSet,
    n: usize,
    capacity: usize,
    space: Option<FeatureSpace>,
    seed: u64,
    bins: usize,
) -> Result<GeneratedSet, GenError> {
    let space = space.unwrap_or(predictors.feature_space);
    let centroids = cvt_centroids(capacity, seed)?;
    let index = NearestIndex::new(centroids.clone());
    let bins = bins.max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..model.latent_dim())
                .map(|_| rng.sample(StandardNormal))
                .collect()
        })
        .collect();
    let decoded: Vec<Result<Option<GeneratedRow>, GenError>> = latents
        .par_chunks(DECODE_CHUNK)
        .flat_map_iter(|chunk| {
            let shapes = match model.decode_batch(chunk) {
                Ok(s) => s,
                Err(e) => return vec![Err(e)],
            };
            chunk
                .iter()
                .zip(shapes)
                .map(|(z, shape)| match shape {
                    Ok(b) => {
                        let p = predictors.predict(z)?;
                        Ok(Some(GeneratedRow {
                            latent: z.clone(),
                            area: area(&b),
                            predicted_area: p.area,
                            enstrophy: p.enstrophy,
                            fitness: p.u_max,
                        }))
                    }
                    Err(e) if e.is_degenerate() => Ok(None),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(n);
    let mut degenerate = 0;
    for r in decoded {
        match r? {
            Some(row) if row.fitness.is_finite() && row.enstrophy.is_finite() => rows.push(row),
            _ => degenerate += 1,
        }
    }

    let mut niches: Vec<Option<usize>> = vec![None; capacity];
    let mut cells: Vec<Option<(usize, f64, f64, f64)>> = vec![None; bins * bins];
    for (i, row) in rows.iter().enumerate() {
        let point = space.normalize(row.area, row.enstrophy);
        let k = index.nearest(point);
        if niches[k].is_none_or(|j| row.fitness < rows[j].fitness) {
            niches[k] = Some(i);
        }
        let bin = |t: f64| ((t * bins as f64) as usize).min(bins - 1);
        let cell = &mut cells[bin(point[0]) * bins + bin(point[1])];
        let f = row.fitness;
        *cell = Some(match *cell {
            None => (1, f, f, f),
            Some((c, lo, sum, hi)) => (c + 1, lo.min(f), sum + f, hi.max(f)),
        });
    }
    let isolines = cells
        .iter()
        .enumerate()
        .filter_map(|(k, c)| {
            c.map(|(count, min, sum, max)| IsolineBin {
                area_bin: k / bins,
                enstrophy_bin: k % bins,
                count,
                min,
                mean: (sum / count as f64).clamp(min, max),
                max,
            })
        })
        .collect();
    Ok(GeneratedSet {
        feature_space: space,
        centroids,
        niches,
        rows,
        degenerate,
        bins,
        isolines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets() {
        assert_eq!(walk_offsets(1, 2.0), vec![0.0]);
        assert_eq!(walk_offsets(5, 2.0), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        let o = walk_offsets(DEFAULT_WALK_STEPS, DEFAULT_WALK_SPAN);
        assert_eq!(o.len(), 11);
        assert_eq!(o[5], 0.0);
    }
}
