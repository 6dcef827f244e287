use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::ShapeGenome;
use crate::surrogate::sobol_points;

use super::{AssignOutcome, Elite, Provenance, QdError, VoronoiArchive};

/// Predicted fitness and features of one genome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub fitness: f64,
    pub area: f64,
    pub enstrophy: f64,
}

pub trait Predictor: Sync {
    /// `None` when the genome cannot be scored (the child is skipped).
    fn predict(&self, genome: &ShapeGenome) -> Option<Prediction>;
}

impl<F> Predictor for F
where
    F: Fn(&ShapeGenome) -> Option<Prediction> + Sync,
{
    fn predict(&self, genome: &ShapeGenome) -> Option<Prediction> {
        self(genome)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlluminationConfig {
    pub updates: usize,
    pub children_per_update: usize,
    pub mutation_sigma: f64,
}

/// An accepted child: niche `niche` took fitness `fitness` at `update`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub update: usize,
    pub niche: usize,
    pub fitness: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IlluminationReport {
    pub children: usize,
    pub inserted: usize,
    pub replaced: usize,
    pub rejected: usize,
    /// Children whose prediction failed.
    pub skipped: usize,
    pub trace: Vec<TraceEvent>,
}

/// Gaussian perturbation of every component, clamped to `[0,1]`.
pub fn mutate(genome: &ShapeGenome, sigma: f64, rng: &mut impl Rng) -> ShapeGenome {
    let noise = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let mut params = *genome.params();
    for p in &mut params {
        *p += noise.sample(rng);
    }
    ShapeGenome::new(params)
}

/// Runs `config.updates` rounds of: draw parents uniformly from the current
/// elites, mutate, predict (in parallel), then assign one by one.
pub fn illuminate(
    archive: &mut VoronoiArchive,
    predictor: &dyn Predictor,
    config: &IlluminationConfig,
    rng: &mut impl Rng,
) -> Result<IlluminationReport, QdError> {
    if archive.is_empty() {
        return Err(QdError::EmptyArchive);
    }
    if !(config.mutation_sigma.is_finite() && config.mutation_sigma > 0.0) {
        return Err(QdError::Format(format!(
            "mutation sigma {}",
            config.mutation_sigma
        )));
    }
    let mut report = IlluminationReport::default();
    for update in 0..config.updates {
        let children: Vec<ShapeGenome> = (0..config.children_per_update)
            .map(|_| {
                let pick = rng.random_range(0..archive.occupancy());
                let parent = archive
                    .get(archive.occupied_niche(pick))
                    .expect("occupied niche");
                mutate(&parent.genome, config.mutation_sigma, rng)
            })
            .collect();
        let predictions: Vec<Option<Prediction>> =
            children.par_iter().map(|g| predictor.predict(g)).collect();
        for (genome, prediction) in children.into_iter().zip(predictions) {
            report.children += 1;
            let Some(p) = prediction
                .filter(|p| p.fitness.is_finite() && p.area.is_finite() && p.enstrophy.is_finite())
            else {
                report.skipped += 1;
                continue;
            };
            let outcome = archive.assign(Elite {
                genome,
                fitness: p.fitness,
                area: p.area,
                enstrophy: p.enstrophy,
                provenance: Provenance::Predicted,
            })?;
            match outcome {
                AssignOutcome::Inserted(_) => report.inserted += 1,
                AssignOutcome::Replaced(_) => report.replaced += 1,
                AssignOutcome::Rejected(_) => report.rejected += 1,
            }
            if outcome.accepted() {
                report.trace.push(TraceEvent {
                    update,
                    niche: outcome.niche(),
                    fitness: p.fitness,
                });
            }
        }
    }
    Ok(report)
}

/// Picks `n` distinct elites spread over the feature square: for each of
/// `n` Sobol points (starting at `sobol_skip`), the not-yet-picked elite
/// whose normalized features lie nearest. Returns niche ids.
pub fn select_acquisitions(
    archive: &VoronoiArchive,
    n: usize,
    sobol_skip: u64,
) -> Result<Vec<usize>, QdError> {
    select_among(archive, n, sobol_skip, |_| true)
}

/// [`select_acquisitions`] restricted to elites accepted by `keep`.
pub fn select_among(
    archive: &VoronoiArchive,
    n: usize,
    sobol_skip: u64,
    keep: impl Fn(&Elite) -> bool,
) -> Result<Vec<usize>, QdError> {
    let mut candidates: Vec<(usize, [f64; 2])> = archive
        .elites()
        .filter(|(_, e)| keep(e))
        .map(|(i, e)| (i, archive.normalized(e)))
        .collect();
    if candidates.len() < n {
        return Err(QdError::InsufficientElites {
            requested: n,
            available: candidates.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut picked = Vec::with_capacity(n);
    for point in sobol_points(2, n, sobol_skip)? {
        let (slot, _) = candidates
            .iter()
            .enumerate()
            .map(|(slot, (_, f))| (slot, (f[0] - point[0]).powi(2) + (f[1] - point[1]).powi(2)))
            .fold((usize::MAX, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            });
        picked.push(candidates.remove(slot).0);
    }
    Ok(picked)
}

/// Expected number of illumination children for `rounds` rounds.
pub fn planned_children(config: &IlluminationConfig, rounds: usize) -> usize {
    rounds * config.updates * config.children_per_update
}
