//! Surrogate-assisted phenotypic niching: Gaussian processes predict `u_max`
//! (fitness) and enstrophy (a niche feature) from the genome, the archive is
//! illuminated against those predictions, and a Sobol-spread batch of elites
//! is simulated every round to refine the models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{area, express, ShapeGenome, DEFAULT_RESOLUTION, MIN_RESOLUTION};
use crate::lbm::{simulate, LbmConfig};
use crate::surrogate::{sobol_points, GpBounds, GpHyperparams, GpModel};
use crate::validate::Violation;

use super::illuminate::{
    illuminate, planned_children, select_among, IlluminationConfig, Prediction, TraceEvent,
};
use super::{Elite, FeatureSpace, Provenance, QdError, VoronoiArchive};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphenConfig {
    pub init_samples: usize,
    pub batch_size: usize,
    pub total_budget: usize,
    pub archive_updates_per_round: usize,
    pub children_per_update: usize,
    pub mutation_sigma: f64,
    pub archive_capacity: usize,
    pub rng_seed: u64,
    /// Bitmap side used for area and simulation.
    pub resolution: usize,
    /// Relative padding added around the initial feature extent.
    pub feature_margin: f64,
    /// When positive, illumination during the rounds ranks children by
    /// `mean − κ·σ` of the `u_max` model instead of the mean. The final
    /// rebuild always uses the mean.
    pub ucb_kappa: f64,
    /// Fixed normalization; when absent it is taken from the initial
    /// samples.
    pub feature_space: Option<FeatureSpace>,
    /// Genomes evaluated first in the initial set; Sobol points fill the
    /// rest.
    pub seed_genomes: Vec<ShapeGenome>,
}

impl Default for SphenConfig {
    fn default() -> Self {
        Self {
            init_samples: 100,
            batch_size: 10,
            total_budget: 1000,
            archive_updates_per_round: 1000,
            children_per_update: 25,
            mutation_sigma: 0.1,
            archive_capacity: 1000,
            rng_seed: 0,
            resolution: DEFAULT_RESOLUTION,
            feature_margin: 0.1,
            ucb_kappa: 0.0,
            feature_space: None,
            seed_genomes: Vec::new(),
        }
    }
}

impl SphenConfig {
    /// 50 initial samples, 150 evaluations, 100 niches.
    pub fn desk() -> Self {
        Self {
            init_samples: 50,
            total_budget: 150,
            archive_capacity: 100,
            ..Self::default()
        }
    }

    pub fn rounds(&self) -> usize {
        self.total_budget.saturating_sub(self.init_samples) / self.batch_size.max(1)
    }

    pub fn illumination(&self) -> IlluminationConfig {
        IlluminationConfig {
            updates: self.archive_updates_per_round,
            children_per_update: self.children_per_update,
            mutation_sigma: self.mutation_sigma,
        }
    }

    pub fn children_per_round(&self) -> usize {
        planned_children(&self.illumination(), 1)
    }

    /// Children proposed across the acquisition rounds, excluding the final
    /// rebuild.
    pub fn round_proposals(&self) -> usize {
        planned_children(&self.illumination(), self.rounds())
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.init_samples < 2 {
            v.push(Violation::new(
                "init_samples",
                "at least 2 samples are needed to fit the models",
            ));
        }
        if self.batch_size == 0 {
            v.push(Violation::new("batch_size", "must be at least 1"));
        }
        if self.total_budget < self.init_samples {
            v.push(Violation::new(
                "total_budget",
                "must be at least init_samples",
            ));
        } else if self.batch_size > 0
            && (self.total_budget - self.init_samples) % self.batch_size != 0
        {
            v.push(Violation::new(
                "total_budget",
                "total_budget - init_samples must be divisible by batch_size",
            ));
        }
        if self.archive_updates_per_round == 0 {
            v.push(Violation::new(
                "archive_updates_per_round",
                "must be at least 1",
            ));
        }
        if self.children_per_update == 0 {
            v.push(Violation::new("children_per_update", "must be at least 1"));
        }
        if !(self.mutation_sigma.is_finite() && self.mutation_sigma > 0.0) {
            v.push(Violation::new("mutation_sigma", "must be positive"));
        }
        if self.archive_capacity == 0 {
            v.push(Violation::new("archive_capacity", "must be at least 1"));
        }
        if self.archive_capacity < self.batch_size {
            v.push(Violation::new(
                "archive_capacity",
                "must be at least batch_size",
            ));
        }
        if self.resolution < MIN_RESOLUTION {
            v.push(Violation::new(
                "resolution",
                format!("must be at least {MIN_RESOLUTION}"),
            ));
        }
        if !(self.feature_margin.is_finite() && self.feature_margin >= 0.0) {
            v.push(Violation::new("feature_margin", "must be non-negative"));
        }
        if !(self.ucb_kappa.is_finite() && self.ucb_kappa >= 0.0) {
            v.push(Violation::new("ucb_kappa", "must be non-negative"));
        }
        if self.seed_genomes.len() > self.init_samples {
            v.push(Violation::new(
                "seed_genomes",
                "more seed genomes than init_samples",
            ));
        }
        v
    }
}

/// Measured features of one genome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub u_max: f64,
    pub enstrophy: f64,
    pub area: f64,
}

pub trait Evaluator: Sync {
    /// `Err` marks a failed evaluation (for example a diverged simulation).
    fn evaluate(&self, genome: &ShapeGenome) -> Result<Measurement, String>;
}

impl<F> Evaluator for F
where
    F: Fn(&ShapeGenome) -> Result<Measurement, String> + Sync,
{
    fn evaluate(&self, genome: &ShapeGenome) -> Result<Measurement, String> {
        self(genome)
    }
}

/// Channel-flow simulation of the expressed shape.
#[derive(Clone, Debug)]
pub struct LbmEvaluator {
    pub lbm: LbmConfig,
    pub resolution: usize,
}

impl Evaluator for LbmEvaluator {
    fn evaluate(&self, genome: &ShapeGenome) -> Result<Measurement, String> {
        let bitmap = express(genome, self.resolution).map_err(|e| e.to_string())?;
        let m = simulate(&bitmap, &self.lbm).map_err(|e| e.to_string())?;
        Ok(Measurement {
            u_max: m.u_max,
            enstrophy: m.enstrophy,
            area: m.area,
        })
    }
}

/// Cheap deterministic stand-in for the flow solver: exact area, plus
/// smooth analytic `u_max` and enstrophy that grow with area and with the
/// roughness of the radius profile.
#[derive(Clone, Debug)]
pub struct SyntheticEvaluator {
    pub resolution: usize,
}

impl Default for SyntheticEvaluator {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl SyntheticEvaluator {
    pub fn features(genome: &ShapeGenome, area: f64) -> Measurement {
        let radii: Vec<f64> = (0..8).map(|i| genome.radius_param(i)).collect();
        let roughness = ((0..8)
            .map(|i| (radii[i] - radii[(i + 1) % 8]).powi(2))
            .sum::<f64>()
            / 8.0)
            .sqrt();
        let skew = (0..8)
            .map(|i| (genome.angle_param(i) - 0.5).abs())
            .sum::<f64>()
            / 8.0;
        let enstrophy = 0.05 + 1.5 * area + 0.6 * roughness * area.sqrt() + 0.05 * skew;
        let u_max = 0.0433 * (1.0 + 1.2 * area + 0.5 * roughness - 0.2 * skew * area);
        Measurement {
            u_max,
            enstrophy,
            area,
        }
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, genome: &ShapeGenome) -> Result<Measurement, String> {
        let bitmap = express(genome, self.resolution).map_err(|e| e.to_string())?;
        Ok(Self::features(genome, area(&bitmap)))
    }
}

/// One evaluation. `round` 0 is the initial set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub round: usize,
    pub genome: ShapeGenome,
    pub outcome: Result<Measurement, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    /// 1-based acquisition round; the final rebuild is `rounds + 1`.
    pub round: usize,
    /// Evaluations done (successful or not) after this round.
    pub evaluations: usize,
    pub failures: usize,
    pub occupancy: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub children: usize,
    pub inserted: usize,
    pub replaced: usize,
    pub rejected: usize,
    pub u_max_hyper: GpHyperparams,
    pub enstrophy_hyper: GpHyperparams,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub rounds: usize,
    /// Children proposed during the acquisition rounds.
    pub round_children: usize,
    /// Children proposed by the final rebuild.
    pub final_children: usize,
}

impl Counters {
    pub fn total_children(&self) -> usize {
        self.round_children + self.final_children
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RunOutcome {
    Completed,
    /// More than half of a round's evaluations failed.
    BudgetExhausted {
        round: usize,
        failures: usize,
        attempted: usize,
    },
}

/// Final `u_max` and enstrophy surrogates.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub u_max: GpModel,
    pub enstrophy: GpModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub config: SphenConfig,
    pub outcome: RunOutcome,
    pub feature_space: Option<FeatureSpace>,
    pub archive: Option<VoronoiArchive>,
    pub samples: Vec<Sample>,
    pub rounds: Vec<RoundStats>,
    pub models: Option<Models>,
    pub counters: Counters,
    /// Accepted children per illumination, rounds first, final rebuild last.
    pub traces: Vec<Vec<TraceEvent>>,
}

impl RunResult {
    pub fn successes(&self) -> impl Iterator<Item = (&Sample, &Measurement)> {
        self.samples
            .iter()
            .filter_map(|s| s.outcome.as_ref().ok().map(|m| (s, m)))
    }

    pub fn evaluations(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Round,
    FinalRebuild,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub phase: Phase,
    pub round: usize,
    pub evaluations: usize,
    pub budget: usize,
    pub occupancy: usize,
    pub best_fitness: Option<f64>,
}

struct SurrogatePredictor<'a> {
    models: &'a Models,
    resolution: usize,
    kappa: f64,
}

impl super::Predictor for SurrogatePredictor<'_> {
    fn predict(&self, genome: &ShapeGenome) -> Option<Prediction> {
        let bitmap = express(genome, self.resolution).ok()?;
        let x = genome.params();
        let fitness = if self.kappa > 0.0 {
            let (mean, var) = self.models.u_max.predict_one(x).ok()?;
            mean - self.kappa * var.sqrt()
        } else {
            self.models.u_max.predict_mean(x).ok()?
        };
        Some(Prediction {
            fitness,
            area: area(&bitmap),
            enstrophy: self.models.enstrophy.predict_mean(x).ok()?,
        })
    }
}

fn fit_models(samples: &[Sample]) -> Result<Models, QdError> {
    let (inputs, measured): (Vec<Vec<f64>>, Vec<Measurement>) = samples
        .iter()
        .filter_map(|s| {
            s.outcome
                .as_ref()
                .ok()
                .map(|m| (s.genome.params().to_vec(), *m))
        })
        .unzip();
    let fit =
        |targets: Vec<f64>| GpModel::fit(&inputs, &targets, &GpBounds::for_data(&inputs, &targets));
    Ok(Models {
        u_max: fit(measured.iter().map(|m| m.u_max).collect())?,
        enstrophy: fit(measured.iter().map(|m| m.enstrophy).collect())?,
    })
}

fn seed_archive(archive: &mut VoronoiArchive, samples: &[Sample]) -> Result<(), QdError> {
    archive.clear();
    for s in samples {
        if let Ok(m) = &s.outcome {
            archive.assign(Elite {
                genome: s.genome,
                fitness: m.u_max,
                area: m.area,
                enstrophy: m.enstrophy,
                provenance: Provenance::Simulated,
            })?;
        }
    }
    Ok(())
}

fn evaluate_batch(
    evaluator: &dyn Evaluator,
    genomes: &[ShapeGenome],
    round: usize,
    first_id: usize,
) -> Vec<Sample> {
    genomes
        .par_iter()
        .enumerate()
        .map(|(i, g)| Sample {
            id: first_id + i,
            round,
            genome: *g,
            outcome: evaluator.evaluate(g),
        })
        .collect()
}

fn exhausted(samples: &[Sample]) -> Option<usize> {
    let failures = samples.iter().filter(|s| s.outcome.is_err()).count();
    (2 * failures > samples.len()).then_some(failures)
}

pub fn sphen_run(evaluator: &dyn Evaluator, config: &SphenConfig) -> Result<RunResult, QdError> {
    sphen_run_with_progress(evaluator, config, &mut |_| {})
}

/// Full run. A round in which more than half the evaluations fail stops the
/// run with [`RunOutcome::BudgetExhausted`]; the partial result is returned
/// as `Ok` so callers can keep it.
pub fn sphen_run_with_progress(
    evaluator: &dyn Evaluator,
    config: &SphenConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<RunResult, QdError> {
    let problems = config.violations();
    if !problems.is_empty() {
        return Err(QdError::InvalidConfig(problems));
    }
    let rounds = config.rounds();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut result = RunResult {
        config: config.clone(),
        outcome: RunOutcome::Completed,
        feature_space: None,
        archive: None,
        samples: Vec::new(),
        rounds: Vec::new(),
        models: None,
        counters: Counters::default(),
        traces: Vec::new(),
    };
    let report = |phase, round, result: &RunResult, progress: &mut dyn FnMut(&Progress)| {
        let archive = result.archive.as_ref();
        progress(&Progress {
            phase,
            round,
            evaluations: result.samples.len(),
            budget: config.total_budget,
            occupancy: archive.map_or(0, |a| a.occupancy()),
            best_fitness: archive.and_then(|a| a.best()).map(|(_, e)| e.fitness),
        });
    };
    report(Phase::Initial, 0, &result, progress);

    let mut init: Vec<ShapeGenome> = config.seed_genomes.clone();
    let fill = config.init_samples - init.len();
    init.extend(
        sobol_points(crate::encoding::GENOME_LEN, fill, 1)?
            .iter()
            .map(|p| ShapeGenome::from_slice(p).expect("Sobol points are finite")),
    );
    result.samples = evaluate_batch(evaluator, &init, 0, 0);
    if let Some(failures) = exhausted(&result.samples) {
        result.outcome = RunOutcome::BudgetExhausted {
            round: 0,
            failures,
            attempted: init.len(),
        };
        report(Phase::Done, 0, &result, progress);
        return Ok(result);
    }

    let space = match config.feature_space {
        Some(space) => space,
        None => {
            let (areas, ens): (Vec<f64>, Vec<f64>) = result
                .successes()
                .map(|(_, m)| (m.area, m.enstrophy))
                .unzip();
            FeatureSpace::from_observations(&areas, &ens, config.feature_margin)?
        }
    };
    result.feature_space = Some(space);
    let mut archive = VoronoiArchive::new(config.archive_capacity, config.rng_seed, space)?;
    let mut models = fit_models(&result.samples)?;

    for round in 1..=rounds + 1 {
        let final_rebuild = round == rounds + 1;
        seed_archive(&mut archive, &result.samples)?;
        let predictor = SurrogatePredictor {
            models: &models,
            resolution: config.resolution,
            kappa: if final_rebuild { 0.0 } else { config.ucb_kappa },
        };
        let illumination = illuminate(&mut archive, &predictor, &config.illumination(), &mut rng)?;
        if final_rebuild {
            result.counters.final_children = illumination.children;
        } else {
            result.counters.round_children += illumination.children;
        }
        let mut failures = 0;
        if !final_rebuild {
            // Prefer elites that have not been simulated yet.
            let predicted = archive
                .elites()
                .filter(|(_, e)| e.provenance == Provenance::Predicted)
                .count();
            let skip = 1 + ((round - 1) * config.batch_size) as u64;
            let niches = if predicted >= config.batch_size {
                select_among(&archive, config.batch_size, skip, |e| {
                    e.provenance == Provenance::Predicted
                })?
            } else {
                select_among(&archive, config.batch_size, skip, |_| true)?
            };
            let genomes: Vec<ShapeGenome> = niches
                .iter()
                .map(|&n| archive.get(n).expect("picked").genome)
                .collect();
            let batch = evaluate_batch(evaluator, &genomes, round, result.samples.len());
            failures = batch.iter().filter(|s| s.outcome.is_err()).count();
            let stop = exhausted(&batch);
            result.samples.extend(batch);
            if let Some(failures) = stop {
                result.outcome = RunOutcome::BudgetExhausted {
                    round,
                    failures,
                    attempted: genomes.len(),
                };
            } else {
                models = fit_models(&result.samples)?;
            }
        }
        result.rounds.push(RoundStats {
            round,
            evaluations: result.samples.len(),
            failures,
            occupancy: archive.occupancy(),
            best_fitness: archive.best().map_or(f64::NAN, |(_, e)| e.fitness),
            mean_fitness: archive.mean_fitness().unwrap_or(f64::NAN),
            children: illumination.children,
            inserted: illumination.inserted,
            replaced: illumination.replaced,
            rejected: illumination.rejected,
            u_max_hyper: *models.u_max.hyperparams(),
            enstrophy_hyper: *models.enstrophy.hyperparams(),
        });
        result.traces.push(illumination.trace);
        result.counters.rounds = round.min(rounds);
        result.archive = Some(archive.clone());
        let phase = if final_rebuild {
            Phase::FinalRebuild
        } else {
            Phase::Round
        };
        report(phase, round, &result, progress);
        if result.outcome != RunOutcome::Completed {
            break;
        }
    }
    result.models = Some(models);
    report(Phase::Done, rounds, &result, progress);
    Ok(result)
}

/// A fresh archive of `capacity` niches filled from a finished run: seeded
/// with every simulated success, then illuminated with the final models'
/// mean predictions. Used to build larger training sets than the run's own
/// archive.
pub fn grow_archive(
    result: &RunResult,
    capacity: usize,
    illumination: &IlluminationConfig,
    seed: u64,
) -> Result<VoronoiArchive, QdError> {
    let (Some(models), Some(space)) = (&result.models, result.feature_space) else {
        return Err(QdError::EmptyArchive);
    };
    let mut archive = VoronoiArchive::new(capacity, seed, space)?;
    seed_archive(&mut archive, &result.samples)?;
    let predictor = SurrogatePredictor {
        models,
        resolution: result.config.resolution,
        kappa: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    illuminate(&mut archive, &predictor, illumination, &mut rng)?;
    Ok(archive)
}
