//! Operations shared by the HTTP API and the command line: launching and
//! observing runs, archive views, zoom, VAE training, walks, validation and
//! generated sets. Everything persists through [`Store`].

use serde::{Deserialize, Serialize};

use crate::encoding::{area, express, Bitmap, ShapeGenome};
use crate::genmodel::{
    fit_latent_predictors, generate_set, latent_walk, train_vae_with_progress, EpochLoss,
    GeneratedSet, LatentPrediction, VaeConfig, WalkPoint, DEFAULT_WALK_SPAN, DEFAULT_WALK_STEPS,
};
use crate::lbm::simulate;
use crate::qd::{
    grow_archive, sphen_run_with_progress, Evaluator, FeatureRegion, FeatureSpace,
    IlluminationConfig, LbmEvaluator, Measurement, Phase, Progress, Provenance, RunOutcome,
    RunResult, SyntheticEvaluator,
};
use crate::store::{EvaluatorKind, FullConfig, Lineage, RunRecord, RunStatus, Store, StoreError};
use crate::validate::Violation;

use super::ApiError;

pub const PROGRESS_JSON: &str = "progress.json";

/// Snapshot of a run for polling clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatusView {
    pub run_id: String,
    pub status: RunStatus,
    pub phase: Option<Phase>,
    pub round: usize,
    pub evaluations: usize,
    pub budget: usize,
    pub occupancy: usize,
    pub best_fitness: Option<f64>,
    pub outcome: Option<RunOutcome>,
    pub error: Option<String>,
    pub parent: Option<String>,
    pub has_vae: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellView {
    pub niche: usize,
    pub centroid: [f64; 2],
    pub area: f64,
    pub enstrophy: f64,
    pub fitness: f64,
    pub provenance: Provenance,
    pub genome: ShapeGenome,
    /// Run-length encoded bitmap of the expressed genome.
    pub thumbnail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveView {
    pub run_id: String,
    pub capacity: usize,
    pub occupancy: usize,
    pub resolution: usize,
    pub feature_space: FeatureSpace,
    pub cells: Vec<CellView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoomRequest {
    pub region: FeatureRegion,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub capacity: Option<usize>,
    /// Fill the initial set with Sobol samples up to the parent's
    /// `init_samples`.
    #[serde(default = "yes")]
    pub fill: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkRequest {
    /// Defaults to the prior mean.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    /// One dimension, or every dimension (one row each) when absent.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub span: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkCell {
    pub dim: usize,
    pub step: usize,
    pub offset: f64,
    pub latent: Vec<f64>,
    pub degenerate: bool,
    pub shape: Option<String>,
    pub prediction: LatentPrediction,
}

impl From<&WalkPoint> for WalkCell {
    fn from(p: &WalkPoint) -> Self {
        Self {
            dim: p.dim,
            step: p.step,
            offset: p.offset,
            latent: p.latent.clone(),
            degenerate: p.is_degenerate(),
            shape: p.shape.as_ref().map(Bitmap::to_rle),
            prediction: p.prediction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkView {
    pub resolution: usize,
    pub rows: Vec<Vec<WalkCell>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ValidateInput {
    Genome(ShapeGenome),
    Latent(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTriple {
    pub u_max: f64,
    pub area: f64,
    pub enstrophy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub shape: String,
    pub predicted: Option<FeatureTriple>,
    pub measured: Option<FeatureTriple>,
    /// `measured − predicted`, component-wise.
    pub delta: Option<FeatureTriple>,
    pub mean_drag: Option<f64>,
    pub mean_lift: Option<f64>,
    pub failure: Option<String>,
    /// Stored flow artifacts (metrics JSON and snapshot file).
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeTrainRequest {
    /// Overrides the run's VAE configuration.
    pub vae: Option<VaeConfig>,
    /// Niches of the archive grown from the final models for training.
    pub training_capacity: usize,
    /// Number of elites used for training (all when larger than the
    /// archive's occupancy).
    pub max_bitmaps: usize,
    pub seed: u64,
}

impl Default for VaeTrainRequest {
    fn default() -> Self {
        Self {
            vae: None,
            training_capacity: 4000,
            max_bitmaps: 4000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeSummary {
    pub bitmaps: usize,
    pub epochs: usize,
    pub final_loss: Option<EpochLoss>,
    pub mean_iou: f64,
    pub predictor_samples: usize,
}

pub struct Workbench {
    pub store: Store,
}

fn validation(field: &str, message: impl Into<String>) -> ApiError {
    ApiError::Validation(vec![Violation::new(field, message)])
}

impl Workbench {
    pub fn new(store: Store) -> Self {
        Self { store }
    }

    /// Validates `config` and records a new run in `created` state.
    pub fn create_run(&self, config: FullConfig) -> Result<RunRecord, ApiError> {
        let problems = config.violations();
        if !problems.is_empty() {
            return Err(ApiError::Validation(problems));
        }
        let record = RunRecord::new(config);
        self.store.create_run(&record)?;
        Ok(record)
    }

    /// Runs SPHEN for a created run, writing `progress.json` as it goes and
    /// the full result at the end. Errors mark the run failed.
    pub fn execute_run(&self, run_id: &str) -> Result<RunRecord, ApiError> {
        let record = self.store.advance(run_id, RunStatus::Running, None, None)?;
        let config = record.config.clone();
        let evaluator: Box<dyn Evaluator> = match config.evaluator {
            EvaluatorKind::Lbm => Box::new(LbmEvaluator {
                lbm: config.lbm.clone(),
                resolution: config.sphen.resolution,
            }),
            EvaluatorKind::Synthetic => Box::new(SyntheticEvaluator {
                resolution: config.sphen.resolution,
            }),
        };
        let mut on_progress = |p: &Progress| {
            let _ = self.store.write_artifact(
                run_id,
                PROGRESS_JSON,
                &serde_json::to_vec(p).expect("progress serializes"),
            );
        };
        let outcome = sphen_run_with_progress(evaluator.as_ref(), &config.sphen, &mut on_progress)
            .map_err(ApiError::from)
            .and_then(|result| {
                self.store.save_result(run_id, &result)?;
                Ok(result.outcome)
            });
        match outcome {
            Ok(outcome) => {
                Ok(self
                    .store
                    .advance(run_id, RunStatus::Finished, Some(outcome), None)?)
            }
            Err(e) => {
                self.store
                    .advance(run_id, RunStatus::Failed, None, Some(e.to_string()))?;
                Err(e)
            }
        }
    }

    /// Marks runs left `running` by a previous process as failed.
    pub fn recover_stale(&self) -> Result<Vec<String>, ApiError> {
        let mut recovered = Vec::new();
        for r in self.store.list()? {
            if r.status == RunStatus::Running {
                self.store.advance(
                    &r.run_id,
                    RunStatus::Failed,
                    None,
                    Some("interrupted: the server stopped while the run was in progress".into()),
                )?;
                recovered.push(r.run_id);
            }
        }
        Ok(recovered)
    }

    pub fn status(&self, run_id: &str) -> Result<RunStatusView, ApiError> {
        let record = self.store.load_record(run_id)?;
        let progress: Option<Progress> = self
            .store
            .read_artifact(run_id, PROGRESS_JSON)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());
        let budget = record.config.sphen.total_budget;
        let mut view = RunStatusView {
            run_id: record.run_id.clone(),
            status: record.status,
            phase: progress.map(|p| p.phase),
            round: progress.map_or(0, |p| p.round),
            evaluations: progress.map_or(0, |p| p.evaluations),
            budget,
            occupancy: progress.map_or(0, |p| p.occupancy),
            best_fitness: progress.and_then(|p| p.best_fitness),
            outcome: record.outcome.clone(),
            error: record.error.clone(),
            parent: record.lineage.as_ref().map(|l| l.parent.clone()),
            has_vae: self.store.has_artifact(run_id, "vae/weights.fdav"),
        };
        if record.status == RunStatus::Finished {
            let result = self.store.load_result(run_id)?;
            view.evaluations = result.evaluations();
            if let Some(a) = &result.archive {
                view.occupancy = a.occupancy();
                view.best_fitness = a.best().map(|(_, e)| e.fitness);
            }
        }
        Ok(view)
    }

    pub fn list(&self) -> Result<Vec<RunStatusView>, ApiError> {
        self.store
            .list()?
            .iter()
            .map(|r| self.status(&r.run_id))
            .collect()
    }

    fn finished_result(&self, run_id: &str) -> Result<(RunRecord, RunResult), ApiError> {
        let record = self.store.load_record(run_id)?;
        if record.status != RunStatus::Finished {
            return Err(ApiError::NotReady(format!(
                "run {run_id} is {:?}",
                record.status
            )));
        }
        let result = self.store.load_result(run_id)?;
        Ok((record, result))
    }

    /// The run's archive, optionally re-assigned to a fresh tessellation of
    /// `max_cells` niches.
    pub fn archive_view(
        &self,
        run_id: &str,
        max_cells: Option<usize>,
        thumbnails: bool,
    ) -> Result<ArchiveView, ApiError> {
        let (record, result) = self.finished_result(run_id)?;
        let archive = result
            .archive
            .ok_or_else(|| ApiError::NotReady(format!("run {run_id} has no archive")))?;
        let archive = match max_cells {
            Some(0) => return Err(validation("max_cells", "must be at least 1")),
            Some(k) => archive.reduced(k, record.config.sphen.rng_seed)?,
            None => archive,
        };
        let resolution = record.config.sphen.resolution;
        let cells = archive
            .elites()
            .map(|(niche, e)| CellView {
                niche,
                centroid: archive.centroids()[niche],
                area: e.area,
                enstrophy: e.enstrophy,
                fitness: e.fitness,
                provenance: e.provenance,
                genome: e.genome,
                thumbnail: thumbnails
                    .then(|| express(&e.genome, resolution).ok().map(|b| b.to_rle()))
                    .flatten(),
            })
            .collect();
        Ok(ArchiveView {
            run_id: run_id.to_string(),
            capacity: archive.capacity(),
            occupancy: archive.occupancy(),
            resolution,
            feature_space: *archive.feature_space(),
            cells,
        })
    }

    /// Creates a child run restricted to `request.region` of the parent's
    /// normalized feature square. Its initial set is every parent elite in
    /// the region, topped up with Sobol samples when `fill` is set.
    pub fn zoom(&self, parent_id: &str, request: &ZoomRequest) -> Result<RunRecord, ApiError> {
        if !request.region.is_valid() {
            return Err(validation(
                "region",
                "must lie in [0,1]² with positive width and height",
            ));
        }
        let (parent, result) = self.finished_result(parent_id)?;
        let archive = result
            .archive
            .ok_or_else(|| ApiError::NotReady(format!("run {parent_id} has no archive")))?;
        let seeds: Vec<ShapeGenome> = archive
            .elites()
            .filter(|(_, e)| request.region.contains(archive.normalized(e)))
            .map(|(_, e)| e.genome)
            .collect();
        if seeds.is_empty() && !request.fill {
            return Err(ApiError::EmptyRegion);
        }
        let mut config = parent.config.clone();
        let sphen = &mut config.sphen;
        let init = if request.fill {
            sphen.init_samples.max(seeds.len())
        } else {
            seeds.len()
        };
        let rounds = match request.budget {
            Some(b) if b < init => {
                return Err(validation(
                    "budget",
                    format!("must be at least the {init} initial samples"),
                ))
            }
            Some(b) => (b - init) / sphen.batch_size,
            None => sphen.rounds(),
        };
        sphen.init_samples = init;
        sphen.total_budget = init + rounds * sphen.batch_size;
        if let Some(c) = request.capacity {
            sphen.archive_capacity = c;
        }
        sphen.feature_space = Some(archive.feature_space().subspace(&request.region)?);
        sphen.seed_genomes = seeds;
        let problems = config.violations();
        if !problems.is_empty() {
            return Err(ApiError::Validation(problems));
        }
        let mut record = RunRecord::new(config);
        record.lineage = Some(Lineage {
            parent: parent_id.to_string(),
            region: request.region,
        });
        self.store.create_run(&record)?;
        Ok(record)
    }

    /// Grows a training archive from the run's final models, trains the VAE
    /// on its bitmaps, fits latent predictors on the simulated samples, and
    /// stores both.
    pub fn train_vae(
        &self,
        run_id: &str,
        request: &VaeTrainRequest,
        on_epoch: &mut dyn FnMut(&EpochLoss),
    ) -> Result<VaeSummary, ApiError> {
        let (record, result) = self.finished_result(run_id)?;
        let vae = request.vae.clone().unwrap_or(record.config.vae.clone());
        let resolution = vae.input_resolution;
        let sphen = &record.config.sphen;
        let illumination = IlluminationConfig {
            updates: sphen.archive_updates_per_round,
            children_per_update: sphen.children_per_update,
            mutation_sigma: sphen.mutation_sigma,
        };
        let grown = grow_archive(
            &result,
            request.training_capacity.max(1),
            &illumination,
            request.seed,
        )?;
        let bitmaps: Vec<Bitmap> = grown
            .elites()
            .take(request.max_bitmaps)
            .map(|(_, e)| express(&e.genome, resolution))
            .collect::<Result<_, _>>()
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let model = train_vae_with_progress(&bitmaps, &vae, on_epoch)?;
        let refs: Vec<&Bitmap> = bitmaps.iter().collect();
        let latents = model.encode_batch(&refs)?;
        let decoded = model.decode_batch(&latents)?;
        let mean_iou = decoded
            .iter()
            .zip(&bitmaps)
            .map(|(d, b)| d.as_ref().map_or(0.0, |d| d.iou(b)))
            .sum::<f64>()
            / bitmaps.len() as f64;
        let samples: Vec<(Bitmap, Measurement)> = result
            .successes()
            .map(|(s, m)| Ok((express(&s.genome, resolution)?, *m)))
            .collect::<Result<_, crate::encoding::EncodingError>>()
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let predictors = fit_latent_predictors(&model, &samples)?;
        self.store.save_vae(run_id, &model)?;
        self.store.save_predictors(run_id, &predictors)?;
        Ok(VaeSummary {
            bitmaps: bitmaps.len(),
            epochs: model.history().len(),
            final_loss: model.history().last().copied(),
            mean_iou,
            predictor_samples: samples.len(),
        })
    }

    pub fn walk(&self, run_id: &str, request: &WalkRequest) -> Result<WalkView, ApiError> {
        let (resolution, rows) = self.walk_points(run_id, request)?;
        Ok(WalkView {
            resolution,
            rows: rows
                .iter()
                .map(|row| row.iter().map(WalkCell::from).collect())
                .collect(),
        })
    }

    /// Rows of walk points (one per walked dimension) and the bitmap
    /// resolution.
    pub fn walk_points(
        &self,
        run_id: &str,
        request: &WalkRequest,
    ) -> Result<(usize, Vec<Vec<WalkPoint>>), ApiError> {
        self.store.load_record(run_id)?;
        if !self.store.has_artifact(run_id, "vae/weights.fdav") {
            return Err(ApiError::NotReady(format!(
                "run {run_id} has no trained VAE"
            )));
        }
        let model = self.store.load_vae(run_id)?;
        let predictors = self.store.load_predictors(run_id)?;
        let d = model.latent_dim();
        let center = request.center.clone().unwrap_or_else(|| vec![0.0; d]);
        let steps = request.steps.unwrap_or(DEFAULT_WALK_STEPS);
        let span = request.span.unwrap_or(DEFAULT_WALK_SPAN);
        if center.len() != d {
            return Err(validation("center", format!("must have {d} components")));
        }
        if let Some(dim) = request.dim {
            if dim >= d {
                return Err(validation(
                    "dim",
                    format!("must be below the latent dimension {d}"),
                ));
            }
        }
        if steps == 0 || steps % 2 == 0 {
            return Err(validation("steps", "must be odd"));
        }
        if !(span.is_finite() && span >= 0.0) {
            return Err(validation("span", "must be finite and non-negative"));
        }
        let dims: Vec<usize> = match request.dim {
            Some(dim) => vec![dim],
            None => (0..d).collect(),
        };
        let rows = dims
            .into_iter()
            .map(|dim| latent_walk(&model, &predictors, &center, dim, steps, span))
            .collect::<Result<_, _>>()?;
        Ok((model.resolution(), rows))
    }

    /// Simulates a genome (or a decoded latent) with the run's evaluator
    /// and reports measured features next to the predictions.
    pub fn validate(
        &self,
        run_id: &str,
        input: &ValidateInput,
    ) -> Result<ValidationReport, ApiError> {
        let record = self.store.load_record(run_id)?;
        let config = &record.config;
        let resolution = config.sphen.resolution;
        let (bitmap, genome, predicted) = match input {
            ValidateInput::Genome(g) => {
                let bitmap =
                    express(g, resolution).map_err(|e| validation("genome", e.to_string()))?;
                let predicted = if record.status == RunStatus::Finished {
                    self.store
                        .load_result(run_id)?
                        .models
                        .map(|m| -> Result<_, ApiError> {
                            Ok(FeatureTriple {
                                u_max: m.u_max.predict_mean(g.params())?,
                                area: area(&bitmap),
                                enstrophy: m.enstrophy.predict_mean(g.params())?,
                            })
                        })
                } else {
                    None
                };
                (bitmap, Some(*g), predicted.transpose()?)
            }
            ValidateInput::Latent(z) => {
                if !self.store.has_artifact(run_id, "vae/weights.fdav") {
                    return Err(ApiError::NotReady(format!(
                        "run {run_id} has no trained VAE"
                    )));
                }
                let model = self.store.load_vae(run_id)?;
                if z.len() != model.latent_dim() {
                    return Err(validation(
                        "latent",
                        format!("must have {} components", model.latent_dim()),
                    ));
                }
                let predictors = self.store.load_predictors(run_id)?;
                let p = predictors.predict(z)?;
                let predicted = FeatureTriple {
                    u_max: p.u_max,
                    area: p.area,
                    enstrophy: p.enstrophy,
                };
                let bitmap = match model.decode(z) {
                    Ok(b) => b,
                    Err(e) if e.is_degenerate() => {
                        return Ok(ValidationReport {
                            ok: false,
                            shape: String::new(),
                            predicted: Some(predicted),
                            measured: None,
                            delta: None,
                            mean_drag: None,
                            mean_lift: None,
                            failure: Some("latent decodes to an empty shape".into()),
                            artifacts: Vec::new(),
                        })
                    }
                    Err(e) => return Err(e.into()),
                };
                (bitmap, None, Some(predicted))
            }
        };
        let mut report = ValidationReport {
            ok: false,
            shape: bitmap.to_rle(),
            predicted,
            measured: None,
            delta: None,
            mean_drag: None,
            mean_lift: None,
            failure: None,
            artifacts: Vec::new(),
        };
        let measured = match (config.evaluator, genome) {
            (EvaluatorKind::Synthetic, Some(g)) => {
                Ok((SyntheticEvaluator::features(&g, area(&bitmap)), None))
            }
            _ => simulate(&bitmap, &config.lbm)
                .map(|m| {
                    (
                        Measurement {
                            u_max: m.u_max,
                            enstrophy: m.enstrophy,
                            area: m.area,
                        },
                        Some(m),
                    )
                })
                .map_err(|e| e.to_string()),
        };
        match measured {
            Ok((m, flow)) => {
                let measured = FeatureTriple {
                    u_max: m.u_max,
                    area: m.area,
                    enstrophy: m.enstrophy,
                };
                report.ok = true;
                report.measured = Some(measured);
                report.delta = predicted.map(|p| FeatureTriple {
                    u_max: measured.u_max - p.u_max,
                    area: measured.area - p.area,
                    enstrophy: measured.enstrophy - p.enstrophy,
                });
                if let Some(flow) = flow {
                    report.mean_drag = Some(flow.mean_drag);
                    report.mean_lift = Some(flow.mean_lift);
                    let name = format!("validate-{}", uuid::Uuid::new_v4().simple());
                    report.artifacts = self.store.save_flow(run_id, &name, &flow)?;
                }
            }
            Err(reason) => report.failure = Some(reason),
        }
        Ok(report)
    }

    /// Generated set from the run's VAE, stored under `generated/`.
    pub fn generate(
        &self,
        run_id: &str,
        n: usize,
        capacity: usize,
        seed: u64,
        bins: usize,
    ) -> Result<GeneratedSet, ApiError> {
        if capacity == 0 {
            return Err(validation("capacity", "must be at least 1"));
        }
        if !self.store.has_artifact(run_id, "vae/weights.fdav") {
            return Err(ApiError::NotReady(format!(
                "run {run_id} has no trained VAE"
            )));
        }
        let model = self.store.load_vae(run_id)?;
        let predictors = self.store.load_predictors(run_id)?;
        let set = generate_set(&model, &predictors, n, capacity, None, seed, bins)?;
        let mut table = Vec::new();
        set.write_table_csv(&mut table)?;
        self.store
            .write_artifact(run_id, "generated/table.csv", &table)?;
        let mut isolines = Vec::new();
        set.write_isolines_csv(&mut isolines)?;
        self.store
            .write_artifact(run_id, "generated/isolines.csv", &isolines)?;
        Ok(set)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(what) => ApiError::NotFound(what),
            StoreError::Validation(v) => ApiError::Validation(v),
            StoreError::ConflictingRunId(id) => {
                ApiError::Conflict(format!("run id {id} already exists"))
            }
            StoreError::RegionOutsideParent(_) => validation("region", e.to_string()),
            StoreError::InvalidTransition { .. } => ApiError::Conflict(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}
