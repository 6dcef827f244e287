//! Directory-per-run persistence.
//!
//! ```text
//! <root>/runs/<run_id>/
//!   run.json        RunRecord
//!   config.json     FullConfig
//!   result.json     outcome, feature space, counters
//!   samples.csv     every simulated genome
//!   archive.csv     final archive (qd archive schema)
//!   centroids.csv   niche tessellation
//!   stats.csv       per-round statistics
//!   traces.csv      accepted children per illumination
//!   models/         u_max.json, enstrophy.json
//!   vae/            weights.fdav, config.json, history.csv, predictors.json
//!   flow/           <name>.fdaf snapshots, <name>.json metrics
//!   manifest.json   sha256 of every file above
//! ```
//!
//! Every write goes to a temporary file first and is renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{ShapeGenome, GENOME_LEN};
use crate::genmodel::{EpochLoss, LatentPredictorSet, VaeConfig, VaeModel};
use crate::lbm::{write_fdaf, FlowMetrics};
use crate::qd::{
    Counters, FeatureSpace, Measurement, Models, RoundStats, RunOutcome, RunResult, Sample,
    TraceEvent, VoronoiArchive,
};
use crate::surrogate::{GpHyperparams, GpModel};

use super::{RunRecord, RunStatus, StoreError};

pub const MANIFEST: &str = "manifest.json";
pub const RUN_JSON: &str = "run.json";
pub const SAMPLES_CSV_HEADER: &[&str] = &[
    "id",
    "round",
    "status",
    "u_max",
    "enstrophy",
    "area",
    "error",
];
pub const STATS_CSV_HEADER: &[&str] = &[
    "round",
    "evaluations",
    "failures",
    "occupancy",
    "best_fitness",
    "mean_fitness",
    "children",
    "inserted",
    "replaced",
    "rejected",
    "u_max_length_scale",
    "u_max_signal_variance",
    "u_max_noise_variance",
    "enstrophy_length_scale",
    "enstrophy_signal_variance",
    "enstrophy_noise_variance",
];
pub const TRACES_CSV_HEADER: &[&str] = &["illumination", "update", "niche", "fitness"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path to lowercase hex sha256.
    pub files: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ResultSummary {
    outcome: RunOutcome,
    feature_space: Option<FeatureSpace>,
    counters: Counters,
    has_archive: bool,
    has_models: bool,
    illuminations: usize,
}

#[derive(Serialize, Deserialize)]
struct VaeSidecar {
    config: VaeConfig,
    history: Vec<EpochLoss>,
}

/// A loaded run: its record and, lazily through [`Store`], its artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct RunHandle {
    pub record: RunRecord,
    pub dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn storage_error(e: io::Error) -> StoreError {
    match e.kind() {
        io::ErrorKind::StorageFull | io::ErrorKind::QuotaExceeded => StoreError::StorageFull,
        _ => StoreError::Io(e),
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("artifact paths have a parent");
    fs::create_dir_all(dir).map_err(storage_error)?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.{}.tmp", uuid::Uuid::new_v4().simple()));
    let written = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(storage_error(e));
    }
    Ok(())
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn valid_relative(rel: &str) -> bool {
    !rel.is_empty()
        && !rel.starts_with('/')
        && rel
            .split('/')
            .all(|part| !part.is_empty() && part != "." && part != "..")
}

fn csv_bytes(
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>, StoreError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.into_inner()
        .map_err(|e| StoreError::Format(e.to_string()))
}

fn csv_error(e: csv::Error) -> StoreError {
    StoreError::Format(e.to_string())
}

fn csv_rows(bytes: &[u8], width: usize, what: &str) -> Result<Vec<csv::StringRecord>, StoreError> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != width {
            return Err(StoreError::Format(format!(
                "{what}: row has {} fields, expected {width}",
                rec.len()
            )));
        }
        rows.push(rec);
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    i: usize,
    what: &str,
) -> Result<T, StoreError>
where
    T::Err: std::fmt::Display,
{
    rec[i]
        .parse()
        .map_err(|e| StoreError::Format(format!("{what} column {i}: {e}")))
}

fn genome_header(mut header: Vec<String>) -> Vec<String> {
    header.extend((0..GENOME_LEN).map(|i| format!("g{i}")));
    header
}

fn owned(header: &[&str]) -> Vec<String> {
    header.iter().map(|s| s.to_string()).collect()
}

pub struct Store {
    root: PathBuf,
    manifest_lock: Mutex<()>,
}

impl Store {
    /// Opens (creating if needed) a data directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("runs")).map_err(storage_error)?;
        Ok(Self {
            root,
            manifest_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    fn existing_dir(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        let dir = self.run_dir(run_id);
        if !valid_run_id(run_id) || !dir.join(RUN_JSON).is_file() {
            return Err(StoreError::NotFound(run_id.to_string()));
        }
        Ok(dir)
    }

    pub fn exists(&self, run_id: &str) -> bool {
        self.existing_dir(run_id).is_ok()
    }

    /// Creates the run directory and writes `run.json` and `config.json`.
    /// A zoom child's parent must exist and its region must be a valid
    /// subregion of the parent's normalized feature square.
    pub fn create_run(&self, record: &RunRecord) -> Result<(), StoreError> {
        if !valid_run_id(&record.run_id) {
            return Err(StoreError::Format(format!(
                "run id {:?} is not a plain identifier",
                record.run_id
            )));
        }
        if let Some(lineage) = &record.lineage {
            if !lineage.region.is_valid() {
                return Err(StoreError::RegionOutsideParent(lineage.region));
            }
            self.existing_dir(&lineage.parent)?;
        }
        let dir = self.run_dir(&record.run_id);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(StoreError::ConflictingRunId(record.run_id.clone()))
            }
            Err(e) => return Err(storage_error(e)),
        }
        self.write_artifact(
            &record.run_id,
            "config.json",
            record.config.to_json().as_bytes(),
        )?;
        self.save_record(record)
    }

    /// Rewrites `run.json`. The artifact list is refreshed from the
    /// manifest.
    pub fn save_record(&self, record: &RunRecord) -> Result<(), StoreError> {
        let mut record = record.clone();
        record.artifacts = self
            .manifest(&record.run_id)?
            .files
            .into_keys()
            .filter(|k| k != RUN_JSON)
            .collect();
        let json = serde_json::to_vec_pretty(&record).expect("record serializes");
        self.write_artifact(&record.run_id, RUN_JSON, &json)
    }

    pub fn load_record(&self, run_id: &str) -> Result<RunRecord, StoreError> {
        self.existing_dir(run_id)?;
        let bytes = self.read_artifact(run_id, RUN_JSON)?;
        serde_json::from_slice(&bytes).map_err(|e| self.corrupt(run_id, RUN_JSON, e.to_string()))
    }

    /// Moves a run forward and persists the change.
    pub fn advance(
        &self,
        run_id: &str,
        status: RunStatus,
        outcome: Option<RunOutcome>,
        error: Option<String>,
    ) -> Result<RunRecord, StoreError> {
        let mut record = self.load_record(run_id)?;
        record.advance(status)?;
        if outcome.is_some() {
            record.outcome = outcome;
        }
        if error.is_some() {
            record.error = error;
        }
        self.save_record(&record)?;
        self.load_record(run_id)
    }

    /// All runs, oldest first.
    pub fn list(&self) -> Result<Vec<RunRecord>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("runs"))? {
            let entry = entry?;
            let Some(id) = entry.file_name().to_str().map(str::to_string) else {
                continue;
            };
            if self.exists(&id) {
                out.push(self.load_record(&id)?);
            }
        }
        out.sort_by(|a, b| (a.created_ms, &a.run_id).cmp(&(b.created_ms, &b.run_id)));
        Ok(out)
    }

    pub fn manifest(&self, run_id: &str) -> Result<Manifest, StoreError> {
        let path = self.run_dir(run_id).join(MANIFEST);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| self.corrupt(run_id, MANIFEST, e.to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(e.into()),
        }
    }

    fn corrupt(&self, run_id: &str, rel: &str, reason: String) -> StoreError {
        StoreError::CorruptArtifact {
            run_id: run_id.to_string(),
            path: rel.to_string(),
            reason,
        }
    }

    /// Atomically writes `rel` under the run directory and records its
    /// checksum.
    pub fn write_artifact(&self, run_id: &str, rel: &str, bytes: &[u8]) -> Result<(), StoreError> {
        if !valid_relative(rel) || rel == MANIFEST {
            return Err(StoreError::Format(format!(
                "artifact path {rel:?} is not allowed"
            )));
        }
        let dir = self.run_dir(run_id);
        if !dir.is_dir() {
            return Err(StoreError::NotFound(run_id.to_string()));
        }
        let _guard = self.manifest_lock.lock().unwrap_or_else(|p| p.into_inner());
        atomic_write(&dir.join(rel), bytes)?;
        let mut manifest = self.manifest(run_id)?;
        manifest.files.insert(rel.to_string(), sha256_hex(bytes));
        atomic_write(
            &dir.join(MANIFEST),
            &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
        )
    }

    /// Reads an artifact, checking it against the manifest.
    pub fn read_artifact(&self, run_id: &str, rel: &str) -> Result<Vec<u8>, StoreError> {
        // Held so a concurrent write cannot pair a new file with an old
        // checksum.
        let _guard = self.manifest_lock.lock().unwrap_or_else(|p| p.into_inner());
        let manifest = self.manifest(run_id)?;
        let Some(expected) = manifest.files.get(rel) else {
            return Err(StoreError::NotFound(format!("{run_id}/{rel}")));
        };
        let bytes = fs::read(self.run_dir(run_id).join(rel))
            .map_err(|e| self.corrupt(run_id, rel, e.to_string()))?;
        if &sha256_hex(&bytes) != expected {
            return Err(self.corrupt(run_id, rel, "checksum mismatch".into()));
        }
        Ok(bytes)
    }

    pub fn has_artifact(&self, run_id: &str, rel: &str) -> bool {
        self.manifest(run_id)
            .is_ok_and(|m| m.files.contains_key(rel))
    }

    /// Checks every file listed in the manifest.
    pub fn verify(&self, run_id: &str) -> Result<(), StoreError> {
        for rel in self.manifest(run_id)?.files.keys() {
            self.read_artifact(run_id, rel)?;
        }
        Ok(())
    }

    /// Creates a run from `record` and writes all of `result`'s artifacts.
    pub fn save_run(&self, record: &RunRecord, result: &RunResult) -> Result<String, StoreError> {
        self.create_run(record)?;
        self.save_result(&record.run_id, result)?;
        self.save_record(record)?;
        Ok(record.run_id.clone())
    }

    /// Opens a run, verifying every checksum.
    pub fn load_run(&self, run_id: &str) -> Result<RunHandle, StoreError> {
        let dir = self.existing_dir(run_id)?;
        self.verify(run_id)?;
        Ok(RunHandle {
            record: self.load_record(run_id)?,
            dir,
        })
    }

    pub fn save_result(&self, run_id: &str, result: &RunResult) -> Result<(), StoreError> {
        let summary = ResultSummary {
            outcome: result.outcome.clone(),
            feature_space: result.feature_space,
            counters: result.counters,
            has_archive: result.archive.is_some(),
            has_models: result.models.is_some(),
            illuminations: result.traces.len(),
        };
        self.write_artifact(
            run_id,
            "sphen.json",
            &serde_json::to_vec_pretty(&result.config).expect("config serializes"),
        )?;
        self.write_artifact(
            run_id,
            "result.json",
            &serde_json::to_vec_pretty(&summary).expect("summary serializes"),
        )?;
        self.write_artifact(run_id, "samples.csv", &samples_csv(&result.samples)?)?;
        self.write_artifact(run_id, "stats.csv", &stats_csv(&result.rounds)?)?;
        self.write_artifact(run_id, "traces.csv", &traces_csv(&result.traces)?)?;
        if let Some(archive) = &result.archive {
            self.save_archive(run_id, "", archive)?;
        }
        if let Some(models) = &result.models {
            self.write_artifact(
                run_id,
                "models/u_max.json",
                models.u_max.to_json().as_bytes(),
            )?;
            self.write_artifact(
                run_id,
                "models/enstrophy.json",
                models.enstrophy.to_json().as_bytes(),
            )?;
        }
        Ok(())
    }

    /// Writes `<prefix>archive.csv` and `<prefix>centroids.csv`.
    pub fn save_archive(
        &self,
        run_id: &str,
        prefix: &str,
        archive: &VoronoiArchive,
    ) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        archive.write_csv(&mut buf)?;
        self.write_artifact(run_id, &format!("{prefix}archive.csv"), &buf)?;
        let rows = archive
            .centroids()
            .iter()
            .enumerate()
            .map(|(i, c)| vec![i.to_string(), c[0].to_string(), c[1].to_string()]);
        let header = owned(&["niche_id", "centroid_a", "centroid_e"]);
        self.write_artifact(
            run_id,
            &format!("{prefix}centroids.csv"),
            &csv_bytes(&header, rows)?,
        )
    }

    pub fn load_archive(
        &self,
        run_id: &str,
        prefix: &str,
        space: FeatureSpace,
    ) -> Result<VoronoiArchive, StoreError> {
        let cpath = format!("{prefix}centroids.csv");
        let apath = format!("{prefix}archive.csv");
        let wrap = |rel: &str, e: StoreError| match e {
            StoreError::Format(reason) => self.corrupt(run_id, rel, reason),
            other => other,
        };
        let cbytes = self.read_artifact(run_id, &cpath)?;
        let centroids = csv_rows(&cbytes, 3, "centroids")
            .and_then(|rows| {
                rows.iter()
                    .map(|r| Ok([field(r, 1, "centroids")?, field(r, 2, "centroids")?]))
                    .collect::<Result<Vec<[f64; 2]>, StoreError>>()
            })
            .map_err(|e| wrap(&cpath, e))?;
        let abytes = self.read_artifact(run_id, &apath)?;
        VoronoiArchive::read_csv(abytes.as_slice(), centroids, space)
            .map_err(|e| self.corrupt(run_id, &apath, e.to_string()))
    }

    pub fn load_result(&self, run_id: &str) -> Result<RunResult, StoreError> {
        let parse = |rel: &str| -> Result<Vec<u8>, StoreError> { self.read_artifact(run_id, rel) };
        let config = serde_json::from_slice(&parse("sphen.json")?)
            .map_err(|e| self.corrupt(run_id, "sphen.json", e.to_string()))?;
        let summary: ResultSummary = serde_json::from_slice(&parse("result.json")?)
            .map_err(|e| self.corrupt(run_id, "result.json", e.to_string()))?;
        let in_file =
            |rel: &'static str| move |e: StoreError| self.corrupt(run_id, rel, e.to_string());
        let samples = read_samples(&parse("samples.csv")?).map_err(in_file("samples.csv"))?;
        let rounds = read_stats(&parse("stats.csv")?).map_err(in_file("stats.csv"))?;
        let traces = read_traces(&parse("traces.csv")?, summary.illuminations)
            .map_err(in_file("traces.csv"))?;
        let archive = match (summary.has_archive, summary.feature_space) {
            (true, Some(space)) => Some(self.load_archive(run_id, "", space)?),
            (true, None) => {
                return Err(self.corrupt(
                    run_id,
                    "result.json",
                    "archive without feature space".into(),
                ))
            }
            _ => None,
        };
        let models = if summary.has_models {
            let gp = |rel: &str| -> Result<GpModel, StoreError> {
                GpModel::from_json(std::str::from_utf8(&parse(rel)?).unwrap_or(""))
                    .map_err(|e| self.corrupt(run_id, rel, e.to_string()))
            };
            Some(Models {
                u_max: gp("models/u_max.json")?,
                enstrophy: gp("models/enstrophy.json")?,
            })
        } else {
            None
        };
        Ok(RunResult {
            config,
            outcome: summary.outcome,
            feature_space: summary.feature_space,
            archive,
            samples,
            rounds,
            models,
            counters: summary.counters,
            traces,
        })
    }

    pub fn save_vae(&self, run_id: &str, model: &VaeModel) -> Result<(), StoreError> {
        let mut weights = Vec::new();
        model.write_weights(&mut weights)?;
        self.write_artifact(run_id, "vae/weights.fdav", &weights)?;
        let sidecar = VaeSidecar {
            config: model.config().clone(),
            history: model.history().to_vec(),
        };
        self.write_artifact(
            run_id,
            "vae/config.json",
            &serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"),
        )?;
        let rows = model.history().iter().map(|h| {
            vec![
                h.epoch.to_string(),
                h.reconstruction.to_string(),
                h.kl.to_string(),
                h.total.to_string(),
            ]
        });
        let history = csv_bytes(&owned(&["epoch", "reconstruction", "kl", "total"]), rows)?;
        self.write_artifact(run_id, "vae/history.csv", &history)
    }

    pub fn load_vae(&self, run_id: &str) -> Result<VaeModel, StoreError> {
        let sidecar: VaeSidecar =
            serde_json::from_slice(&self.read_artifact(run_id, "vae/config.json")?)
                .map_err(|e| self.corrupt(run_id, "vae/config.json", e.to_string()))?;
        let weights = self.read_artifact(run_id, "vae/weights.fdav")?;
        VaeModel::read_weights(weights.as_slice(), sidecar.config, sidecar.history)
            .map_err(|e| self.corrupt(run_id, "vae/weights.fdav", e.to_string()))
    }

    pub fn save_predictors(
        &self,
        run_id: &str,
        predictors: &LatentPredictorSet,
    ) -> Result<(), StoreError> {
        self.write_artifact(
            run_id,
            "vae/predictors.json",
            predictors.to_json().as_bytes(),
        )
    }

    pub fn load_predictors(&self, run_id: &str) -> Result<LatentPredictorSet, StoreError> {
        let bytes = self.read_artifact(run_id, "vae/predictors.json")?;
        LatentPredictorSet::from_json(std::str::from_utf8(&bytes).unwrap_or(""))
            .map_err(|e| self.corrupt(run_id, "vae/predictors.json", e.to_string()))
    }

    /// Writes `flow/<name>.json` (metrics without snapshots) and, when there
    /// are snapshots, `flow/<name>.fdaf`. Returns the written paths.
    pub fn save_flow(
        &self,
        run_id: &str,
        name: &str,
        metrics: &FlowMetrics,
    ) -> Result<Vec<String>, StoreError> {
        let mut paths = Vec::new();
        let summary = FlowMetrics {
            snapshots: Vec::new(),
            ..metrics.clone()
        };
        let json_path = format!("flow/{name}.json");
        self.write_artifact(
            run_id,
            &json_path,
            &serde_json::to_vec_pretty(&summary).expect("metrics serialize"),
        )?;
        paths.push(json_path);
        if !metrics.snapshots.is_empty() {
            let mut buf = Vec::new();
            write_fdaf(&mut buf, &metrics.snapshots)
                .map_err(|e| StoreError::Format(e.to_string()))?;
            let path = format!("flow/{name}.fdaf");
            self.write_artifact(run_id, &path, &buf)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

fn samples_csv(samples: &[Sample]) -> Result<Vec<u8>, StoreError> {
    let rows = samples.iter().map(|s| {
        let (status, m, err) = match &s.outcome {
            Ok(m) => ("ok", Some(m), String::new()),
            Err(e) => ("failed", None, e.clone()),
        };
        let num = |f: fn(&Measurement) -> f64| m.map(|m| f(m).to_string()).unwrap_or_default();
        let mut row = vec![
            s.id.to_string(),
            s.round.to_string(),
            status.to_string(),
            num(|m| m.u_max),
            num(|m| m.enstrophy),
            num(|m| m.area),
            err,
        ];
        row.extend(s.genome.params().iter().map(|g| g.to_string()));
        row
    });
    csv_bytes(&genome_header(owned(SAMPLES_CSV_HEADER)), rows)
}

fn read_samples(bytes: &[u8]) -> Result<Vec<Sample>, StoreError> {
    let width = SAMPLES_CSV_HEADER.len() + GENOME_LEN;
    csv_rows(bytes, width, "samples")?
        .iter()
        .map(|r| {
            let genes: Vec<f64> = (SAMPLES_CSV_HEADER.len()..width)
                .map(|i| field(r, i, "samples"))
                .collect::<Result<_, _>>()?;
            let outcome = match &r[2] {
                "ok" => Ok(Measurement {
                    u_max: field(r, 3, "samples")?,
                    enstrophy: field(r, 4, "samples")?,
                    area: field(r, 5, "samples")?,
                }),
                "failed" => Err(r[6].to_string()),
                other => return Err(StoreError::Format(format!("sample status {other:?}"))),
            };
            Ok(Sample {
                id: field(r, 0, "samples")?,
                round: field(r, 1, "samples")?,
                genome: ShapeGenome::from_slice(&genes)
                    .map_err(|e| StoreError::Format(e.to_string()))?,
                outcome,
            })
        })
        .collect()
}

fn stats_csv(rounds: &[RoundStats]) -> Result<Vec<u8>, StoreError> {
    let rows = rounds.iter().map(|r| {
        let h = |g: &GpHyperparams| {
            [g.length_scale, g.signal_variance, g.noise_variance].map(|v| v.to_string())
        };
        let mut row = vec![
            r.round.to_string(),
            r.evaluations.to_string(),
            r.failures.to_string(),
            r.occupancy.to_string(),
            r.best_fitness.to_string(),
            r.mean_fitness.to_string(),
            r.children.to_string(),
            r.inserted.to_string(),
            r.replaced.to_string(),
            r.rejected.to_string(),
        ];
        row.extend(h(&r.u_max_hyper));
        row.extend(h(&r.enstrophy_hyper));
        row
    });
    csv_bytes(&owned(STATS_CSV_HEADER), rows)
}

fn read_stats(bytes: &[u8]) -> Result<Vec<RoundStats>, StoreError> {
    csv_rows(bytes, STATS_CSV_HEADER.len(), "stats")?
        .iter()
        .map(|r| {
            let f = |i| field::<f64>(r, i, "stats");
            let u = |i| field::<usize>(r, i, "stats");
            let hyper = |i: usize| -> Result<GpHyperparams, StoreError> {
                Ok(GpHyperparams {
                    length_scale: f(i)?,
                    signal_variance: f(i + 1)?,
                    noise_variance: f(i + 2)?,
                })
            };
            Ok(RoundStats {
                round: u(0)?,
                evaluations: u(1)?,
                failures: u(2)?,
                occupancy: u(3)?,
                best_fitness: f(4)?,
                mean_fitness: f(5)?,
                children: u(6)?,
                inserted: u(7)?,
                replaced: u(8)?,
                rejected: u(9)?,
                u_max_hyper: hyper(10)?,
                enstrophy_hyper: hyper(13)?,
            })
        })
        .collect()
}

fn traces_csv(traces: &[Vec<TraceEvent>]) -> Result<Vec<u8>, StoreError> {
    let rows = traces.iter().enumerate().flat_map(|(i, t)| {
        t.iter().map(move |e| {
            vec![
                i.to_string(),
                e.update.to_string(),
                e.niche.to_string(),
                e.fitness.to_string(),
            ]
        })
    });
    csv_bytes(&owned(TRACES_CSV_HEADER), rows)
}

fn read_traces(bytes: &[u8], illuminations: usize) -> Result<Vec<Vec<TraceEvent>>, StoreError> {
    let mut traces = vec![Vec::new(); illuminations];
    for r in csv_rows(bytes, TRACES_CSV_HEADER.len(), "traces")? {
        let i: usize = field(&r, 0, "traces")?;
        let slot = traces.get_mut(i).ok_or_else(|| {
            StoreError::Format(format!("trace for illumination {i} of {illuminations}"))
        })?;
        slot.push(TraceEvent {
            update: field(&r, 1, "traces")?,
            niche: field(&r, 2, "traces")?,
            fitness: field(&r, 3, "traces")?,
        });
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qd::{FeatureRegion, SphenConfig, SyntheticEvaluator};
    use crate::store::{FullConfig, Lineage};

    fn tiny_result() -> RunResult {
        let config = SphenConfig {
            init_samples: 12,
            batch_size: 4,
            total_budget: 20,
            archive_updates_per_round: 5,
            children_per_update: 10,
            archive_capacity: 20,
            resolution: 32,
            ..SphenConfig::default()
        };
        crate::qd::sphen_run(&SyntheticEvaluator { resolution: 32 }, &config).unwrap()
    }

    #[test]
    fn result_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let result = tiny_result();
        let record = RunRecord::new(FullConfig::desk());
        let id = store.save_run(&record, &result).unwrap();
        let handle = store.load_run(&id).unwrap();
        assert_eq!(handle.record.config, record.config);
        assert!(handle.record.artifacts.contains(&"archive.csv".to_string()));
        assert_eq!(store.load_result(&id).unwrap(), result);
        assert!(matches!(
            store.create_run(&record),
            Err(StoreError::ConflictingRunId(_))
        ));
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = store
            .save_run(&RunRecord::new(FullConfig::desk()), &tiny_result())
            .unwrap();
        let path = store.run_dir(&id).join("archive.csv");
        let text = fs::read(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            store.load_run(&id),
            Err(StoreError::CorruptArtifact { ref path, .. }) if path == "archive.csv"
        ));
        assert!(matches!(
            store.load_run("nope"),
            Err(StoreError::NotFound(_))
        ));
        assert!(matches!(
            store.load_run("../etc"),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn lineage_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let parent = RunRecord::new(FullConfig::desk());
        store.create_run(&parent).unwrap();
        let mut child = RunRecord::new(FullConfig::desk());
        child.lineage = Some(Lineage {
            parent: parent.run_id.clone(),
            region: FeatureRegion {
                a_lo: 0.5,
                a_hi: 1.2,
                e_lo: 0.0,
                e_hi: 0.5,
            },
        });
        assert!(matches!(
            store.create_run(&child),
            Err(StoreError::RegionOutsideParent(_))
        ));
        child.lineage.as_mut().unwrap().region.a_hi = 0.9;
        store.create_run(&child).unwrap();
        let mut orphan = RunRecord::new(FullConfig::desk());
        orphan.lineage = Some(Lineage {
            parent: "missing".into(),
            region: FeatureRegion::FULL,
        });
        assert!(matches!(
            store.create_run(&orphan),
            Err(StoreError::NotFound(_))
        ));
        assert_eq!(store.list().unwrap().len(), 2);
    }

    #[test]
    fn status_is_persisted_forward_only() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let r = RunRecord::new(FullConfig::desk());
        store.create_run(&r).unwrap();
        store
            .advance(&r.run_id, RunStatus::Running, None, None)
            .unwrap();
        let done = store
            .advance(
                &r.run_id,
                RunStatus::Finished,
                Some(RunOutcome::Completed),
                None,
            )
            .unwrap();
        assert_eq!(done.status, RunStatus::Finished);
        assert!(store
            .advance(&r.run_id, RunStatus::Running, None, None)
            .is_err());
        assert_eq!(
            store.load_record(&r.run_id).unwrap().status,
            RunStatus::Finished
        );
    }

    #[test]
    fn artifact_paths_are_confined() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let r = RunRecord::new(FullConfig::desk());
        store.create_run(&r).unwrap();
        for bad in ["../x", "/abs", "a//b", MANIFEST, ""] {
            assert!(store.write_artifact(&r.run_id, bad, b"x").is_err(), "{bad}");
        }
    }
}
