//! HTTP API behaviour against an in-process router.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

use fda::encoding::{express, ShapeGenome};
use fda::genmodel::VaeConfig;
use fda::lbm::simulate;
use fda::qd::{cvt_centroids, SphenConfig};
use fda::server::{router, AppState, VaeTrainRequest, Workbench, IDEMPOTENCY_HEADER};
use fda::store::{EvaluatorKind, FullConfig, RunRecord, RunStatus, Store};

fn tiny_config() -> FullConfig {
    FullConfig {
        evaluator: EvaluatorKind::Synthetic,
        sphen: SphenConfig {
            init_samples: 16,
            batch_size: 4,
            total_budget: 24,
            archive_updates_per_round: 40,
            children_per_update: 10,
            archive_capacity: 40,
            resolution: 32,
            rng_seed: 3,
            ..SphenConfig::default()
        },
        vae: VaeConfig {
            input_resolution: 32,
            conv_layers: vec![4, 8],
            epochs: 3,
            ..VaeConfig::default()
        },
        ..FullConfig::desk()
    }
}

/// A store holding one finished synthetic run with a trained VAE, built
/// once and copied into each test's own directory.
fn template() -> &'static (TempDir, String) {
    static TEMPLATE: OnceLock<(TempDir, String)> = OnceLock::new();
    TEMPLATE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let bench = Workbench::new(Store::open(dir.path()).unwrap());
        let record = bench.create_run(tiny_config()).unwrap();
        bench.execute_run(&record.run_id).unwrap();
        let request = VaeTrainRequest {
            training_capacity: 300,
            max_bitmaps: 150,
            ..VaeTrainRequest::default()
        };
        bench
            .train_vae(&record.run_id, &request, &mut |_| {})
            .unwrap();
        (dir, record.run_id)
    })
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn fresh() -> (TempDir, Arc<AppState>, Router, String) {
    let (template, id) = template();
    let dir = tempfile::tempdir().unwrap();
    copy_dir(template.path(), dir.path());
    let state = AppState::new(Store::open(dir.path()).unwrap(), None).unwrap();
    let app = router(state.clone());
    (dir, state, app, id.clone())
}

fn empty() -> (TempDir, Arc<AppState>, Router) {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(Store::open(dir.path()).unwrap(), None).unwrap();
    let app = router(state.clone());
    (dir, state, app)
}

async fn send(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    key: Option<&str>,
) -> (StatusCode, Value) {
    let mut builder = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    if let Some(k) = key {
        builder = builder.header(IDEMPOTENCY_HEADER, k);
    }
    let body = body.map_or(Body::empty(), |b| Body::from(b.to_string()));
    let response = app
        .clone()
        .oneshot(builder.body(body).unwrap())
        .await
        .unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn fields(body: &Value) -> Vec<String> {
    body["fields"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["field"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn created_run_is_accepted_and_visible() {
    let (_dir, _state, app) = empty();
    let config = serde_json::to_value(tiny_config()).unwrap();
    let (status, body) = send(&app, "POST", "/api/v1/runs", Some(config), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = body["run_id"].as_str().unwrap();
    let (status, view) = send(&app, "GET", &format!("/api/v1/runs/{id}"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["run_id"], id);
    let (_, list) = send(&app, "GET", "/api/v1/runs", None, None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn invalid_config_names_every_field() {
    let (_dir, _state, app) = empty();
    let bad = json!({"sphen": {"mutation_sigma": -1.0}, "vae": {"latent_dim": 0}});
    let (status, body) = send(&app, "POST", "/api/v1/runs", Some(bad), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "validation_error");
    let names = fields(&body);
    assert!(
        names.contains(&"sphen.mutation_sigma".to_string()),
        "{names:?}"
    );
    assert!(names.contains(&"vae.latent_dim".to_string()), "{names:?}");

    let unknown = json!({"sphen": {"budget": 3}});
    let (status, body) = send(&app, "POST", "/api/v1/runs", Some(unknown), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(fields(&body), vec!["budget".to_string()]);
}

#[tokio::test]
async fn unknown_run_is_not_found() {
    let (_dir, _state, app) = empty();
    let (status, body) = send(&app, "GET", "/api/v1/runs/nope", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
    let (status, _) = send(
        &app,
        "POST",
        "/api/v1/runs/nope/walk",
        Some(json!({})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn archive_views() {
    let (_dir, state, app, id) = fresh();
    let base = format!("/api/v1/runs/{id}/archive");
    let (status, body) = send(&app, "GET", &format!("{base}?max_cells=0"), None, None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(fields(&body), vec!["max_cells".to_string()]);

    let (status, full) = send(&app, "GET", &base, None, None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, same) = send(&app, "GET", &format!("{base}?max_cells=40"), None, None).await;
    assert_eq!(full, same);
    assert!(full["cells"][0]["thumbnail"].is_string());

    // Brute force: every parent elite goes to its nearest reduced centroid,
    // and each cell must hold the fittest of them.
    let k = 10;
    let (status, reduced) = send(
        &app,
        "GET",
        &format!("{base}?max_cells={k}&thumbnails=false"),
        None,
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let result = state.bench.store.load_result(&id).unwrap();
    let archive = result.archive.unwrap();
    let centroids = cvt_centroids(k, tiny_config().sphen.rng_seed).unwrap();
    let mut best: HashMap<usize, f64> = HashMap::new();
    for (_, e) in archive.elites() {
        let p = archive.normalized(e);
        let nearest = (0..k)
            .min_by(|&a, &b| {
                let d = |c: [f64; 2]| (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2);
                d(centroids[a]).total_cmp(&d(centroids[b]))
            })
            .unwrap();
        let slot = best.entry(nearest).or_insert(f64::INFINITY);
        *slot = slot.min(e.fitness);
    }
    let cells = reduced["cells"].as_array().unwrap();
    assert_eq!(cells.len(), best.len());
    assert_eq!(reduced["occupancy"], best.len());
    for cell in cells {
        let niche = cell["niche"].as_u64().unwrap() as usize;
        assert_eq!(cell["fitness"].as_f64().unwrap(), best[&niche]);
        assert!(cell["thumbnail"].is_null());
    }
}

#[tokio::test]
async fn zoom_seeds_the_child_with_parent_elites() {
    let (_dir, state, app, id) = fresh();
    let uri = format!("/api/v1/runs/{id}/zoom");
    let full =
        json!({"region": {"a_lo": 0.0, "a_hi": 1.0, "e_lo": 0.0, "e_hi": 1.0}, "fill": false});
    let (status, body) = send(&app, "POST", &uri, Some(full), None).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    let child = state
        .bench
        .store
        .load_record(body["run_id"].as_str().unwrap())
        .unwrap();
    assert_eq!(child.lineage.unwrap().parent, id);
    let parent = state.bench.store.load_result(&id).unwrap().archive.unwrap();
    let mut expected: Vec<ShapeGenome> = parent.elites().map(|(_, e)| e.genome).collect();
    let mut seeds = child.config.sphen.seed_genomes.clone();
    let key = |g: &ShapeGenome| g.params().map(f64::to_bits);
    expected.sort_by_key(key);
    seeds.sort_by_key(key);
    assert_eq!(seeds, expected);
    assert_eq!(child.config.sphen.init_samples, expected.len());

    let flat = json!({"region": {"a_lo": 0.3, "a_hi": 0.3, "e_lo": 0.0, "e_hi": 1.0}});
    let (status, body) = send(&app, "POST", &uri, Some(flat), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(fields(&body), vec!["region".to_string()]);

    // The feature-space margin keeps every elite away from the corners.
    let corner =
        json!({"region": {"a_lo": 0.999, "a_hi": 1.0, "e_lo": 0.999, "e_hi": 1.0}, "fill": false});
    let (status, body) = send(&app, "POST", &uri, Some(corner), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "empty_region");
}

#[tokio::test]
async fn walk_requests() {
    let (_dir, _state, app, id) = fresh();
    let uri = format!("/api/v1/runs/{id}/walk");
    let (status, grid) = send(&app, "POST", &uri, Some(json!({})), None).await;
    assert_eq!(status, StatusCode::OK);
    let rows = grid["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 11));

    let (status, one) = send(
        &app,
        "POST",
        &uri,
        Some(json!({"dim": 2, "steps": 1})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let cells = one["rows"][0].as_array().unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0]["offset"], 0.0);
    assert_eq!(cells[0]["latent"], json!([0.0, 0.0, 0.0, 0.0, 0.0]));

    for (request, field) in [
        (json!({"dim": 7}), "dim"),
        (json!({"steps": 4}), "steps"),
        (json!({"center": [0.0]}), "center"),
    ] {
        let (status, body) = send(&app, "POST", &uri, Some(request), None).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(fields(&body), vec![field.to_string()]);
    }
}

#[tokio::test]
async fn validating_a_sample_reproduces_its_measurement() {
    let (_dir, state, app, id) = fresh();
    let result = state.bench.store.load_result(&id).unwrap();
    let (sample, measured) = result.successes().next().unwrap();
    let request = json!({"genome": sample.genome});
    let (status, report) = send(
        &app,
        "POST",
        &format!("/api/v1/runs/{id}/validate"),
        Some(request),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["ok"], true);
    let m = &report["measured"];
    assert_eq!(
        m["u_max"].as_f64().unwrap().to_bits(),
        measured.u_max.to_bits()
    );
    assert_eq!(
        m["enstrophy"].as_f64().unwrap().to_bits(),
        measured.enstrophy.to_bits()
    );
    assert_eq!(
        m["area"].as_f64().unwrap().to_bits(),
        measured.area.to_bits()
    );
    assert!(report["predicted"].is_object());
}

#[tokio::test]
async fn validating_a_latent_decodes_it_first() {
    let (_dir, state, app, id) = fresh();
    let z = vec![0.0; 5];
    let (status, report) = send(
        &app,
        "POST",
        &format!("/api/v1/runs/{id}/validate"),
        Some(json!({"latent": z})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let model = state.bench.store.load_vae(&id).unwrap();
    match model.decode(&z) {
        Ok(shape) => assert_eq!(report["shape"], shape.to_rle()),
        Err(_) => assert_eq!(report["ok"], false),
    }
    assert!(report["predicted"].is_object());

    let (status, body) = send(
        &app,
        "POST",
        &format!("/api/v1/runs/{id}/validate"),
        Some(json!({"latent": [0.0, 1.0]})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(fields(&body), vec!["latent".to_string()]);
}

#[tokio::test]
async fn lbm_validation_matches_a_direct_simulation() {
    let (_dir, state, app) = empty();
    let config = FullConfig {
        evaluator: EvaluatorKind::Lbm,
        ..tiny_config()
    };
    let record = state.bench.create_run(config.clone()).unwrap();
    let genome = ShapeGenome::splat(0.5);
    let (status, report) = send(
        &app,
        "POST",
        &format!("/api/v1/runs/{}/validate", record.run_id),
        Some(json!({"genome": genome})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let direct = simulate(&express(&genome, 32).unwrap(), &config.lbm).unwrap();
    assert_eq!(report["ok"], true, "{report}");
    let m = &report["measured"];
    assert_eq!(
        m["u_max"].as_f64().unwrap().to_bits(),
        direct.u_max.to_bits()
    );
    assert_eq!(
        m["enstrophy"].as_f64().unwrap().to_bits(),
        direct.enstrophy.to_bits()
    );
    assert_eq!(report["mean_drag"].as_f64().unwrap(), direct.mean_drag);
    assert!(!report["artifacts"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn idempotency_key_replays_the_first_response() {
    let (dir, state, app) = empty();
    let config = serde_json::to_value(tiny_config()).unwrap();
    let first = send(
        &app,
        "POST",
        "/api/v1/runs",
        Some(config.clone()),
        Some("k1"),
    )
    .await;
    let second = send(
        &app,
        "POST",
        "/api/v1/runs",
        Some(config.clone()),
        Some("k1"),
    )
    .await;
    assert_eq!(first.0, StatusCode::ACCEPTED);
    assert_eq!(first, second);
    assert_eq!(state.bench.store.list().unwrap().len(), 1);
    let id = first.1["run_id"].as_str().unwrap();
    while !state.bench.status(id).unwrap().status.is_terminal() {
        std::thread::sleep(std::time::Duration::from_millis(20));
    }

    // Replies survive a restart.
    let restarted = router(AppState::new(Store::open(dir.path()).unwrap(), None).unwrap());
    let third = send(&restarted, "POST", "/api/v1/runs", Some(config), Some("k1")).await;
    assert_eq!(third.1["run_id"], first.1["run_id"]);
}

#[tokio::test]
async fn runs_left_running_are_failed_on_startup() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let record = RunRecord::new(tiny_config());
    store.create_run(&record).unwrap();
    store
        .advance(&record.run_id, RunStatus::Running, None, None)
        .unwrap();
    let state = AppState::new(store, None).unwrap();
    let view = state.bench.status(&record.run_id).unwrap();
    assert_eq!(view.status, RunStatus::Failed);
    assert!(view.error.unwrap().contains("interrupted"));
}

#[tokio::test]
async fn static_assets_are_served_outside_the_api() {
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<p>ui</p>").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(
        Store::open(dir.path()).unwrap(),
        Some(assets.path().to_path_buf()),
    )
    .unwrap();
    let app = router(state);
    let response = app
        .clone()
        .oneshot(Request::get("/").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<p>ui</p>");
    let (status, _) = send(&app, "GET", "/../secret", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn identical_posts_without_a_key_create_distinct_runs() {
    let (_dir, state, app) = empty();
    let config = serde_json::to_value(tiny_config()).unwrap();
    let (_, a) = send(&app, "POST", "/api/v1/runs", Some(config.clone()), None).await;
    let (_, b) = send(&app, "POST", "/api/v1/runs", Some(config), None).await;
    assert_ne!(a["run_id"], b["run_id"]);
    assert_eq!(state.bench.store.list().unwrap().len(), 2);
    for id in [&a["run_id"], &b["run_id"]] {
        let id = id.as_str().unwrap();
        while !state.bench.status(id).unwrap().status.is_terminal() {
            std::thread::sleep(std::time::Duration::from_millis(20));
        }
    }
}

#[tokio::test]
async fn status_counts_evaluations_against_the_budget() {
    let (_dir, state, app, id) = fresh();
    let pending = state.bench.create_run(tiny_config()).unwrap();
    let (status, view) = send(
        &app,
        "GET",
        &format!("/api/v1/runs/{}", pending.run_id),
        None,
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["evaluations"], 0);
    assert_eq!(view["budget"], 24);

    let (_, done) = send(&app, "GET", &format!("/api/v1/runs/{id}"), None, None).await;
    assert_eq!(done["status"], json!(RunStatus::Finished));
    assert_eq!(done["evaluations"], 24);
    assert_eq!(done["budget"], 24);
}

#[tokio::test]
async fn zoom_into_an_empty_region_with_fill_starts_from_scratch() {
    let (_dir, state, app, id) = fresh();
    let corner =
        json!({"region": {"a_lo": 0.999, "a_hi": 1.0, "e_lo": 0.999, "e_hi": 1.0}, "fill": true});
    let (status, body) = send(
        &app,
        "POST",
        &format!("/api/v1/runs/{id}/zoom"),
        Some(corner),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    let child = state
        .bench
        .store
        .load_record(body["run_id"].as_str().unwrap())
        .unwrap();
    assert!(child.config.sphen.seed_genomes.is_empty());
    assert_eq!(
        child.config.sphen.init_samples,
        tiny_config().sphen.init_samples
    );
}

#[tokio::test]
async fn validation_delta_is_measured_minus_predicted() {
    let (_dir, _state, app, id) = fresh();
    let (_, report) = send(
        &app,
        "POST",
        &format!("/api/v1/runs/{id}/validate"),
        Some(json!({"genome": ShapeGenome::splat(0.5)})),
        None,
    )
    .await;
    assert_eq!(report["ok"], true, "{report}");
    for key in ["u_max", "area", "enstrophy"] {
        let m = report["measured"][key].as_f64().unwrap();
        let p = report["predicted"][key].as_f64().unwrap();
        assert_eq!(report["delta"][key].as_f64().unwrap(), m - p, "{key}");
    }
}
