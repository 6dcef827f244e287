//! Checks on a trained VAE and its latent predictors.

mod common;

use std::sync::OnceLock;

use fda::encoding::{area, express, Bitmap};
use fda::genmodel::{
    fit_latent_predictors, generate_set, latent_walk, latent_walk_grid, train_vae, GenError,
    LatentPredictorSet, VaeConfig, VaeModel,
};
use fda::qd::{grow_archive, sphen_run, Measurement, SphenConfig, SyntheticEvaluator};
use fda::surrogate::{GpHyperparams, GpModel, NOISE_FLOOR};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const RES: usize = 32;

struct Trained {
    model: VaeModel,
    /// Fitted on every third sample left out.
    predictors: LatentPredictorSet,
    training: Vec<Bitmap>,
    fitted: Vec<(Bitmap, Measurement)>,
    held_out: Vec<(Bitmap, Measurement)>,
}

fn vae_config() -> VaeConfig {
    VaeConfig {
        input_resolution: RES,
        conv_layers: vec![8, 16, 32],
        epochs: 60,
        ..VaeConfig::default()
    }
}

fn trained() -> &'static Trained {
    static TRAINED: OnceLock<Trained> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let config = SphenConfig {
            init_samples: 50,
            total_budget: 150,
            archive_updates_per_round: 200,
            resolution: RES,
            ..SphenConfig::desk()
        };
        let evaluator = SyntheticEvaluator { resolution: RES };
        let run = sphen_run(&evaluator, &config).unwrap();
        let grown = grow_archive(&run, 600, &config.illumination(), 1).unwrap();
        let training: Vec<Bitmap> = grown
            .elites()
            .take(300)
            .map(|(_, e)| express(&e.genome, RES).unwrap())
            .collect();
        let model = train_vae(&training, &vae_config()).unwrap();
        let (mut fitted, mut held_out) = (Vec::new(), Vec::new());
        for (i, (s, m)) in run.successes().enumerate() {
            let pair = (express(&s.genome, RES).unwrap(), *m);
            if i % 3 == 2 {
                held_out.push(pair);
            } else {
                fitted.push(pair);
            }
        }
        let predictors = fit_latent_predictors(&model, &fitted).unwrap();
        Trained {
            model,
            predictors,
            training,
            fitted,
            held_out,
        }
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn prior(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..5).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

#[test]
fn prior_mean_decodes_to_a_connected_shape() {
    let shape = trained().model.decode(&[0.0; 5]).unwrap();
    assert_eq!(common::regions(RES, shape.cells()), 1);
}

#[test]
fn reconstructions_are_faithful() {
    let t = trained();
    let refs: Vec<&Bitmap> = t.training.iter().collect();
    let latents = t.model.encode_batch(&refs).unwrap();
    assert_eq!(latents, t.model.encode_batch(&refs).unwrap());
    let decoded = t.model.decode_batch(&latents).unwrap();
    let iou = decoded
        .iter()
        .zip(&t.training)
        .map(|(d, b)| {
            d.as_ref()
                .map_or(0.0, |d| common::iou(d.cells(), b.cells()))
        })
        .sum::<f64>()
        / t.training.len() as f64;
    assert!(iou >= 0.75, "mean IoU {iou}");

    // encode(decode(z)) stays near z for on-manifold latents. A few poorly
    // reconstructed shapes land further away, so the bound is on the mean
    // and the 90th percentile.
    let mut dists: Vec<f64> = latents
        .iter()
        .zip(&decoded)
        .filter_map(|(z, d)| {
            let back = t.model.encode(d.as_ref().ok()?).unwrap();
            Some(distance(z, &back))
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    let p90 = dists[dists.len() * 9 / 10];
    assert!(mean < 1.0 && p90 < 1.0, "mean {mean} p90 {p90}");
}

#[test]
fn different_shapes_get_different_latents() {
    let t = trained();
    let (small, large) = t
        .training
        .iter()
        .fold((&t.training[0], &t.training[0]), |(s, l), b| {
            (
                if area(b) < area(s) { b } else { s },
                if area(b) > area(l) { b } else { l },
            )
        });
    let (a, b) = (
        t.model.encode(small).unwrap(),
        t.model.encode(large).unwrap(),
    );
    let dist = distance(&a, &b);
    assert!(dist > 1e-3, "{dist}");
}

#[test]
fn walks_are_smooth_and_centred() {
    let t = trained();
    let center = vec![0.0; 5];
    let grid = latent_walk_grid(&t.model, &t.predictors, &center, 11, 2.0).unwrap();
    assert_eq!(grid.len(), 5);
    let middle = t.model.decode(&center).ok();
    for row in &grid {
        assert_eq!(row.len(), 11);
        assert_eq!(row[5].shape, middle);
        for pair in row.windows(2) {
            let step = (pair[1].prediction.area - pair[0].prediction.area).abs();
            assert!(step < 0.2, "adjacent |dA| {step}");
        }
    }
    let single = latent_walk(&t.model, &t.predictors, &center, 3, 1, 2.0).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].latent, center);
    assert!(matches!(
        latent_walk(&t.model, &t.predictors, &center, 5, 11, 2.0),
        Err(GenError::WalkDimension { .. })
    ));
    assert!(matches!(
        latent_walk(&t.model, &t.predictors, &center, 0, 4, 2.0),
        Err(GenError::EvenSteps(4))
    ));
}

#[test]
fn latent_models_interpolate_at_the_noise_floor() {
    let t = trained();
    let bitmaps: Vec<&Bitmap> = t.fitted.iter().map(|(b, _)| b).collect();
    let latents = t.model.encode_batch(&bitmaps).unwrap();
    let fitted = [
        &t.predictors.u_max,
        &t.predictors.area,
        &t.predictors.enstrophy,
    ];
    let feature: [fn(&Measurement) -> f64; 3] = [|m| m.u_max, |m| m.area, |m| m.enstrophy];
    for (gp, f) in fitted.iter().zip(feature) {
        let targets: Vec<f64> = t.fitted.iter().map(|(_, m)| f(m)).collect();
        let range = targets.iter().cloned().fold(f64::MIN, f64::max)
            - targets.iter().cloned().fold(f64::MAX, f64::min);
        // The mean depends only on the noise to signal ratio, so the floor is
        // applied against a unit signal variance. Near-coincident encodings
        // with different measurements cannot both be interpolated, so keep a
        // subset spaced a quarter length scale apart.
        let l = gp.hyperparams().length_scale;
        let mut kept: Vec<usize> = Vec::new();
        for i in 0..latents.len() {
            if kept
                .iter()
                .all(|&j| distance(&latents[i], &latents[j]) >= 0.25 * l)
            {
                kept.push(i);
            }
        }
        assert!(kept.len() >= 20, "only {} separated encodings", kept.len());
        let zs: Vec<Vec<f64>> = kept.iter().map(|&i| latents[i].clone()).collect();
        let ys: Vec<f64> = kept.iter().map(|&i| targets[i]).collect();
        let hyper = GpHyperparams::new(l, 1.0, NOISE_FLOOR).unwrap();
        let floor = GpModel::with_hyperparams(&zs, &ys, hyper).unwrap();
        for (z, y) in zs.iter().zip(&ys) {
            let err = (floor.predict_mean(z).unwrap() - y).abs();
            assert!(err < 1e-3 * range, "error {err} range {range}");
        }
    }
}

#[test]
fn predicted_area_tracks_exact_area_of_held_out_decodes() {
    let t = trained();
    let bitmaps: Vec<&Bitmap> = t.held_out.iter().map(|(b, _)| b).collect();
    let latents = t.model.encode_batch(&bitmaps).unwrap();
    let decoded = t.model.decode_batch(&latents).unwrap();
    let errors: Vec<f64> = latents
        .iter()
        .zip(&decoded)
        .filter_map(|(z, d)| Some(t.predictors.predict(z).unwrap().area - area(d.as_ref().ok()?)))
        .collect();
    assert!(errors.len() * 10 >= bitmaps.len() * 9);
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    assert!(rmse < 0.05, "rmse {rmse} over {} decodes", errors.len());
}

#[test]
fn predicted_enstrophy_and_speed_rise_together() {
    let t = trained();
    let (e, u): (Vec<f64>, Vec<f64>) = prior(1000, 5)
        .iter()
        .map(|z| {
            let p = t.predictors.predict(z).unwrap();
            (p.enstrophy, p.u_max)
        })
        .unzip();
    let r = common::pearson(&e, &u);
    assert!(r > 0.0, "pearson {r}");
}

#[test]
fn empty_generation() {
    let t = trained();
    let set = generate_set(&t.model, &t.predictors, 0, 50, None, 0, 10).unwrap();
    assert!(set.rows.is_empty());
    assert_eq!(set.occupancy(), 0);
    assert_eq!(set.degenerate, 0);
    assert!(set.isolines.is_empty());
}

#[test]
fn training_is_deterministic() {
    let t = trained();
    let config = VaeConfig {
        epochs: 2,
        ..vae_config()
    };
    let a = train_vae(&t.training[..120], &config).unwrap();
    let b = train_vae(&t.training[..120], &config).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    assert_eq!(a.history(), b.history());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn isolines_are_ordered(n in 1usize..400, capacity in 1usize..60, bins in 1usize..12, seed in 0u64..1000) {
        let t = trained();
        let set = generate_set(&t.model, &t.predictors, n, capacity, None, seed, bins).unwrap();
        prop_assert_eq!(set.rows.len() + set.degenerate, n);
        let counted: usize = set.isolines.iter().map(|b| b.count).sum();
        prop_assert_eq!(counted, set.rows.len());
        for b in &set.isolines {
            prop_assert!(b.min <= b.mean && b.mean <= b.max);
        }
        prop_assert!(set.occupancy() <= capacity.min(set.rows.len()));
    }
}
