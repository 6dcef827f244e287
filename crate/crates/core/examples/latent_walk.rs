//! Train a small VAE on an illuminated archive and walk its latent axes.

use fda::encoding::express;
use fda::genmodel::{fit_latent_predictors, latent_walk_grid, train_vae, VaeConfig};
use fda::qd::{grow_archive, sphen_run, SphenConfig, SyntheticEvaluator};

fn main() {
    let res = 32;
    let config = SphenConfig {
        resolution: res,
        ..SphenConfig::desk()
    };
    let run = sphen_run(&SyntheticEvaluator { resolution: res }, &config).expect("run");
    let grown = grow_archive(&run, 600, &config.illumination(), 1).expect("archive grows");
    let bitmaps: Vec<_> = grown
        .elites()
        .map(|(_, e)| express(&e.genome, res).expect("expresses"))
        .collect();
    let vae = VaeConfig {
        input_resolution: res,
        conv_layers: vec![8, 16, 32],
        epochs: 60,
        ..VaeConfig::default()
    };
    let model = train_vae(&bitmaps, &vae).expect("training");
    let samples: Vec<_> = run
        .successes()
        .map(|(s, m)| (express(&s.genome, res).expect("expresses"), *m))
        .collect();
    let predictors = fit_latent_predictors(&model, &samples).expect("predictors");
    let grid = latent_walk_grid(&model, &predictors, &vec![0.0; model.latent_dim()], 7, 2.0)
        .expect("walk");
    for row in &grid {
        let areas: Vec<String> = row
            .iter()
            .map(|p| format!("{:.2}", p.prediction.area))
            .collect();
        println!("dim {}: predicted area {}", row[0].dim, areas.join(" "));
    }
}
