//! Sample the trained latent space into a new archive of designs.

use fda::encoding::express;
use fda::genmodel::{fit_latent_predictors, generate_set, train_vae, VaeConfig};
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
    let set = generate_set(&model, &predictors, 3000, 300, None, 7, 10).expect("generation");
    println!(
        "{} shapes, {} degenerate, {} niches",
        set.rows.len(),
        set.degenerate,
        set.occupancy()
    );
    for bin in &set.isolines {
        println!(
            "area bin: {:>4} shapes, u_max {:.4} / {:.4} / {:.4}",
            bin.count, bin.min, bin.mean, bin.max
        );
    }
}
