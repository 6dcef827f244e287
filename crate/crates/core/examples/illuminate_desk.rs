//! A desk-scale surrogate-assisted illumination run.
//!
//! `cargo run --release --example illuminate_desk [lbm]` uses the synthetic
//! evaluator unless `lbm` is given.

use fda::lbm::LbmConfig;
use fda::qd::{sphen_run_with_progress, Evaluator, LbmEvaluator, SphenConfig, SyntheticEvaluator};

fn main() {
    let config = SphenConfig::desk();
    let evaluator: Box<dyn Evaluator> = match std::env::args().nth(1).as_deref() {
        Some("lbm") => Box::new(LbmEvaluator {
            lbm: LbmConfig::desk(),
            resolution: config.resolution,
        }),
        _ => Box::new(SyntheticEvaluator {
            resolution: config.resolution,
        }),
    };
    let result = sphen_run_with_progress(evaluator.as_ref(), &config, &mut |p| {
        eprintln!("{:?}", p.phase);
    })
    .expect("run completes");
    for r in &result.rounds {
        println!(
            "round {:>2}: {} evaluations, {} niches",
            r.round, r.evaluations, r.occupancy
        );
    }
    let archive = result.archive.expect("archive");
    println!("occupancy {}", archive.occupancy());
    if let Some((niche, e)) = archive.best() {
        println!(
            "best niche {niche}: fitness {:.5} at {:?}",
            e.fitness,
            archive.normalized(e)
        );
    }
}
