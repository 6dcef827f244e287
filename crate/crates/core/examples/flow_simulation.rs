//! Simulate channel flow past a single shape and write its final snapshot.
//!
//! `cargo run --release --example flow_simulation [radius_param]`

use fda::encoding::{express, ShapeGenome};
use fda::lbm::{simulate, write_snapshot_csv, LbmConfig};

fn main() {
    let r: f64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(0.5);
    let bitmap = express(&ShapeGenome::splat(r), 64).expect("genome expresses");
    let metrics = simulate(&bitmap, &LbmConfig::desk()).expect("simulation runs");
    println!("area      {:.4}", metrics.area);
    println!("u_max     {:.5}", metrics.u_max);
    println!("enstrophy {:.5}", metrics.enstrophy);
    println!("drag      {:.5}", metrics.mean_drag);
    println!("lift      {:.5}", metrics.mean_lift);
    if let Some(last) = metrics.snapshots.last() {
        let path = std::env::temp_dir().join("fda_snapshot.csv");
        let mut file = std::fs::File::create(&path).expect("snapshot file");
        write_snapshot_csv(&mut file, last).expect("snapshot writes");
        println!("snapshot  {}", path.display());
    }
}
