//! Create, execute and reload a run through the on-disk store, then query
//! it through the same service the HTTP API uses.

use fda::server::Workbench;
use fda::store::{EvaluatorKind, FullConfig, Store};

fn main() {
    let dir = std::env::temp_dir().join("fda-example-store");
    let bench = Workbench::new(Store::open(&dir).expect("store opens"));
    let mut config = FullConfig::desk();
    config.evaluator = EvaluatorKind::Synthetic;
    config.sphen.total_budget = 80;
    let record = bench.create_run(config).expect("run created");
    bench.execute_run(&record.run_id).expect("run executes");
    let status = bench.status(&record.run_id).expect("status");
    println!("{}", serde_json::to_string_pretty(&status).expect("json"));
    let view = bench
        .archive_view(&record.run_id, Some(10), false)
        .expect("archive view");
    println!("reduced archive: {} cells", view.cells.len());
    println!(
        "stored under {}",
        bench.store.run_dir(&record.run_id).display()
    );
}
