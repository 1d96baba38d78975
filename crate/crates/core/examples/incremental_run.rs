//! A shortened incremental run: base training, two few-shot tasks with
//! routing, then the forgetting report and run manifest checksum.

use cmgr::metrics::MetricsReport;
use cmgr::trainer::{ExperimentConfig, Learner};

fn main() -> cmgr::Result<()> {
    let mut cfg = ExperimentConfig::desk(0);
    cfg.data.per_class = 30;
    cfg.data.test_per_class = 10;
    cfg.encoder.layers = 9;
    cfg.train.base_epochs = 3;
    cfg.train.inc_epochs = 5;
    cfg.bnd.samples_per_side = 256;
    cfg.bnd.augment = 64;

    let mut learner = Learner::from_config(cfg)?;
    let acc = learner.run_all()?;
    let classes = learner.evaluations.iter().map(|e| e.num_classes).collect();
    let report = MetricsReport::new(acc, classes)?;
    print!("{}", report.to_text());
    println!("frozen checksums {:?}", learner.frozen_checksums());
    println!("manifest sha256 {}", learner.manifest_checksum());
    Ok(())
}
