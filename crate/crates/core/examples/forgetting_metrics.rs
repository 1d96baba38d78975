//! AA and the forgetting rate for an accuracy sequence, written as CSV.

use cmgr::metrics::{avg_accuracy, forgetting, MetricsReport};

fn main() -> cmgr::Result<()> {
    let acc = vec![81.0, 20.2, 2.3, 1.7, 0.8, 1.0, 1.0, 1.3, 0.9, 0.5, 1.6];
    println!("AA = {:.4}, delta_A = {:.4}", avg_accuracy(&acc)?, forgetting(&acc)?);
    let classes = (0..acc.len()).map(|t| 25 + 2 * t).collect();
    print!("{}", MetricsReport::new(acc, classes)?.to_csv());
    Ok(())
}
