//! Trains the base/novel discriminator on two synthetic feature clusters and
//! sweeps the routing threshold.

use cmgr::bnd::{histogram_csv, outer_decile_mass, routing_accuracy, BndConfig, Discriminator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn cluster(center: f64, n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    (0..n).map(|_| (0..dim).map(|j| if j % 2 == 0 { center } else { -center } + noise.sample(rng)).collect()).collect()
}

fn main() -> cmgr::Result<()> {
    let dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = cluster(1.0, 200, dim, &mut rng);
    let novel = cluster(-1.0, 200, dim, &mut rng);
    let cfg = BndConfig { samples_per_side: 200, epochs: 5, ..BndConfig::default() };
    let mut disc = Discriminator::new(dim, 9);
    let losses = disc.train(&base, &novel, &cfg, 9)?;
    println!("epoch losses {:.4?}", losses);

    let test_base = cluster(1.0, 100, dim, &mut rng);
    let test_novel = cluster(-1.0, 100, dim, &mut rng);
    let scores = disc.scores(&[test_base, test_novel].concat());
    let targets: Vec<f64> = (0..200).map(|i| if i < 100 { 1.0 } else { 0.0 }).collect();
    for h in [0.05, 0.1, 0.25, 0.5] {
        println!("h = {h:<4}: routing accuracy {:.1}%", 100.0 * routing_accuracy(&scores, &targets, h));
    }
    println!("outer-decile mass {:.3}", outer_decile_mass(&scores));
    print!("{}", histogram_csv(&scores, 10));
    Ok(())
}
