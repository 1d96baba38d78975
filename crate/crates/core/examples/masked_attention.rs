//! Attention, self-masking and the masked-consistency loss on random inputs.

use cmgr::autograd::Mat;
use cmgr::sagr::{attention, mask_rank, masked_attention, mc_loss, MaskDirection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn main() -> cmgr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, k, d) = (6, 8, 4);
    let (q, keys, v) = (random(n, d, &mut rng), random(k, d, &mut rng), random(k, d, &mut rng));
    let (u, r) = attention(&q, &keys, &v)?;
    let ratio = 0.9;
    let (rm, mu) = masked_attention(&r, &v, ratio)?;
    let zeros = rm.row(0).iter().filter(|&&x| x == 0.0).count();
    println!("k = {k}, M_R = {ratio}: {zeros} weights zeroed per row (rank {})", mask_rank(k, ratio, MaskDirection::default()));
    println!("row 0 of R:   {:.3}", r.row(0));
    println!("row 0 of R^M: {:.3}", rm.row(0));
    println!("L_mc = {:.6}", mc_loss(&u, &mu)?);
    Ok(())
}
