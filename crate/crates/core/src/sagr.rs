//! Geometric rectification: layer-adaptive cross-attention to depth tokens,
//! self-masking attention with its consistency loss, and cross-view
//! aggregation of point, rectified and depth features.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{row, Mat, Tape, Var};
use crate::encoders::{AttentionMask, LayerHook, TransformerBlock};
use crate::error::{Error, Result};
use crate::params::{Binding, Linear, ParamId, ParamStore};

/// `softmax(Q·Kᵀ/√d_k)·V` on the tape. Returns `(output, R)`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> (Var, Var) {
    let dk = tape.value(q).ncols() as f64;
    let scores = tape.matmul_t(q, k);
    let scores = tape.scale(scores, 1.0 / dk.sqrt());
    let r = tape.softmax_rows(scores);
    (tape.matmul(r, v), r)
}

/// Value-level attention with shape checks. Returns `(R·V, R)`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> Result<(Mat, Mat)> {
    if q.ncols() != k.ncols() {
        return Err(Error::invalid(format!("query dim {} != key dim {}", q.ncols(), k.ncols())));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::invalid(format!("{} keys but {} values", k.nrows(), v.nrows())));
    }
    if k.nrows() == 0 || q.nrows() == 0 {
        return Err(Error::invalid("attention needs at least one query and one key"));
    }
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let (out, r) = scaled_dot_attention(&mut tape, qv, kv, vv);
    Ok((tape.value(out).clone(), tape.value(r).clone()))
}

/// How the mask ratio is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskDirection {
    /// `M_R` is the kept fraction: the top `1 − M_R` of each row is zeroed.
    #[default]
    Kept,
    /// `M_R` is the masked fraction: the top `M_R` of each row is zeroed.
    Masked,
}

impl fmt::Display for MaskDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskDirection::Kept => "kept",
            MaskDirection::Masked => "masked",
        })
    }
}

impl FromStr for MaskDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kept" => Ok(MaskDirection::Kept),
            "masked" => Ok(MaskDirection::Masked),
            other => Err(Error::invalid(format!("mask direction must be 'kept' or 'masked', got '{other}'"))),
        }
    }
}

/// Rank of the threshold in a row of `k` entries sorted descending (1-based).
/// At least the row maximum is always suppressed.
pub fn mask_rank(k: usize, ratio: f64, direction: MaskDirection) -> usize {
    let fraction = match direction {
        MaskDirection::Kept => 1.0 - ratio,
        MaskDirection::Masked => ratio,
    };
    // tolerate representation error such as (1 - 0.7) * 10 = 3.0000000000000004
    let rank = (fraction * k as f64 - 1e-9).ceil().max(1.0) as usize;
    rank.min(k)
}

/// 0/1 keep-mask for a row-stochastic matrix: per row, entries at or above
/// the value of rank [`mask_rank`] (descending) are dropped.
pub fn attention_mask(r: &Mat, ratio: f64, direction: MaskDirection) -> Mat {
    let rank = mask_rank(r.ncols(), ratio, direction);
    let mut keep = Mat::ones(r.raw_dim());
    let mut sorted = Vec::with_capacity(r.ncols());
    for (i, row) in r.rows().into_iter().enumerate() {
        sorted.clear();
        sorted.extend(row.iter().copied());
        sorted.sort_by(|a, b| b.total_cmp(a));
        let threshold = sorted[rank - 1];
        for (j, &x) in row.iter().enumerate() {
            if x >= threshold {
                keep[[i, j]] = 0.0;
            }
        }
    }
    keep
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("mask ratio must lie in (0, 1], got {ratio}")))
    }
}

/// Self-masking of attention weights. Returns `(R^M, R^M·V)`; rows are not renormalized.
pub fn masked_attention(r: &Mat, v: &Mat, ratio: f64) -> Result<(Mat, Mat)> {
    masked_attention_with(r, v, ratio, MaskDirection::default())
}

pub fn masked_attention_with(r: &Mat, v: &Mat, ratio: f64, direction: MaskDirection) -> Result<(Mat, Mat)> {
    check_ratio(ratio)?;
    if r.ncols() != v.nrows() {
        return Err(Error::invalid(format!("R has {} keys but V has {} rows", r.ncols(), v.nrows())));
    }
    let rm = r * &attention_mask(r, ratio, direction);
    let out = rm.dot(v);
    Ok((rm, out))
}

/// Consistency between the similarity structures of unmasked and masked
/// features: `(1/B²)·Σ_ij (cos(U_i,U_j) − cos(MU_i,MU_j))²`.
pub fn mc_loss_var(tape: &mut Tape, u: Var, mu: Var) -> Var {
    let b = tape.value(u).nrows() as f64;
    let sim = |tape: &mut Tape, x: Var| {
        let n = tape.l2_normalize_rows(x);
        tape.matmul_t(n, n)
    };
    let su = sim(tape, u);
    let smu = sim(tape, mu);
    let d = tape.sub(su, smu);
    let sq = tape.square(d);
    let s = tape.sum(sq);
    tape.scale(s, 1.0 / (b * b))
}

pub fn mc_loss(u: &Mat, mu: &Mat) -> Result<f64> {
    if u.dim() != mu.dim() {
        return Err(Error::invalid(format!("feature batches differ: {:?} vs {:?}", u.dim(), mu.dim())));
    }
    if u.nrows() == 0 {
        return Err(Error::invalid("empty feature batch"));
    }
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(u.clone()), tape.constant(mu.clone()));
    let l = mc_loss_var(&mut tape, a, b);
    Ok(tape.scalar(l))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RectifyConfig {
    /// Point-encoder layers that attend to depth tokens.
    pub layers: BTreeSet<usize>,
    pub mask_ratio: f64,
    pub n_sa: usize,
    /// Initial value of the depth-feature weight `w`.
    pub w_init: f64,
    /// Initial value of every entry of the gate `λ`.
    pub lambda_init: f64,
    pub direction: MaskDirection,
    /// When false the masked branch (and its loss) is skipped.
    pub masked_branch: bool,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        Self {
            layers: [0, 4, 8].into_iter().collect(),
            mask_ratio: 0.9,
            n_sa: 2,
            w_init: 1.0,
            lambda_init: 1.0,
            direction: MaskDirection::Kept,
            masked_branch: true,
        }
    }
}

impl RectifyConfig {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        check_ratio(self.mask_ratio)?;
        if let Some(&max) = self.layers.iter().next_back() {
            if max >= n_layers {
                return Err(Error::invalid(format!("rectified layer {max} does not exist in a {n_layers}-layer encoder")));
            }
        }
        if self.n_sa == 0 {
            return Err(Error::invalid("at least one self-attention layer is required"));
        }
        if !self.w_init.is_finite() || !self.lambda_init.is_finite() {
            return Err(Error::invalid("w and lambda must be finite"));
        }
        Ok(())
    }
}

/// Feeds depth tokens to the rectified layers of the point encoder.
pub struct DepthSource<'a> {
    pub layers: &'a BTreeSet<usize>,
    /// `F^{D_i}` per layer, or `None` when depth features were not computed.
    pub depth: Option<&'a [Var]>,
}

impl LayerHook for DepthSource<'_> {
    fn source(&mut self, _tape: &mut Tape, layer: usize) -> Result<Option<Var>> {
        if !self.layers.contains(&layer) {
            return Ok(None);
        }
        match self.depth.and_then(|d| d.get(layer)) {
            Some(&v) => Ok(Some(v)),
            None => Err(Error::state(format!("layer {layer} is rectified but no depth features were supplied"))),
        }
    }
}

/// One layer of the layer-adaptive fusion: cross-attention to `depth` when
/// `layer` is rectified, self-attention otherwise.
pub fn fuse_layer(
    tape: &mut Tape,
    block: &TransformerBlock,
    p: &Binding,
    tokens: Var,
    depth: Option<Var>,
    layer: usize,
    cfg: &RectifyConfig,
) -> Result<Var> {
    let source = if cfg.layers.contains(&layer) {
        let d = depth.ok_or_else(|| Error::state(format!("layer {layer} is rectified but has no depth features")))?;
        if tape.value(d).ncols() != tape.value(tokens).ncols() {
            return Err(Error::invalid("depth and point token dims differ"));
        }
        if block.cross.is_none() {
            return Err(Error::state(format!("layer {layer} was built without cross projections")));
        }
        Some(d)
    } else {
        None
    };
    Ok(block.forward(tape, p, tokens, source, None).tokens)
}

/// The `N_sa` self-attention layers that carry the masked branch.
#[derive(Clone, Debug)]
pub struct RectifyHead {
    pub blocks: Vec<TransformerBlock>,
}

pub struct HeadOutput {
    /// `F^U`, token mean of the unmasked chain (`1×d`).
    pub unmasked: Var,
    /// `F^{MU}`, token mean of the masked chain.
    pub masked: Option<Var>,
}

impl RectifyHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        n_sa: usize,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..n_sa)
            .map(|i| TransformerBlock::new(store, &format!("sagr.sa{i}"), dim, heads, ffn_hidden, false, rng))
            .collect();
        Self { blocks }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, tokens: Var, cfg: &RectifyConfig) -> HeadOutput {
        let mut u = tokens;
        for b in &self.blocks {
            u = b.forward(tape, p, u, None, None).tokens;
        }
        let unmasked = tape.mean_rows(u);
        let masked = cfg.masked_branch.then(|| {
            let mask = AttentionMask { ratio: cfg.mask_ratio, direction: cfg.direction };
            let mut m = tokens;
            for b in &self.blocks {
                m = b.forward(tape, p, m, None, Some(mask)).tokens;
            }
            tape.mean_rows(m)
        });
        HeadOutput { unmasked, masked }
    }
}

/// `F̂ = f((f'([F^P, F^U]) + w·F^D) ⊙ λ)`.
#[derive(Clone, Copy, Debug)]
pub struct CrossViewAggregator {
    pub f_prime: Linear,
    pub f: Linear,
    pub w: ParamId,
    pub lambda: ParamId,
}

impl CrossViewAggregator {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, w_init: f64, lambda_init: f64, rng: &mut R) -> Self {
        Self {
            f_prime: Linear::new(store, "sagr.ca.f_prime", 2 * dim, dim, rng),
            f: Linear::new(store, "sagr.ca.f", dim, dim, rng),
            w: store.add("sagr.ca.w", Mat::from_elem((1, 1), w_init)),
            lambda: store.add("sagr.ca.lambda", Mat::from_elem((1, dim), lambda_init)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, fp: Var, fu: Var, fd: Var) -> Var {
        let joined = tape.concat_cols(&[fp, fu]);
        let a = self.f_prime.forward(tape, p, joined);
        let d = tape.scale_var(fd, p.var(self.w));
        let s = tape.add(a, d);
        let gated = tape.mul_row(s, p.var(self.lambda));
        self.f.forward(tape, p, gated)
    }
}

/// Value-level cross-view aggregation with dimension checks.
pub fn cross_view_aggregate(
    store: &ParamStore,
    agg: &CrossViewAggregator,
    fp: &[f64],
    fu: &[f64],
    fd: &[f64],
) -> Result<Vec<f64>> {
    let dim = store.get(agg.lambda).ncols();
    for (name, v) in [("F^P", fp), ("F^U", fu), ("F^D", fd)] {
        if v.len() != dim {
            return Err(Error::invalid(format!("{name} has dim {} but the aggregator expects {dim}", v.len())));
        }
    }
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let (a, b, c) = (tape.constant(row(fp)), tape.constant(row(fu)), tape.constant(row(fd)));
    let out = agg.forward(&mut tape, &p, a, b, c);
    Ok(tape.value(out).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_key_attends_fully() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (random(3, 4, &mut rng), random(1, 4, &mut rng), random(1, 2, &mut rng));
        let (out, r) = attention(&q, &k, &v).unwrap();
        assert!(r.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        for i in 0..3 {
            assert_eq!(out.row(i), v.row(0));
        }
    }

    #[test]
    fn zero_scores_give_uniform_weights() {
        let q = Mat::zeros((2, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, r) = attention(&q, &random(5, 4, &mut rng), &random(5, 3, &mut rng)).unwrap();
        assert!(r.iter().all(|&x| (x - 0.2).abs() < 1e-12));
    }

    #[test]
    fn matches_two_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, k, v) = (random(4, 4, &mut rng), random(4, 4, &mut rng), random(4, 4, &mut rng));
        let (out, r) = attention(&q, &k, &v).unwrap();
        for i in 0..4 {
            let scores: Vec<f64> = (0..4).map(|j| (0..4).map(|t| q[[i, t]] * k[[j, t]]).sum::<f64>() / 2.0).collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for j in 0..4 {
                assert!((r[[i, j]] - (scores[j] - m).exp() / z).abs() < 1e-6);
            }
            for c in 0..4 {
                let o: f64 = (0..4).map(|j| r[[i, j]] * v[[j, c]]).sum();
                assert!((out[[i, c]] - o).abs() < 1e-6);
            }
        }
        assert!(attention(&q, &random(4, 3, &mut rng), &v).is_err());
        assert!(attention(&q, &k, &random(3, 4, &mut rng)).is_err());
    }

    #[test]
    fn full_ratio_masks_row_maximum() {
        let r = row(&[0.4, 0.3, 0.2, 0.1]);
        let (rm, _) = masked_attention(&r, &Mat::eye(4), 1.0).unwrap();
        assert_eq!(rm, row(&[0.0, 0.3, 0.2, 0.1]));
    }

    #[test]
    fn ties_at_threshold_are_zeroed() {
        let r = row(&[0.25; 4]);
        let (rm, out) = masked_attention(&r, &Mat::eye(4), 0.9).unwrap();
        assert!(rm.iter().all(|&x| x == 0.0));
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_count_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let k = [4, 8, 16][rng.gen_range(0..3)];
            let pct: usize = rng.gen_range(1..100);
            let ratio = pct as f64 / 100.0;
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            let r = row(&raw.iter().map(|x| x / z).collect::<Vec<_>>());
            let (rm, _) = masked_attention(&r, &Mat::eye(k), ratio).unwrap();
            let expect = ((100 - pct) * k).div_ceil(100).max(1);
            let zeros = rm.iter().filter(|&&x| x == 0.0).count();
            assert_eq!(zeros, expect, "k={k} ratio={ratio}");
            let mut sorted: Vec<f64> = r.iter().copied().collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for (x, y) in r.iter().zip(rm.iter()) {
                assert!(*y == 0.0 && *x >= sorted[expect - 1] || *y == *x);
            }
        }
    }

    #[test]
    fn masked_direction_flips_the_fraction() {
        assert_eq!(mask_rank(10, 0.9, MaskDirection::Kept), 1);
        assert_eq!(mask_rank(10, 0.9, MaskDirection::Masked), 9);
        assert_eq!(mask_rank(10, 0.7, MaskDirection::Kept), 3);
        assert!(masked_attention(&row(&[1.0]), &Mat::eye(1), 0.0).is_err());
        assert!(masked_attention(&row(&[1.0]), &Mat::eye(1), 1.5).is_err());
    }

    #[test]
    fn mc_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random(3, 5, &mut rng);
        assert_eq!(mc_loss(&u, &u).unwrap(), 0.0);
        let one = random(1, 5, &mut rng);
        assert!(mc_loss(&one, &random(1, 5, &mut rng)).unwrap().abs() < 1e-12);
        let mu = random(3, 5, &mut rng);
        let cos = |m: &Mat, i: usize, j: usize| {
            let (a, b) = (m.row(i), m.row(j));
            a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
        };
        let mut expect = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                expect += (cos(&u, i, j) - cos(&mu, i, j)).powi(2);
            }
        }
        assert!((mc_loss(&u, &mu).unwrap() - expect / 9.0).abs() < 1e-6);
        assert!(mc_loss(&u, &random(2, 5, &mut rng)).is_err());
    }

    #[test]
    fn aggregation_term_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let agg = CrossViewAggregator::new(&mut store, 4, 0.0, 1.0, &mut rng);
        store.set(agg.f.w, Mat::eye(4)).unwrap();
        let (fp, fu, fd) = ([0.1, -0.2, 0.3, 0.4], [1.0, 0.5, -0.5, 0.0], [9.0, 9.0, 9.0, 9.0]);
        let out = cross_view_aggregate(&store, &agg, &fp, &fu, &fd).unwrap();
        let x: Vec<f64> = fp.iter().chain(fu.iter()).copied().collect();
        let wp = store.get(agg.f_prime.w);
        for (j, o) in out.iter().enumerate() {
            let e: f64 = (0..8).map(|i| x[i] * wp[[i, j]]).sum();
            assert!((o - e).abs() < 1e-12);
        }
        store.set(agg.lambda, Mat::zeros((1, 4))).unwrap();
        store.set(agg.f.b, row(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        let out = cross_view_aggregate(&store, &agg, &fp, &fu, &fd).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(cross_view_aggregate(&store, &agg, &fp[..3], &fu, &fd).is_err());
    }
}
