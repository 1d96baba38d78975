//! Pre-norm transformer block with an optional external key/value source.

use rand::Rng;

use crate::autograd::{Mat, Tape, Var};
use crate::params::{Binding, Linear, ParamId, ParamStore};
use crate::sagr::{attention_mask, scaled_dot_attention, MaskDirection};

/// Learnable key/value projections used when the block attends to another
/// token set. Query projection and the pre-norm are shared with self-attention.
#[derive(Clone, Copy, Debug)]
pub struct CrossProjections {
    pub k: Linear,
    pub v: Linear,
}

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub dim: usize,
    pub heads: usize,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub cross: Option<CrossProjections>,
    pub out: Linear,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

/// Masking applied to the attention weights of every head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionMask {
    pub ratio: f64,
    pub direction: MaskDirection,
}

pub struct BlockOutput {
    pub tokens: Var,
    /// Per-head attention weights `R` (before any masking).
    pub attention: Vec<Var>,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        with_cross: bool,
        rng: &mut R,
    ) -> Self {
        assert!(dim.is_multiple_of(heads), "dim must be divisible by heads");
        let proj = |store: &mut ParamStore, n: &str, rng: &mut R| Linear::new(store, &format!("{name}.{n}"), dim, dim, rng);
        let norm1_gain = store.add(format!("{name}.norm1.gain"), Mat::ones((1, dim)));
        let norm1_bias = store.add(format!("{name}.norm1.bias"), Mat::zeros((1, dim)));
        let q = proj(store, "attn.q", rng);
        let k = proj(store, "attn.k", rng);
        let v = proj(store, "attn.v", rng);
        let cross = with_cross.then(|| CrossProjections {
            k: proj(store, "cross.k", rng),
            v: proj(store, "cross.v", rng),
        });
        // residual branches start small so deep stacks stay well conditioned
        let out = Linear::with_std(store, &format!("{name}.attn.out"), dim, dim, 0.5 / (dim as f64).sqrt(), rng);
        let norm2_gain = store.add(format!("{name}.norm2.gain"), Mat::ones((1, dim)));
        let norm2_bias = store.add(format!("{name}.norm2.bias"), Mat::zeros((1, dim)));
        let ffn_in = Linear::new(store, &format!("{name}.ffn.in"), dim, ffn_hidden, rng);
        let ffn_out =
            Linear::with_std(store, &format!("{name}.ffn.out"), ffn_hidden, dim, 0.5 / (ffn_hidden as f64).sqrt(), rng);
        Self { dim, heads, norm1_gain, norm1_bias, q, k, v, cross, out, norm2_gain, norm2_bias, ffn_in, ffn_out }
    }

    fn norm(&self, tape: &mut Tape, p: &Binding, x: Var, gain: ParamId, bias: ParamId) -> Var {
        let n = tape.layer_norm_rows(x);
        let n = tape.mul_row(n, p.var(gain));
        tape.add_row(n, p.var(bias))
    }

    /// Runs the block. With `source`, keys and values come from the source
    /// tokens through the cross projections; otherwise from `x` itself.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: Var,
        source: Option<Var>,
        mask: Option<AttentionMask>,
    ) -> BlockOutput {
        let xn = self.norm(tape, p, x, self.norm1_gain, self.norm1_bias);
        let q = self.q.forward(tape, p, xn);
        let (k, v) = match source {
            Some(src) => {
                let cross = self.cross.expect("block has no cross projections");
                let sn = self.norm(tape, p, src, self.norm1_gain, self.norm1_bias);
                (cross.k.forward(tape, p, sn), cross.v.forward(tape, p, sn))
            }
            None => (self.k.forward(tape, p, xn), self.v.forward(tape, p, xn)),
        };
        let dh = self.dim / self.heads;
        let mut heads = Vec::with_capacity(self.heads);
        let mut attention = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let (mut out, r) = scaled_dot_attention(tape, qh, kh, vh);
            if let Some(m) = mask {
                let keep = attention_mask(tape.value(r), m.ratio, m.direction);
                let keep = tape.constant(keep);
                let rm = tape.mul(r, keep);
                out = tape.matmul(rm, vh);
            }
            heads.push(out);
            attention.push(r);
        }
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        let attn_out = self.out.forward(tape, p, joined);
        let x1 = tape.add(x, attn_out);
        let hn = self.norm(tape, p, x1, self.norm2_gain, self.norm2_bias);
        let hidden = self.ffn_in.forward(tape, p, hn);
        let hidden = tape.gelu(hidden);
        let ff = self.ffn_out.forward(tape, p, hidden);
        let tokens = tape.add(x1, ff);
        BlockOutput { tokens, attention }
    }

    /// Copies the self-attention key/value weights into the cross projections.
    pub fn share_projections(&self, store: &mut ParamStore) {
        if let Some(c) = self.cross {
            for (dst, src) in [(c.k.w, self.k.w), (c.k.b, self.k.b), (c.v.w, self.v.w), (c.v.b, self.v.b)] {
                let value = store.get(src).clone();
                store.set(dst, value).expect("same shapes");
            }
        }
    }
}
