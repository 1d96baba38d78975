//! Texture amplification: a background color predicted from point features,
//! the view/prototype alignment loss and the fused classification logits.

use rand::Rng;

use crate::autograd::{row, Tape, Var};
use crate::encoders::{zero_shot_logits, DepthEncoder, PrototypeMatrix};
use crate::error::{Error, Result};
use crate::params::{Binding, Linear, ParamStore};
use crate::projection::EnhancedImage;

/// `c = (tanh(W₂·relu(W₁·F^P + b₁) + b₂) + 1) / 2`.
#[derive(Clone, Copy, Debug)]
pub struct ColorGenerator {
    pub hidden: Linear,
    pub out: Linear,
}

impl ColorGenerator {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, "tam.color.hidden", dim, hidden, rng),
            out: Linear::new(store, "tam.color.out", hidden, 3, rng),
        }
    }

    /// `1×d` feature to a `1×3` color.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, fp: Var) -> Var {
        let h = self.hidden.forward(tape, p, fp);
        let h = tape.relu(h);
        let o = self.out.forward(tape, p, h);
        let t = tape.tanh(o);
        tape.affine(t, 0.5, 0.5)
    }
}

/// Plain evaluation of the color generator, without a tape.
pub fn synth_color(store: &ParamStore, gen: &ColorGenerator, fp: &[f64]) -> Result<[f64; 3]> {
    if fp.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("point feature is not finite"));
    }
    let w1 = store.get(gen.hidden.w);
    if w1.nrows() != fp.len() {
        return Err(Error::invalid(format!("feature dim {} but generator expects {}", fp.len(), w1.nrows())));
    }
    let x = ndarray::ArrayView1::from(fp);
    let h = (x.dot(w1) + store.get(gen.hidden.b).row(0)).mapv(|v| v.max(0.0));
    let o = h.dot(store.get(gen.out.w)) + store.get(gen.out.b).row(0);
    Ok([0, 1, 2].map(|k| (o[k].tanh() + 1.0) / 2.0))
}

/// `(1/V)·Σ_i (1 − cos(F_i^E, F^T))/2` for `V×d` view features and a `1×d` prototype.
pub fn alignment_loss_var(tape: &mut Tape, views: Var, prototype: Var) -> Var {
    let v = tape.l2_normalize_rows(views);
    let p = tape.l2_normalize_rows(prototype);
    let cos = tape.matmul_t(v, p);
    let l = tape.affine(cos, -0.5, 0.5);
    tape.mean(l)
}

pub fn alignment_loss(views: &[Vec<f64>], prototype: &[f64]) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::invalid("at least one view feature is required"));
    }
    let zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
    if zero(prototype) || views.iter().any(|v| zero(v)) {
        return Err(Error::DegenerateInput("zero-norm feature in alignment loss".into()));
    }
    if views.iter().any(|v| v.len() != prototype.len()) {
        return Err(Error::invalid("view and prototype dims differ"));
    }
    let mut tape = Tape::new();
    let rows: Vec<Var> = views.iter().map(|v| tape.constant(row(v))).collect();
    let vs = tape.concat_rows(&rows);
    let p = tape.constant(row(prototype));
    let l = alignment_loss_var(&mut tape, vs, p);
    Ok(tape.scalar(l))
}

/// Class scores of one sample, split into their two sources.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsBundle {
    pub geometric: Vec<f64>,
    pub visual: Vec<f64>,
    pub total: Vec<f64>,
    pub class_order: Vec<String>,
}

impl LogitsBundle {
    pub fn new(geometric: Vec<f64>, visual: Vec<f64>, class_order: Vec<String>) -> Result<Self> {
        if geometric.len() != class_order.len() || visual.len() != class_order.len() {
            return Err(Error::invalid("logit terms and class order differ in length"));
        }
        let total = geometric.iter().zip(&visual).map(|(a, b)| a + b).collect();
        Ok(Self { geometric, visual, total, class_order })
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.total.iter().enumerate() {
            if *v > self.total[best] {
                best = i;
            }
        }
        best
    }

    pub fn predicted(&self) -> &str {
        &self.class_order[self.argmax()]
    }
}

/// `F^T·F̂` plus, when `visual` is set, the zero-shot score of the enhanced views.
pub fn fused_logits(
    fhat: &[f64],
    prototypes: &PrototypeMatrix,
    images: &[EnhancedImage],
    temperature: f64,
    encoder: &DepthEncoder,
    visual: bool,
) -> Result<LogitsBundle> {
    if fhat.len() != prototypes.dim() {
        return Err(Error::invalid(format!("F̂ has dim {} but prototypes have {}", fhat.len(), prototypes.dim())));
    }
    let f = ndarray::ArrayView1::from(fhat);
    let geometric: Vec<f64> = prototypes.rows.dot(&f).to_vec();
    let vis = if visual {
        zero_shot_logits(encoder, images, prototypes, temperature)?
    } else {
        vec![0.0; prototypes.len()]
    };
    LogitsBundle::new(geometric, vis, prototypes.names.clone())
}

/// Geometric term on the tape: `1×d` feature against `C×d` prototypes.
pub fn geometric_logits_var(tape: &mut Tape, fhat: Var, prototypes: Var) -> Var {
    tape.matmul_t(fhat, prototypes)
}

/// Builds a `C×d` constant of the prototype rows.
pub fn prototype_constant(tape: &mut Tape, prototypes: &PrototypeMatrix) -> Var {
    tape.constant(prototypes.rows.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::text_prototypes;
    use crate::autograd::Mat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn generator(dim: usize) -> (ParamStore, ColorGenerator) {
        let mut store = ParamStore::new();
        let g = ColorGenerator::new(&mut store, dim, dim / 2, &mut ChaCha8Rng::seed_from_u64(3));
        (store, g)
    }

    #[test]
    fn zero_weights_give_mid_gray() {
        let (mut store, g) = generator(8);
        for id in [g.hidden.w, g.out.w] {
            store.get_mut(id).fill(0.0);
        }
        assert_eq!(synth_color(&store, &g, &[1.0; 8]).unwrap(), [0.5; 3]);
        store.get_mut(g.out.b).fill(20.0);
        assert!(synth_color(&store, &g, &[1.0; 8]).unwrap().iter().all(|&c| c > 1.0 - 1e-8));
        assert!(synth_color(&store, &g, &[f64::NAN; 8]).is_err());
    }

    #[test]
    fn plain_and_taped_paths_agree() {
        let (store, g) = generator(8);
        let x = [0.3, -1.0, 0.5, 2.0, 0.0, -0.4, 1.1, 0.9];
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let v = tape.constant(row(&x));
        let c = g.forward(&mut tape, &p, v);
        let plain = synth_color(&store, &g, &x).unwrap();
        for k in 0..3 {
            assert!((tape.value(c)[[0, k]] - plain[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_cases() {
        let p = vec![1.0, 2.0, -1.0];
        let neg: Vec<f64> = p.iter().map(|v| -v).collect();
        assert!(alignment_loss(&[p.clone(), p.clone()], &p).unwrap().abs() < 1e-12);
        assert!((alignment_loss(&[neg], &p).unwrap() - 1.0).abs() < 1e-12);
        let e = vec![1.0, 0.0];
        let o = vec![0.0, 3.0];
        assert!((alignment_loss(&[o, e.clone()], &e).unwrap() - 0.25).abs() < 1e-12);
        assert!(matches!(alignment_loss(&[vec![0.0, 0.0]], &e), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn hand_computed_totals() {
        let names: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let mut protos = text_prototypes(&names, 0, 2).unwrap();
        protos.rows = Mat::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = crate::encoders::EncoderConfig { layers: 1, dim: 2, heads: 1, ..Default::default() };
        let enc = DepthEncoder::new(&cfg, 8, 8).unwrap();
        let b = fused_logits(&[0.25, -0.5], &protos, &[], 1.0, &enc, false).unwrap();
        assert_eq!(b.total, vec![0.25, -0.5]);
        assert_eq!(b.predicted(), "a");
        assert!(fused_logits(&[0.25], &protos, &[], 1.0, &enc, false).is_err());
    }
}
