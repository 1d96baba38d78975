//! Hash-seeded class prototypes, zero-shot scoring and the adapter seam for
//! real pretrained encoders.

use std::collections::HashSet;

use sha2::{Digest, Sha256};

use super::depth::DepthEncoder;
use crate::autograd::{row, Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::params::hex_digest;
use crate::projection::EnhancedImage;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const LCG_MUL: u64 = 6_364_136_223_846_793_005;
const LCG_INC: u64 = 1_442_695_040_888_963_407;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Unit vector for one name.
///
/// `state = fnv1a64(utf8(name)) ^ seed`; each component advances
/// `state = state·6364136223846793005 + 1442695040888963407 (mod 2⁶⁴)` and
/// takes `2·(state >> 11)/2⁵³ − 1`. The vector is then L2-normalized.
pub fn prototype_vector(name: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut state = fnv1a64(name.as_bytes()) ^ seed;
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            state = state.wrapping_mul(LCG_MUL).wrapping_add(LCG_INC);
            2.0 * (state >> 11) as f64 / (1u64 << 53) as f64 - 1.0
        })
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// One unit row per class, in a fixed class order.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeMatrix {
    pub names: Vec<String>,
    /// `classes × d`.
    pub rows: Mat,
}

impl PrototypeMatrix {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.rows.row(i).to_vec()
    }

    /// The rows of `names`, in that order.
    pub fn subset(&self, names: &[String]) -> Result<PrototypeMatrix> {
        let mut rows = Mat::zeros((names.len(), self.dim()));
        for (i, n) in names.iter().enumerate() {
            let j = self.index_of(n).ok_or_else(|| Error::invalid(format!("no prototype for class '{n}'")))?;
            rows.row_mut(i).assign(&self.rows.row(j));
        }
        Ok(PrototypeMatrix { names: names.to_vec(), rows })
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0]);
        }
        for v in self.rows.iter() {
            h.update(v.to_le_bytes());
        }
        hex_digest(h)
    }
}

pub fn text_prototypes(names: &[String], seed: u64, dim: usize) -> Result<PrototypeMatrix> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::invalid(format!("duplicate class name '{n}'")));
        }
    }
    if dim == 0 {
        return Err(Error::invalid("prototype dim must be positive"));
    }
    let mut rows = Mat::zeros((names.len(), dim));
    for (i, n) in names.iter().enumerate() {
        rows.row_mut(i).assign(&ndarray::Array1::from(prototype_vector(n, seed, dim)));
    }
    Ok(PrototypeMatrix { names: names.to_vec(), rows })
}

/// Scores `1×C`: mean over views of `feature·prototypeᵀ / temperature`.
/// `features` holds one pooled image feature per row.
pub fn zero_shot_var(tape: &mut Tape, features: Var, prototypes: Var, temperature: f64) -> Var {
    let s = tape.matmul_t(features, prototypes);
    let s = tape.mean_rows(s);
    tape.scale(s, 1.0 / temperature)
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {t}")))
    }
}

/// Zero-shot class scores of a set of views using the frozen image stub.
pub fn zero_shot_logits(
    encoder: &DepthEncoder,
    images: &[EnhancedImage],
    prototypes: &PrototypeMatrix,
    temperature: f64,
) -> Result<Vec<f64>> {
    zero_shot_with(encoder, images, prototypes, temperature)
}

/// Zero-shot scoring through any [`ForeignEncoder`].
pub fn zero_shot_with(
    encoder: &dyn ForeignEncoder,
    images: &[EnhancedImage],
    prototypes: &PrototypeMatrix,
    temperature: f64,
) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if images.is_empty() {
        return Err(Error::invalid("at least one image is required"));
    }
    let feats = encoder.image_features(images)?;
    if feats.iter().any(|f| f.len() != prototypes.dim()) {
        return Err(Error::invalid("image feature dim differs from prototype dim"));
    }
    let mut tape = Tape::new();
    let rows: Vec<Var> = feats.iter().map(|f| tape.constant(row(f))).collect();
    let f = tape.concat_rows(&rows);
    let p = tape.constant(prototypes.rows.clone());
    let s = zero_shot_var(&mut tape, f, p, temperature);
    Ok(tape.value(s).iter().copied().collect())
}

/// Adapter for plugging a pretrained vision-language model in place of the
/// frozen stubs.
pub trait ForeignEncoder {
    /// One pooled feature per image.
    fn image_features(&self, images: &[EnhancedImage]) -> Result<Vec<Vec<f64>>>;

    fn class_prototypes(&self, names: &[String]) -> Result<PrototypeMatrix>;
}

impl ForeignEncoder for DepthEncoder {
    fn image_features(&self, images: &[EnhancedImage]) -> Result<Vec<Vec<f64>>> {
        self.encode_images(images)
    }

    fn class_prototypes(&self, names: &[String]) -> Result<PrototypeMatrix> {
        text_prototypes(names, self.config.seed, self.config.dim)
    }
}
