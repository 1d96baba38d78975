//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Every differentiable computation in the crate (encoders, rectification,
//! texture amplification, the discriminator and all losses) is recorded on a
//! [`Tape`] and differentiated with [`Tape::backward`]. Scalars are `1×1`
//! matrices and vectors are `1×d` rows.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleVar(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Gelu { x: Var, slope: Mat },
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Square(Var),
    SoftmaxRows(Var),
    LayerNormRows { x: Var, rstd: Vec<f64> },
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GroupMax { x: Var, argmax: Vec<usize> },
    Gather { x: Var, idx: Rc<Vec<usize>> },
    LinearCombine { coeffs: Var, basis: Rc<Vec<Mat>> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Mat },
}

struct Node {
    value: Rc<Mat>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for a single forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

/// Value and slope of the tanh-form GELU, sharing one tanh.
fn gelu_pair(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let x2 = x * x;
    let u = C * x * (1.0 + 0.044715 * x2);
    // tanh(u) = 1 - 2/(e^{2u}+1), saturating cleanly for large |u|
    let t = if u > 20.0 {
        1.0
    } else if u < -20.0 {
        -1.0
    } else {
        1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
    };
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x2);
    (y, dy)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.push_rc(Rc::new(value), op, requires_grad)
    }

    fn push_rc(&mut self, value: Rc<Mat>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that gradients flow into.
    pub fn variable(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf_rc(&mut self, value: Rc<Mat>, requires_grad: bool) -> Var {
        self.push_rc(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMulT(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Adds a `1×d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let out = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    /// Multiplies every row of `a` elementwise by a `1×d` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let out = self.value(a) * self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::MulRow(a, row), rg)
    }

    /// Multiplies `a` by a `1×1` variable.
    pub fn scale_var(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out = self.value(a) * k;
        let rg = self.rg(a) || self.rg(s);
        self.push(out, Op::ScaleVar(a, s), rg)
    }

    /// `mul * a + add`
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let out = self.value(a).mapv(|x| mul * x + add);
        let rg = self.rg(a);
        self.push(out, Op::Affine(a, mul), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let rg = self.rg(a);
        let src = self.value(a);
        let mut out = Mat::zeros(src.raw_dim());
        let mut slope = if rg { Mat::zeros(src.raw_dim()) } else { Mat::zeros((0, 0)) };
        if rg {
            ndarray::Zip::from(&mut out).and(&mut slope).and(src).for_each(|o, s, &x| {
                (*o, *s) = gelu_pair(x);
            });
        } else {
            ndarray::Zip::from(&mut out).and(src).for_each(|o, &x| *o = gelu_pair(x).0);
        }
        self.push(out, Op::Gelu { x: a, slope }, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let d = out.ncols() as f64;
        let mut rstd = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / d;
            let var = row.fold(0.0, |acc, &x| acc + (x - mean) * (x - mean)) / d;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|x| (x - mean) * r);
            rstd.push(r);
        }
        let rg = self.rg(a);
        self.push(out, Op::LayerNormRows { x: a, rstd }, rg)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt().max(NORM_EPS);
            row.mapv_inplace(|x| x / n);
            norms.push(n);
        }
        let rg = self.rg(a);
        self.push(out, Op::L2NormalizeRows { x: a, norms }, rg)
    }

    /// Mean over rows, producing a `1×d` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = v.sum_axis(Axis(0)).insert_axis(Axis(0)) / v.nrows() as f64;
        let rg = self.rg(a);
        self.push(out, Op::MeanRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Mat::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + width]).to_owned();
        let rg = self.rg(a);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, height: usize) -> Var {
        let out = self.value(a).slice(s![start..start + height, ..]).to_owned();
        let rg = self.rg(a);
        self.push(out, Op::SliceRows(a, start), rg)
    }

    /// Column-wise max over consecutive row groups of size `group`.
    pub fn group_max(&mut self, a: Var, group: usize) -> Var {
        let v = self.value(a);
        assert!(group > 0 && v.nrows().is_multiple_of(group), "rows must split into groups");
        let groups = v.nrows() / group;
        let d = v.ncols();
        let mut out = Mat::zeros((groups, d));
        let mut argmax = vec![0; groups * d];
        for g in 0..groups {
            for j in 0..d {
                let mut best = g * group;
                for r in g * group + 1..(g + 1) * group {
                    if v[[r, j]] > v[[best, j]] {
                        best = r;
                    }
                }
                out[[g, j]] = v[[best, j]];
                argmax[g * d + j] = best;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::GroupMax { x: a, argmax }, rg)
    }

    /// `out.flat[i] = a.flat[idx[i]]` reshaped to `shape` (row-major).
    pub fn gather(&mut self, a: Var, idx: Rc<Vec<usize>>, shape: (usize, usize)) -> Var {
        assert_eq!(idx.len(), shape.0 * shape.1);
        let src = self.value(a);
        let flat = src.as_slice().expect("tape values are contiguous");
        let data: Vec<f64> = idx.iter().map(|&i| flat[i]).collect();
        let out = Mat::from_shape_vec(shape, data).expect("shape checked above");
        let rg = self.rg(a);
        self.push(out, Op::Gather { x: a, idx }, rg)
    }

    /// `Σ_k coeffs[k] · basis[k]` for a `1×K` coefficient row.
    pub fn linear_combine(&mut self, coeffs: Var, basis: Rc<Vec<Mat>>) -> Var {
        let c = self.value(coeffs);
        assert_eq!(c.len(), basis.len());
        let mut out = Mat::zeros(basis[0].raw_dim());
        for (k, b) in basis.iter().enumerate() {
            out.scaled_add(c[[0, k]], b);
        }
        let rg = self.rg(coeffs);
        self.push(out, Op::LinearCombine { coeffs, basis }, rg)
    }

    /// Mean softmax cross-entropy of `B×C` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.nrows(), targets.len());
        let mut probs = l.clone();
        let mut loss = 0.0;
        for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
            loss -= row[targets[i]].max(f64::MIN_POSITIVE).ln();
        }
        let out = Mat::from_elem((1, 1), loss / targets.len() as f64);
        let rg = self.rg(logits);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Reverse pass from a `1×1` output.
    pub fn backward(&self, output: Var) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let out_val = self.value(output);
        grads[output.0] = Some(Mat::ones(out_val.raw_dim()));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let y = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*r) {
                    self.accumulate(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, r) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*r));
                }
                if self.rg(*r) {
                    let gr = (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *r, gr);
                }
            }
            Op::ScaleVar(a, s) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.scalar(*s));
                }
                if self.rg(*s) {
                    let gs = (g * self.value(*a)).sum();
                    self.accumulate(grads, *s, Mat::from_elem((1, 1), gs));
                }
            }
            Op::Affine(a, m) => self.accumulate(grads, *a, g * *m),
            Op::Relu(a) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                self.accumulate(grads, *a, d);
            }
            Op::Gelu { x, slope } => {
                self.accumulate(grads, *x, g * slope);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(y)
                    .for_each(|d, &t| *d *= 1.0 - t * t);
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(y)
                    .for_each(|d, &s| *d *= s * (1.0 - s));
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => self.accumulate(grads, *a, g / self.value(*a)),
            Op::Square(a) => self.accumulate(grads, *a, g * self.value(*a) * 2.0),
            Op::SoftmaxRows(a) => {
                let mut d = g * y;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let s = drow.sum();
                    drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv * s);
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNormRows { x, rstd } => {
                let n = y.ncols() as f64;
                let mut d = g.clone();
                for (i, mut drow) in d.rows_mut().into_iter().enumerate() {
                    let yrow = y.row(i);
                    let mean_g = drow.sum() / n;
                    let mean_gy = drow.dot(&yrow) / n;
                    drow.zip_mut_with(&yrow, |dv, &yv| {
                        *dv = rstd[i] * (*dv - mean_g - yv * mean_gy)
                    });
                }
                self.accumulate(grads, *x, d);
            }
            Op::L2NormalizeRows { x, norms } => {
                let mut d = g.clone();
                for (i, mut drow) in d.rows_mut().into_iter().enumerate() {
                    let yrow = y.row(i);
                    let gy = drow.dot(&yrow);
                    drow.zip_mut_with(&yrow, |dv, &yv| *dv = (*dv - yv * gy) / norms[i]);
                }
                self.accumulate(grads, *x, d);
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).nrows();
                let row = g / n as f64;
                let d = row.broadcast(self.value(*a).raw_dim()).unwrap().to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let d = Mat::from_elem(v.raw_dim(), g[[0, 0]] / v.len() as f64);
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::GroupMax { x, argmax } => {
                let mut d = Mat::zeros(self.value(*x).raw_dim());
                let cols = g.ncols();
                for ((gi, j), &gv) in g.indexed_iter() {
                    d[[argmax[gi * cols + j], j]] += gv;
                }
                self.accumulate(grads, *x, d);
            }
            Op::Gather { x, idx } => {
                let mut d = Mat::zeros(self.value(*x).raw_dim());
                {
                    let flat = d.as_slice_mut().unwrap();
                    for (&i, &gv) in idx.iter().zip(g.iter()) {
                        flat[i] += gv;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::LinearCombine { coeffs, basis } => {
                let gc: Vec<f64> = basis.iter().map(|b| (g * b).sum()).collect();
                let d = Mat::from_shape_vec((1, gc.len()), gc).unwrap();
                self.accumulate(grads, *coeffs, d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let b = targets.len() as f64;
                let mut d = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    d[[i, t]] -= 1.0;
                }
                d *= g[[0, 0]] / b;
                self.accumulate(grads, *logits, d);
            }
        }
    }
}

/// Builds a `1×n` row.
pub fn row(values: &[f64]) -> Mat {
    Mat::from_shape_vec((1, values.len()), values.to_vec()).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of d(loss)/d(input) for a tape-built function.
    fn check<F>(input: Mat, f: F)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let x = tape.variable(input.clone());
        let out = f(&mut tape, x);
        let grads = tape.backward(out);
        let analytic = grads.get(x).cloned().unwrap_or_else(|| Mat::zeros(input.raw_dim()));
        let eval = |m: &Mat| {
            let mut t = Tape::new();
            let v = t.constant(m.clone());
            let o = f(&mut t, v);
            t.scalar(o)
        };
        let h = 1e-5;
        for idx in 0..input.len() {
            let mut plus = input.clone();
            let mut minus = input.clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            minus.as_slice_mut().unwrap()[idx] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom < 1e-5,
                "element {idx}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn matmul_gradients() {
        let w = random(4, 3, 1);
        check(random(2, 4, 2), |t, x| {
            let wv = t.constant(w.clone());
            let y = t.matmul(x, wv);
            let y = t.square(y);
            t.sum(y)
        });
        let a = random(5, 4, 3);
        check(random(2, 4, 4), |t, x| {
            let av = t.constant(a.clone());
            let y = t.matmul_t(av, x);
            let y = t.tanh(y);
            t.sum(y)
        });
    }

    #[test]
    fn nonlinearity_gradients() {
        check(random(3, 5, 5), |t, x| {
            let y = t.gelu(x);
            let y = t.sigmoid(y);
            let y = t.softmax_rows(y);
            let y = t.square(y);
            t.sum(y)
        });
    }

    #[test]
    fn normalization_gradients() {
        let w = random(3, 6, 6);
        check(random(3, 6, 7), |t, x| {
            let wv = t.constant(w.clone());
            let y = t.layer_norm_rows(x);
            let y = t.mul(y, wv);
            let z = t.l2_normalize_rows(y);
            let z = t.mul(z, wv);
            let m = t.mean_rows(z);
            let m = t.square(m);
            t.sum(m)
        });
    }

    #[test]
    fn structural_gradients() {
        let w = random(1, 4, 8);
        check(random(6, 4, 9), |t, x| {
            let a = t.slice_cols(x, 1, 2);
            let b = t.slice_rows(x, 2, 3);
            let c = t.concat_cols(&[x, x]);
            let g = t.group_max(x, 3);
            let wv = t.constant(w.clone());
            let r = t.mul_row(g, wv);
            let r = t.add_row(r, wv);
            let parts = [t.sum(a), t.mean(b), t.mean(c), t.sum(r)];
            let all = t.concat_rows(&parts);
            let sq = t.square(all);
            t.sum(sq)
        });
        let idx = Rc::new(vec![5, 0, 3, 3, 11, 7]);
        check(random(3, 4, 10), move |t, x| {
            let y = t.gather(x, idx.clone(), (2, 3));
            let y = t.square(y);
            t.sum(y)
        });
    }

    #[test]
    fn cross_entropy_gradient() {
        check(random(3, 5, 11), |t, x| {
            let y = t.scale(x, 3.0);
            t.cross_entropy(y, &[0, 4, 2])
        });
    }

    #[test]
    fn linear_combine_and_scale_var_gradients() {
        let basis = Rc::new(vec![random(2, 2, 12), random(2, 2, 13), random(2, 2, 14)]);
        check(random(1, 3, 15), move |t, c| {
            let y = t.linear_combine(c, basis.clone());
            let s = t.slice_cols(c, 0, 1);
            let y = t.scale_var(y, s);
            let y = t.tanh(y);
            t.sum(y)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(random(2, 2, 1));
        let b = t.variable(random(2, 2, 2));
        let c = t.matmul(a, b);
        let s = t.sum(c);
        let g = t.backward(s);
        assert!(g.get(a).is_none());
        assert!(g.get(b).is_some());
    }
}
