//! Value-function approximators: polynomial features with a linear weight
//! matrix, and a ReLU multilayer perceptron trained with RMSProp.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::CheckpointError;
use crate::tabular::read_u32;

/// All monomials of total degree `<= degree`, in graded order starting with
/// the constant 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolynomialFeatures {
    n_inputs: usize,
    degree: u32,
    /// Each term as the sorted list of input indices it multiplies.
    terms: Vec<Vec<usize>>,
}

impl PolynomialFeatures {
    pub fn new(n_inputs: usize, degree: u32) -> Self {
        let mut terms = vec![Vec::new()];
        let mut last: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..degree {
            let mut next = Vec::new();
            for t in &last {
                let from = t.last().copied().unwrap_or(0);
                for i in from..n_inputs {
                    let mut m = t.clone();
                    m.push(i);
                    next.push(m);
                }
            }
            terms.extend(next.iter().cloned());
            last = next;
        }
        PolynomialFeatures { n_inputs, degree, terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn transform(&self, s: &[f64]) -> Array1<f64> {
        assert_eq!(s.len(), self.n_inputs, "state length");
        self.terms.iter().map(|t| t.iter().map(|&i| s[i]).product()).collect()
    }
}

/// `Q(s, .) = w x(s)` with one weight row per action.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearQ {
    pub w: Array2<f64>,
}

impl LinearQ {
    pub fn zeros(n_actions: usize, n_features: usize) -> Self {
        LinearQ { w: Array2::zeros((n_actions, n_features)) }
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.w.dot(&x)
    }

    /// Gradient of `0.5 (target - Q(s,a))^2` with the target held fixed:
    /// `-(target - Q) x` in row `a`, zero elsewhere.
    pub fn gradient(&self, x: ArrayView1<f64>, a: usize, target: f64) -> Array2<f64> {
        let td = target - self.w.row(a).dot(&x);
        let mut g = Array2::zeros(self.w.raw_dim());
        g.row_mut(a).assign(&(&x * -td));
        g
    }

    /// One semi-gradient Q-learning step; returns the TD error.
    pub fn sgd_step(&mut self, x: ArrayView1<f64>, a: usize, r: f64, x_next: ArrayView1<f64>, lambda: f64, gamma: f64) -> f64 {
        let next_max = self.predict(x_next).fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let target = r + gamma * next_max;
        let td = target - self.w.row(a).dot(&x);
        self.w.row_mut(a).scaled_add(lambda * td, &x);
        td
    }
}

/// Fully connected layer, weights stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// ReLU hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `inputs[k]` is what layer `k` consumed; the last entry is the output.
    inputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.inputs.last().expect("non-empty")
    }
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`. Hidden layers get uniform fan-in
    /// scaled weights, the output layer starts at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
                let w = if k + 1 == n {
                    Array2::zeros((fan_out, fan_in))
                } else {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound))
                };
                Dense { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        Mlp { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.ncols()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut inputs = vec![x.to_owned()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = inputs[k].dot(&l.w.t());
            z += &l.b;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(z);
        }
        ForwardCache { inputs }
    }

    /// Batched forward pass, one row per sample.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).inputs.pop().expect("non-empty")
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let v = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward(v).into_raw_vec_and_offset().0
    }

    /// Backpropagates `d_out` (gradient of the loss at the outputs, one row
    /// per sample) into parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Vec<Dense> {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut dz = d_out.to_owned();
        for k in (0..self.layers.len()).rev() {
            let a_in = &cache.inputs[k];
            let gw = dz.t().dot(a_in);
            let gb = dz.sum_axis(Axis(0));
            if k > 0 {
                let mut da = dz.dot(&self.layers[k].w);
                // ReLU derivative through the previous layer's output.
                ndarray::Zip::from(&mut da).and(a_in).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz = da;
            }
            grads.push(Dense { w: gw, b: gb });
        }
        grads.reverse();
        grads
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

/// RMSProp: `c <- rho c + (1 - rho) g^2`, `theta <- theta - lr g / (sqrt(c) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    cache: Vec<Dense>,
}

impl RmsProp {
    pub const DEFAULT_LR: f64 = 1e-4;

    pub fn new(lr: f64, decay: f64, eps: f64) -> Self {
        RmsProp { lr, decay, eps, cache: Vec::new() }
    }

    pub fn with_lr(lr: f64) -> Self {
        RmsProp::new(lr, 0.9, 1e-8)
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &[Dense]) {
        if self.cache.is_empty() {
            self.cache = net
                .layers
                .iter()
                .map(|l| Dense { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.raw_dim()) })
                .collect();
        }
        let (lr, rho, eps) = (self.lr, self.decay, self.eps);
        let update = |p: &mut f64, c: &mut f64, g: f64| {
            *c = rho * *c + (1.0 - rho) * g * g;
            *p -= lr * g / (c.sqrt() + eps);
        };
        for ((l, c), g) in net.layers.iter_mut().zip(&mut self.cache).zip(grads) {
            ndarray::Zip::from(&mut l.w).and(&mut c.w).and(&g.w).for_each(|p, c, &g| update(p, c, g));
            ndarray::Zip::from(&mut l.b).and(&mut c.b).and(&g.b).for_each(|p, c, &g| update(p, c, g));
        }
    }

    /// Smallest accumulator entry, or 0 before the first step.
    pub fn min_accumulator(&self) -> f64 {
        if self.cache.is_empty() {
            return 0.0;
        }
        self.cache
            .iter()
            .flat_map(|c| c.w.iter().chain(c.b.iter()))
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

const NET_MAGIC: &[u8; 4] = b"NBNN";
const NET_VERSION: u32 = 1;

/// Which model a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum ModelKind {
    Linear = 0,
    Mlp = 1,
}

fn write_tensor<W: Write>(w: &mut W, dims: &[usize], data: impl Iterator<Item = f64>) -> Result<(), CheckpointError> {
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<f64>), CheckpointError> {
    let ndim = read_u32(r)? as usize;
    if ndim == 0 || ndim > 2 {
        return Err(CheckpointError::Shape(format!("{ndim}-d tensor")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok((dims, data))
}

fn write_header<W: Write>(w: &mut W, kind: ModelKind, tensors: usize) -> Result<(), CheckpointError> {
    w.write_all(NET_MAGIC)?;
    w.write_all(&NET_VERSION.to_le_bytes())?;
    w.write_all(&(kind as u32).to_le_bytes())?;
    w.write_all(&(tensors as u32).to_le_bytes())?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, kind: ModelKind) -> Result<usize, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NET_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != NET_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let k = read_u32(r)?;
    if k != kind as u32 {
        return Err(CheckpointError::Shape(format!("model kind {k}, expected {}", kind as u32)));
    }
    Ok(read_u32(r)? as usize)
}

fn to_matrix(dims: Vec<usize>, data: Vec<f64>) -> Result<Array2<f64>, CheckpointError> {
    match dims[..] {
        [r, c] => Array2::from_shape_vec((r, c), data).map_err(|e| CheckpointError::Shape(e.to_string())),
        _ => Err(CheckpointError::Shape(format!("expected a matrix, got {dims:?}"))),
    }
}

impl LinearQ {
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        write_header(&mut w, ModelKind::Linear, 1)?;
        write_tensor(&mut w, self.w.shape(), self.w.iter().copied())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        if read_header(&mut r, ModelKind::Linear)? != 1 {
            return Err(CheckpointError::Shape("linear model holds one tensor".into()));
        }
        let (dims, data) = read_tensor(&mut r)?;
        Ok(LinearQ { w: to_matrix(dims, data)? })
    }
}

impl Mlp {
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        write_header(&mut w, ModelKind::Mlp, 2 * self.layers.len())?;
        for l in &self.layers {
            write_tensor(&mut w, l.w.shape(), l.w.iter().copied())?;
            write_tensor(&mut w, l.b.shape(), l.b.iter().copied())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let n = read_header(&mut r, ModelKind::Mlp)?;
        if n == 0 || n % 2 != 0 {
            return Err(CheckpointError::Shape(format!("{n} tensors")));
        }
        let mut layers = Vec::with_capacity(n / 2);
        for _ in 0..n / 2 {
            let (dw, w) = read_tensor(&mut r)?;
            let w = to_matrix(dw, w)?;
            let (db, b) = read_tensor(&mut r)?;
            if db != [w.nrows()] {
                return Err(CheckpointError::Shape(format!("bias {db:?} for weights {:?}", w.shape())));
            }
            if let Some(prev) = layers.last().map(|l: &Dense| l.w.nrows()) {
                if prev != w.ncols() {
                    return Err(CheckpointError::Shape(format!("layer input {} after output {prev}", w.ncols())));
                }
            }
            layers.push(Dense { w, b: Array1::from(b) });
        }
        Ok(Mlp { layers })
    }
}
