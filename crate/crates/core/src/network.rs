//! MNIST ingestion, quantization-aware training of a dense network with
//! binary or 4-level weights, and inference on ideal or crossbar backends.

use alloc::format;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Mul, Sub};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crossbar::{
    Encoding, InjectorCounts, MapOptions, ProgrammingStats, ReadNoise, TiledMatrix, WeightMapping,
};
use crate::device::DeviceParams;
use crate::math::{expf, lnf, roundf};
use crate::programming::ProgramConfig;
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major images scaled to [0, 1].
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    pub split: Split,
}

fn be_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::Format("truncated header".into()))
}

/// Parses an IDX image file: `(count, rows, cols, raw pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("bad image magic {magic}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let len = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::Format(format!("image payload truncated: {} < {len}", body.len())));
    }
    Ok((n, rows, cols, &body[..len]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("bad label magic {magic}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format(format!("label payload truncated: {} < {n}", body.len())));
    }
    let labels = &body[..n];
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {bad} out of range")));
    }
    Ok(labels)
}

impl Dataset {
    pub fn from_idx(images: &[u8], labels: &[u8], split: Split) -> Result<Self> {
        let (n, rows, cols, px) = parse_idx_images(images)?;
        let labels = parse_idx_labels(labels)?;
        if labels.len() != n {
            return Err(Error::Format(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        Ok(Self {
            images: px.iter().map(|&v| v as f32 / 255.0).collect(),
            labels: labels.to_vec(),
            rows,
            cols,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    /// Items `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let p = self.pixels();
        Self {
            images: self.images[start * p..end * p].to_vec(),
            labels: self.labels[start..end].to_vec(),
            rows: self.rows,
            cols: self.cols,
            split: self.split,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// `z > 0 → 1`, else 0; trained through a hard-sigmoid surrogate.
    Step,
    /// `clamp(z, 0, 1)`.
    ClippedRelu,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Step => {
                if z > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Activation::ClippedRelu => {
                if z < T::ZERO {
                    T::ZERO
                } else if z > T::ONE {
                    T::ONE
                } else {
                    z
                }
            }
        }
    }

    #[inline]
    fn surrogate_grad<T: Real>(self, z: T) -> T {
        let (lo, hi) = match self {
            Activation::Step => (T::from_f64(-0.5), T::from_f64(0.5)),
            Activation::ClippedRelu => (T::ZERO, T::ONE),
        };
        if z > lo && z < hi {
            T::ONE
        } else {
            T::ZERO
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub sizes: Vec<usize>,
}

impl Default for Topology {
    fn default() -> Self {
        Self { sizes: alloc::vec![784, 256, 128, 10] }
    }
}

/// Quantizer for 2 or 4 levels on [−1, 1].
pub fn quantize(levels: u8, w: f32) -> f32 {
    const FOUR: [f32; 4] = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
    if levels == 2 {
        if w >= 0.0 {
            1.0
        } else {
            -1.0
        }
    } else {
        let k = roundf(1.5 * w + 1.5).clamp(0.0, 3.0) as usize;
        FOUR[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Real-valued shadow weights, row-major (input, output).
    pub shadow: Vec<f32>,
    pub quantized: Vec<f32>,
    pub bias: Vec<f32>,
    /// Fixed digital scale applied to the weighted sum.
    pub gain: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedNetwork {
    pub levels: u8,
    pub topology: Topology,
    pub hidden_activation: Activation,
    pub use_bias: bool,
    pub layers: Vec<Layer>,
}

impl QuantizedNetwork {
    pub fn requantize(&mut self) {
        let levels = self.levels;
        for l in &mut self.layers {
            for (q, &w) in l.quantized.iter_mut().zip(&l.shadow) {
                *q = quantize(levels, w);
            }
        }
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(|l| l.shadow.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = &self.topology.sizes;
        if sizes.len() != self.layers.len() + 1 {
            return Err(Error::InvalidParams("topology does not match layer count".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let n = l.fan_in * l.fan_out;
            if l.fan_in != sizes[i] || l.fan_out != sizes[i + 1] || l.shadow.len() != n
                || l.quantized.len() != n || l.bias.len() != l.fan_out
            {
                return Err(Error::InvalidParams(format!("layer {i} has inconsistent shapes")));
            }
            if l.quantized.iter().any(|&q| quantize(self.levels, q) != q) {
                return Err(Error::InvalidParams(format!("layer {i} has off-codebook weights")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f32,
    /// Items held out from the end of the training split for model selection.
    pub validation_size: usize,
    /// Layer gain numerator; the gain is `gain / sqrt(fan_in)`.
    pub gain: f32,
    pub use_bias: bool,
}

impl Hyperparams {
    pub fn binary() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            lr_decay_every: 7,
            lr_decay_factor: 0.3,
            validation_size: 5000,
            gain: 3.0,
            use_bias: false,
        }
    }

    pub fn four_level() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            lr_decay_every: 10,
            lr_decay_factor: 0.3,
            validation_size: 5000,
            gain: 3.0,
            use_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::InvalidParams("batch size and decay period must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParams("learning rate or momentum out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f32,
    pub val_accuracy: f32,
}

/// Floating type the dense kernels run in.
pub trait Real:
    Copy + PartialOrd + Default + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn from_f32(x: f32) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// `c = alpha·op(a)·op(b) + beta·c` with explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        expf(self)
    }
    fn ln(self) -> Self {
        lnf(self)
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        crate::math::exp(self)
    }
    fn ln(self) -> Self {
        crate::math::ln(self)
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `c = alpha · A·B`, with `A` (m×k) optionally transposed storage and `B`
/// (k×n) optionally transposed storage.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; strides describe the stated layouts.
    unsafe {
        T::gemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, T::ZERO, c.as_mut_ptr(), n as isize, 1)
    }
}

struct LayerView<'a, T> {
    w: &'a [T],
    b: Option<&'a [T]>,
    gain: T,
    fan_in: usize,
    fan_out: usize,
}

struct Pass<T> {
    /// `acts[0]` is the input; `acts[l+1]` the output of layer l (logits last).
    acts: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

fn forward<T: Real>(layers: &[LayerView<'_, T>], x: Vec<T>, batch: usize, act: Activation) -> Pass<T> {
    let mut acts = alloc::vec![x];
    let mut pre = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let mut z = alloc::vec![T::ZERO; batch * l.fan_out];
        gemm(batch, l.fan_in, l.fan_out, l.gain, &acts[i], false, l.w, false, &mut z);
        if let Some(b) = l.b {
            for row in z.chunks_exact_mut(l.fan_out) {
                for (v, &bb) in row.iter_mut().zip(b) {
                    *v += bb;
                }
            }
        }
        let a = if i + 1 == layers.len() {
            z.clone()
        } else {
            z.iter().map(|&v| act.apply(v)).collect()
        };
        pre.push(z);
        acts.push(a);
    }
    Pass { acts, pre }
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn softmax_xent<T: Real>(logits: &[T], labels: &[u8], classes: usize) -> (f64, Vec<T>) {
    let batch = labels.len();
    let inv_b = T::from_f64(1.0 / batch as f64);
    let mut grad = alloc::vec![T::ZERO; logits.len()];
    let mut loss = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let z = &logits[i * classes..(i + 1) * classes];
        let m = z.iter().copied().fold(z[0], |a, b| if b > a { b } else { a });
        let mut s = T::ZERO;
        for &v in z {
            s += (v - m).exp();
        }
        let lse = m + s.ln();
        loss += (lse - z[y as usize]).to_f64();
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (z[j] - lse).exp();
            let t = if j == y as usize { T::ONE } else { T::ZERO };
            *gv = (p - t) * inv_b;
        }
    }
    (loss / batch as f64, grad)
}

struct Grads<T> {
    w: Vec<Vec<T>>,
    b: Vec<Vec<T>>,
}

fn backward<T: Real>(layers: &[LayerView<'_, T>], pass: &Pass<T>, dz_last: Vec<T>, batch: usize, act: Activation) -> Grads<T> {
    let nl = layers.len();
    let mut gw = Vec::with_capacity(nl);
    let mut gb = Vec::with_capacity(nl);
    let mut dz = dz_last;
    for i in (0..nl).rev() {
        let l = &layers[i];
        let mut dw = alloc::vec![T::ZERO; l.fan_in * l.fan_out];
        gemm(l.fan_in, batch, l.fan_out, l.gain, &pass.acts[i], true, &dz, false, &mut dw);
        let mut db = alloc::vec![T::ZERO; l.fan_out];
        for row in dz.chunks_exact(l.fan_out) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        gw.push(dw);
        gb.push(db);
        if i > 0 {
            let mut da = alloc::vec![T::ZERO; batch * l.fan_in];
            gemm(batch, l.fan_out, l.fan_in, l.gain, &dz, false, l.w, true, &mut da);
            for (d, &z) in da.iter_mut().zip(&pass.pre[i - 1]) {
                *d = *d * act.surrogate_grad(z);
            }
            dz = da;
        }
    }
    gw.reverse();
    gb.reverse();
    Grads { w: gw, b: gb }
}

fn views<'a, T: Real>(net: &QuantizedNetwork, w: &'a [Vec<T>], b: &'a [Vec<T>]) -> Vec<LayerView<'a, T>> {
    net.layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerView {
            w: &w[i],
            b: if net.use_bias { Some(&b[i][..]) } else { None },
            gain: T::from_f32(l.gain),
            fan_in: l.fan_in,
            fan_out: l.fan_out,
        })
        .collect()
}

fn convert<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::from_f32(x)).collect()
}

fn argmax_rows<T: Real>(z: &[T], classes: usize) -> Vec<u8> {
    z.chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

fn predict_generic<T: Real>(net: &QuantizedNetwork, images: &[f32], n: usize, chunk: usize) -> Vec<u8> {
    let w: Vec<Vec<T>> = net.layers.iter().map(|l| convert(&l.quantized)).collect();
    let b: Vec<Vec<T>> = net.layers.iter().map(|l| convert(&l.bias)).collect();
    let v = views(net, &w, &b);
    let px = net.topology.sizes[0];
    let classes = *net.topology.sizes.last().unwrap_or(&10);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let x = convert::<T>(&images[start * px..end * px]);
        let pass = forward(&v, x, end - start, net.hidden_activation);
        out.extend(argmax_rows(pass.acts.last().unwrap(), classes));
        start = end;
    }
    out
}

/// Ideal-backend predictions with exact quantized weights in f64.
pub fn predict_ideal(net: &QuantizedNetwork, images: &[f32], n: usize) -> Vec<u8> {
    predict_generic::<f64>(net, images, n, 2000)
}

fn accuracy_of(pred: &[u8], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let ok = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    100.0 * ok as f64 / labels.len() as f64
}

/// Builds the initial network: Gaussian shadow weights of scale 1/sqrt(fan_in).
pub fn init_network(topology: &Topology, levels: u8, hp: &Hyperparams, seed: u64) -> Result<QuantizedNetwork> {
    if levels != 2 && levels != 4 {
        return Err(Error::InvalidParams("levels must be 2 or 4".into()));
    }
    if topology.sizes.len() < 2 || topology.sizes.contains(&0) {
        return Err(Error::InvalidParams("topology needs at least two non-empty layers".into()));
    }
    let layers = topology
        .sizes
        .windows(2)
        .enumerate()
        .map(|(i, s)| {
            let (fi, fo) = (s[0], s[1]);
            let mut rng = stream(seed, Purpose::WeightInit, i as u64);
            let scale = 1.0 / crate::math::sqrtf(fi as f32);
            let shadow: Vec<f32> = (0..fi * fo)
                .map(|_| {
                    let z: f32 = rng.sample(StandardNormal);
                    (z * scale).clamp(-1.0, 1.0)
                })
                .collect();
            let quantized = shadow.iter().map(|&w| quantize(levels, w)).collect();
            Layer { fan_in: fi, fan_out: fo, shadow, quantized, bias: alloc::vec![0.0; fo], gain: hp.gain * scale }
        })
        .collect();
    Ok(QuantizedNetwork {
        levels,
        topology: topology.clone(),
        hidden_activation: if levels == 2 { Activation::Step } else { Activation::ClippedRelu },
        use_bias: hp.use_bias,
        layers,
    })
}

/// Trains with straight-through quantization. The last `validation_size`
/// training items are held out and the best epoch on them is returned.
pub fn train_qat(
    dataset: &Dataset,
    topology: &Topology,
    levels: u8,
    hp: &Hyperparams,
    seed: u64,
) -> Result<(QuantizedNetwork, Vec<EpochLog>)> {
    hp.validate()?;
    let mut net = init_network(topology, levels, hp, seed)?;
    let px = topology.sizes[0];
    if dataset.pixels() != px {
        return Err(Error::DimensionMismatch { expected: px, got: dataset.pixels() });
    }
    let classes = *topology.sizes.last().unwrap_or(&10);
    let n_val = hp.validation_size.min(dataset.len() / 2);
    let n_train = dataset.len() - n_val;
    let val = dataset.slice(n_train, dataset.len());

    let mut vel_w: Vec<Vec<f32>> = net.layers.iter().map(|l| alloc::vec![0.0; l.shadow.len()]).collect();
    let mut vel_b: Vec<Vec<f32>> = net.layers.iter().map(|l| alloc::vec![0.0; l.bias.len()]).collect();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut log = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f32, QuantizedNetwork)> = None;
    let mut xb = Vec::with_capacity(hp.batch_size * px);
    let mut yb = Vec::with_capacity(hp.batch_size);

    for epoch in 0..hp.epochs {
        let lr = hp.lr * libm::powf(hp.lr_decay_factor, (epoch / hp.lr_decay_every) as f32);
        order.shuffle(&mut stream(seed, Purpose::Shuffle, epoch as u64));
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(hp.batch_size) {
            xb.clear();
            yb.clear();
            for &i in idx {
                xb.extend_from_slice(dataset.image(i));
                yb.push(dataset.labels[i]);
            }
            let w: Vec<&[f32]> = net.layers.iter().map(|l| &l.quantized[..]).collect();
            let v: Vec<LayerView<'_, f32>> = net
                .layers
                .iter()
                .zip(&w)
                .map(|(l, w)| LayerView {
                    w,
                    b: if net.use_bias { Some(&l.bias[..]) } else { None },
                    gain: l.gain,
                    fan_in: l.fan_in,
                    fan_out: l.fan_out,
                })
                .collect();
            let pass = forward(&v, xb.clone(), idx.len(), net.hidden_activation);
            let (loss, dz) = softmax_xent(pass.acts.last().unwrap(), &yb, classes);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, log });
            }
            let g = backward(&v, &pass, dz, idx.len(), net.hidden_activation);
            drop(v);
            loss_sum += loss;
            batches += 1;
            let levels = net.levels;
            let use_bias = net.use_bias;
            for (li, l) in net.layers.iter_mut().enumerate() {
                for ((s, vel), &gr) in l.shadow.iter_mut().zip(&mut vel_w[li]).zip(&g.w[li]) {
                    *vel = hp.momentum * *vel + gr;
                    *s = (*s - lr * *vel).clamp(-1.0, 1.0);
                }
                for (q, &s) in l.quantized.iter_mut().zip(&l.shadow) {
                    *q = quantize(levels, s);
                }
                if use_bias {
                    for ((b, vel), &gr) in l.bias.iter_mut().zip(&mut vel_b[li]).zip(&g.b[li]) {
                        *vel = hp.momentum * *vel + gr;
                        *b -= lr * *vel;
                    }
                }
            }
        }
        let train_loss = (loss_sum / batches.max(1) as f64) as f32;
        if !train_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, log });
        }
        let val_accuracy = if n_val > 0 {
            let pred = predict_generic::<f32>(&net, &val.images, val.len(), 1000);
            accuracy_of(&pred, &val.labels) as f32
        } else {
            f32::NAN
        };
        log.push(EpochLog { epoch, lr, train_loss, val_accuracy });
        let better = match &best {
            None => true,
            Some((b, _)) => n_val == 0 || val_accuracy > *b,
        };
        if better {
            best = Some((val_accuracy, net.clone()));
        }
    }
    Ok((best.map(|b| b.1).unwrap_or(net), log))
}

/// Loss and gradients with respect to the quantized weights, in f64, with
/// quantization frozen at the network's current codebook values.
#[derive(Debug, Clone)]
pub struct FrozenGradient {
    pub loss: f64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

pub fn frozen_loss(net: &QuantizedNetwork, weights: &[Vec<f64>], images: &[f32], labels: &[u8]) -> f64 {
    let b: Vec<Vec<f64>> = net.layers.iter().map(|l| convert(&l.bias)).collect();
    let v = views(net, weights, &b);
    let pass = forward(&v, convert(images), labels.len(), net.hidden_activation);
    softmax_xent(pass.acts.last().unwrap(), labels, *net.topology.sizes.last().unwrap()).0
}

pub fn frozen_gradient(net: &QuantizedNetwork, images: &[f32], labels: &[u8]) -> FrozenGradient {
    let w: Vec<Vec<f64>> = net.layers.iter().map(|l| convert(&l.quantized)).collect();
    let b: Vec<Vec<f64>> = net.layers.iter().map(|l| convert(&l.bias)).collect();
    let v = views(net, &w, &b);
    let pass = forward(&v, convert(images), labels.len(), net.hidden_activation);
    let (loss, dz) = softmax_xent(pass.acts.last().unwrap(), labels, *net.topology.sizes.last().unwrap());
    let g = backward(&v, &pass, dz, labels.len(), net.hidden_activation);
    FrozenGradient { loss, weights: g.w, biases: g.b }
}

/// A network whose weight matrices are programmed onto crossbar tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedNetwork {
    pub levels: u8,
    pub hidden_activation: Activation,
    pub layers: Vec<MappedLayer>,
    pub stats: ProgrammingStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedLayer {
    pub matrix: TiledMatrix,
    pub gain: f64,
    /// Digital bias; empty when the network has none.
    pub bias: Vec<f64>,
}

/// Tile ids of layer `l` start at `l * LAYER_TILE_STRIDE`.
pub const LAYER_TILE_STRIDE: u64 = 1 << 20;

pub fn default_mapping(levels: u8, encoding: Encoding) -> WeightMapping {
    match (levels, encoding) {
        (2, Encoding::Differential) => WeightMapping::binary(),
        (_, Encoding::Differential) => WeightMapping::four_level(),
        (l, Encoding::OffsetReferenced) => WeightMapping::offset_referenced(l),
    }
}

impl MappedNetwork {
    pub fn program(
        net: &QuantizedNetwork,
        mapping: &WeightMapping,
        params: &DeviceParams,
        cfg: &ProgramConfig,
        opts: &MapOptions,
    ) -> Result<Self> {
        net.validate()?;
        if mapping.levels_per_device != net.levels {
            return Err(Error::InvalidParams("mapping levels differ from network levels".into()));
        }
        let mut stats = ProgrammingStats::default();
        let mut layers = Vec::with_capacity(net.layers.len());
        for (i, l) in net.layers.iter().enumerate() {
            let o = MapOptions { tile_id: opts.tile_id + i as u64 * LAYER_TILE_STRIDE, ..*opts };
            let (matrix, s) = TiledMatrix::program(&l.quantized, l.fan_in, l.fan_out, mapping, params, cfg, &o)?;
            stats.merge(&s);
            layers.push(MappedLayer {
                matrix,
                gain: l.gain as f64,
                bias: if net.use_bias { l.bias.iter().map(|&b| b as f64).collect() } else { Vec::new() },
            });
        }
        Ok(Self { levels: net.levels, hidden_activation: net.hidden_activation, layers, stats })
    }

    pub fn for_each_tile(&mut self, mut f: impl FnMut(&mut crate::crossbar::CrossbarTile) -> Result<()>) -> Result<()> {
        for l in &mut self.layers {
            l.matrix.for_each_tile(&mut f)?;
        }
        Ok(())
    }

    /// Predictions for `n` images; decisions are taken on column currents.
    pub fn predict(
        &self,
        images: &[f32],
        n: usize,
        noise: &ReadNoise,
        counts: &mut InjectorCounts,
    ) -> Result<Vec<u8>> {
        let Some(first) = self.layers.first() else {
            return Err(Error::InvalidParams("empty network".into()));
        };
        let px = first.matrix.rows;
        if images.len() < n * px {
            return Err(Error::DimensionMismatch { expected: n * px, got: images.len() });
        }
        let eff: Vec<Vec<Vec<f64>>> = self
            .layers
            .iter()
            .map(|l| l.matrix.tiles.iter().map(|t| t.effective_weights(counts)).collect())
            .collect::<Result<_>>()?;
        let classes = self.layers.last().map(|l| l.matrix.cols).unwrap_or(0);
        let chunk = 2000;
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let batch = end - start;
            let mut h: Vec<f64> = images[start * px..end * px].iter().map(|&v| v as f64).collect();
            for (li, l) in self.layers.iter().enumerate() {
                let mut z = l.matrix.matmul_precomputed(&eff[li], &h, batch, noise, start as u64, counts)?;
                let cols = l.matrix.cols;
                for row in z.chunks_exact_mut(cols) {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = l.gain * *v + l.bias.get(j).copied().unwrap_or(0.0);
                    }
                }
                if li + 1 < self.layers.len() {
                    for v in z.iter_mut() {
                        *v = self.hidden_activation.apply(*v);
                    }
                }
                h = z;
            }
            out.extend(argmax_rows(&h, classes));
            start = end;
        }
        Ok(out)
    }
}

pub enum Backend<'a> {
    Ideal,
    Crossbar { mapped: &'a MappedNetwork, noise: ReadNoise },
}

/// Test accuracy in percent.
pub fn infer(net: &QuantizedNetwork, dataset: &Dataset, backend: &Backend<'_>) -> Result<f64> {
    let pred = match backend {
        Backend::Ideal => predict_ideal(net, &dataset.images, dataset.len()),
        Backend::Crossbar { mapped, noise } => {
            let mut c = InjectorCounts::default();
            mapped.predict(&dataset.images, dataset.len(), noise, &mut c)?
        }
    };
    Ok(accuracy_of(&pred, &dataset.labels))
}

pub fn accuracy(pred: &[u8], labels: &[u8]) -> f64 {
    accuracy_of(pred, labels)
}
