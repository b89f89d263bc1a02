//! Deep Averaging Network over sparse n-gram embeddings.
//!
//! An input's n-gram ids select rows of the embedding table, the rows are
//! pooled into one vector, and a stack of fully connected layers with ReLU
//! between them produces class logits. In pair mode each side is pooled with
//! the shared table and the head sees `[h1, h2, h1*h2, |h1-h2|]`.
//!
//! Weights are generic over [`Real`]: training runs in `f64`, inference can
//! use an `f32` copy from [`DanModel::cast`].

use std::fmt::Debug;
use std::path::Path;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::featurize::Example;
use crate::vocab::NgramVocab;

const MODEL_MAGIC: &[u8; 8] = b"SDMODEL\0";
pub const MODEL_VERSION: u32 = 1;

/// Floating point type usable for model weights.
pub trait Real: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {
    /// Byte width, also the dtype tag in model files.
    const WIDTH: u8;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const WIDTH: u8 = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Real for f64 {
    const WIDTH: u8 = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
    Sum,
    /// Additive attention with the mean-pooled vector as query.
    Attentive,
}

impl Pooling {
    fn tag(self) -> u8 {
        match self {
            Pooling::Mean => 0,
            Pooling::Max => 1,
            Pooling::Sum => 2,
            Pooling::Attentive => 3,
        }
    }

    fn from_tag(tag: u8, offset: usize) -> Result<Self> {
        Ok(match tag {
            0 => Pooling::Mean,
            1 => Pooling::Max,
            2 => Pooling::Sum,
            3 => Pooling::Attentive,
            t => return Err(Error::integrity(offset, format!("unknown pooling tag {t}"))),
        })
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            "sum" => Ok(Pooling::Sum),
            "attentive" => Ok(Pooling::Attentive),
            other => Err(Error::config(format!("unknown pooling mode {other:?}"))),
        }
    }
}

/// Architecture hyperparameters. The vocabulary size comes from the vocab.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Widths of the hidden layers, in order. `[1000]` is the classic two
    /// layer head; `[1000, 256, 64]` a deeper one.
    pub hidden: Vec<usize>,
    pub n_classes: usize,
    pub pooling: Pooling,
    pub pair_mode: bool,
    /// Attention size, used only with [`Pooling::Attentive`].
    pub attention_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 1000,
            hidden: vec![1000],
            n_classes: 2,
            pooling: Pooling::Mean,
            pair_mode: false,
            attention_dim: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: u64,
    pub sparse: u64,
    pub dense: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if self.pooling == Pooling::Attentive && self.attention_dim == 0 {
            return Err(Error::config("attentive pooling needs attention_dim > 0"));
        }
        Ok(())
    }

    /// Width of the vector entering the first dense layer.
    pub fn head_input_dim(&self) -> usize {
        if self.pair_mode {
            4 * self.embed_dim
        } else {
            self.embed_dim
        }
    }

    /// `(in, out)` of each dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.head_input_dim();
        for &w in self.hidden.iter().chain(std::iter::once(&self.n_classes)) {
            dims.push((prev, w));
            prev = w;
        }
        dims
    }

    pub fn param_count(&self, vocab_size: usize) -> ParamCount {
        let sparse = vocab_size as u64 * self.embed_dim as u64;
        let mut dense: u64 = self
            .layer_dims()
            .iter()
            .map(|&(i, o)| (i * o + o) as u64)
            .sum();
        if self.pooling == Pooling::Attentive {
            dense += (2 * self.embed_dim * self.attention_dim + self.attention_dim) as u64;
        }
        ParamCount {
            total: sparse + dense,
            sparse,
            dense,
        }
    }
}

/// Fully connected layer; `w` is row-major `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            w: vec![T::zero(); in_dim * out_dim],
            b: vec![T::zero(); out_dim],
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut out = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let row = &self.w[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + xi * w;
            }
        }
        out
    }
}

/// Attention parameters; `wg` and `wh` are row-major `embed_dim x attention_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveHead<T> {
    pub dim: usize,
    pub wg: Vec<T>,
    pub wh: Vec<T>,
    pub v: Vec<T>,
}

/// Intermediate values of pooling one side, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolTrace<T> {
    pub output: Vec<T>,
    /// Mean of the rows; the attention query.
    pub mean: Vec<T>,
    /// Attention weights, one per id (attentive pooling only).
    pub attention: Vec<T>,
    /// `tanh(Wg e_i + Wh mean)`, row-major `ids x attention_dim`.
    pub attention_hidden: Vec<T>,
    /// Per dimension, the position in the id list holding the maximum
    /// (max pooling only).
    pub argmax: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// One entry per pooled side.
    pub sides: Vec<PoolTrace<T>>,
    /// Head input: `h`, or the concatenate-compare vector in pair mode.
    pub pooled: Vec<T>,
    /// Pre-activation output of each dense layer; the last one is the logits.
    pub pre_activations: Vec<Vec<T>>,
    /// Post-ReLU output of each hidden layer.
    pub activations: Vec<Vec<T>>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

/// Borrowed model input.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Single(&'a [u32]),
    Pair(&'a [u32], &'a [u32]),
}

impl Example {
    pub fn input(&self) -> Input<'_> {
        match self {
            Example::Single(e) => Input::Single(&e.ids),
            Example::Pair(p) => Input::Pair(&p.left.ids, &p.right.ids),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DanModel<T = f64> {
    config: ModelConfig,
    vocab: Arc<NgramVocab>,
    /// Row-major `|V| x embed_dim`.
    pub embedding: Vec<T>,
    pub layers: Vec<Dense<T>>,
    pub attention: Option<AttentiveHead<T>>,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..=bound)).unwrap())
        .collect()
}

impl<T: Real> DanModel<T> {
    /// Randomly initialized model. Embeddings are uniform in
    /// `±0.1/sqrt(embed_dim)`, dense and attention weights uniform in
    /// `±1/sqrt(fan_in)`, biases zero.
    pub fn new(vocab: Arc<NgramVocab>, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let de = config.embed_dim;
        let embedding = uniform(&mut rng, vocab.len() * de, 0.1 / (de as f64).sqrt());
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Dense {
                in_dim: i,
                out_dim: o,
                w: uniform(&mut rng, i * o, 1.0 / (i as f64).sqrt()),
                b: vec![T::zero(); o],
            })
            .collect();
        let attention = (config.pooling == Pooling::Attentive).then(|| {
            let da = config.attention_dim;
            let bound = 1.0 / (de as f64).sqrt();
            AttentiveHead {
                dim: da,
                wg: uniform(&mut rng, de * da, bound),
                wh: uniform(&mut rng, de * da, bound),
                v: uniform(&mut rng, da, 1.0 / (da as f64).sqrt()),
            }
        });
        Ok(DanModel {
            config,
            vocab,
            embedding,
            layers,
            attention,
        })
    }

    /// All-zero model.
    pub fn zeros(vocab: Arc<NgramVocab>, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let de = config.embed_dim;
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Dense::zeros(i, o))
            .collect();
        let attention = (config.pooling == Pooling::Attentive).then(|| AttentiveHead {
            dim: config.attention_dim,
            wg: vec![T::zero(); de * config.attention_dim],
            wh: vec![T::zero(); de * config.attention_dim],
            v: vec![T::zero(); config.attention_dim],
        });
        Ok(DanModel {
            embedding: vec![T::zero(); vocab.len() * de],
            config,
            vocab,
            layers,
            attention,
        })
    }

    /// Assembles a model from parts, checking every dimension.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Arc<NgramVocab>,
        embedding: Vec<T>,
        layers: Vec<Dense<T>>,
        attention: Option<AttentiveHead<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let model = DanModel {
            config,
            vocab,
            embedding,
            layers,
            attention,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        if self.embedding.len() != self.vocab.len() * c.embed_dim {
            return Err(Error::structural(format!(
                "embedding has {} values, expected {} x {}",
                self.embedding.len(),
                self.vocab.len(),
                c.embed_dim
            )));
        }
        let dims = c.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(Error::structural("layer count does not match config"));
        }
        for (k, (layer, (i, o))) in self.layers.iter().zip(dims).enumerate() {
            if layer.in_dim != i || layer.out_dim != o || layer.w.len() != i * o || layer.b.len() != o {
                return Err(Error::structural(format!("layer {k} is not {i} x {o}")));
            }
        }
        match (&self.attention, c.pooling) {
            (Some(a), Pooling::Attentive) => {
                let n = c.embed_dim * a.dim;
                if a.dim != c.attention_dim || a.wg.len() != n || a.wh.len() != n || a.v.len() != a.dim {
                    return Err(Error::structural("attention weights do not match config"));
                }
            }
            (None, Pooling::Attentive) => return Err(Error::structural("attentive pooling without attention weights")),
            (Some(_), _) => return Err(Error::structural("attention weights on a non-attentive model")),
            (None, _) => {}
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &NgramVocab {
        &self.vocab
    }

    pub fn vocab_arc(&self) -> &Arc<NgramVocab> {
        &self.vocab
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn param_count(&self) -> ParamCount {
        self.config.param_count(self.vocab.len())
    }

    #[inline]
    pub fn row(&self, id: u32) -> &[T] {
        let de = self.config.embed_dim;
        &self.embedding[id as usize * de..(id as usize + 1) * de]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [T] {
        let de = self.config.embed_dim;
        &mut self.embedding[id as usize * de..(id as usize + 1) * de]
    }

    /// Dense parameter tensors in a fixed order: each layer's `w` then `b`,
    /// then `wg`, `wh`, `v` when attentive.
    pub fn dense_params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        if let Some(a) = &self.attention {
            out.push(&a.wg);
            out.push(&a.wh);
            out.push(&a.v);
        }
        out
    }

    pub fn dense_params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        if let Some(a) = &mut self.attention {
            out.push(&mut a.wg);
            out.push(&mut a.wh);
            out.push(&mut a.v);
        }
        out
    }

    /// Names matching [`DanModel::dense_params`]: `w1, b1, w2, b2, ..., wg, wh, v`.
    pub fn dense_param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in 1..=self.layers.len() {
            out.push(format!("w{k}"));
            out.push(format!("b{k}"));
        }
        if self.attention.is_some() {
            out.extend(["wg".to_string(), "wh".to_string(), "v".to_string()]);
        }
        out
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let n = self.vocab.len();
        match ids.iter().find(|&&id| id as usize >= n) {
            Some(id) => Err(Error::structural(format!(
                "n-gram id {id} out of range for a vocabulary of {n}"
            ))),
            None => Ok(()),
        }
    }

    /// Pools the embedding rows of `ids`. Empty input pools to zero.
    pub fn pool(&self, ids: &[u32]) -> Result<PoolTrace<T>> {
        self.check_ids(ids)?;
        Ok(self.pool_unchecked(ids))
    }

    fn pool_unchecked(&self, ids: &[u32]) -> PoolTrace<T> {
        let de = self.config.embed_dim;
        let mut trace = PoolTrace {
            output: vec![T::zero(); de],
            mean: Vec::new(),
            attention: Vec::new(),
            attention_hidden: Vec::new(),
            argmax: Vec::new(),
        };
        if ids.is_empty() {
            if self.config.pooling == Pooling::Attentive {
                trace.mean = vec![T::zero(); de];
            }
            return trace;
        }
        let k = T::from_usize(ids.len()).unwrap();
        match self.config.pooling {
            Pooling::Sum | Pooling::Mean => {
                for &id in ids {
                    for (o, &e) in trace.output.iter_mut().zip(self.row(id)) {
                        *o = *o + e;
                    }
                }
                if self.config.pooling == Pooling::Mean {
                    trace.output.iter_mut().for_each(|o| *o = *o / k);
                }
            }
            Pooling::Max => {
                trace.output.copy_from_slice(self.row(ids[0]));
                trace.argmax = vec![0; de];
                for (pos, &id) in ids.iter().enumerate().skip(1) {
                    for (d, &e) in self.row(id).iter().enumerate() {
                        if e > trace.output[d] {
                            trace.output[d] = e;
                            trace.argmax[d] = pos;
                        }
                    }
                }
            }
            Pooling::Attentive => {
                let att = self.attention.as_ref().expect("checked at construction");
                let da = att.dim;
                let mut mean = vec![T::zero(); de];
                for &id in ids {
                    for (m, &e) in mean.iter_mut().zip(self.row(id)) {
                        *m = *m + e;
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / k);
                let query = mat_t_vec(&att.wh, &mean, da);
                let mut hidden = Vec::with_capacity(ids.len() * da);
                let mut scores = Vec::with_capacity(ids.len());
                for &id in ids {
                    let key = mat_t_vec(&att.wg, self.row(id), da);
                    let mut u = T::zero();
                    for a in 0..da {
                        let t = (key[a] + query[a]).tanh();
                        hidden.push(t);
                        u = u + att.v[a] * t;
                    }
                    scores.push(u);
                }
                let weights = softmax(&scores);
                for (&id, &w) in ids.iter().zip(&weights) {
                    for (o, &e) in trace.output.iter_mut().zip(self.row(id)) {
                        *o = *o + w * e;
                    }
                }
                trace.mean = mean;
                trace.attention = weights;
                trace.attention_hidden = hidden;
            }
        }
        trace
    }

    pub fn forward(&self, input: Input<'_>) -> Result<ForwardTrace<T>> {
        let sides = match (input, self.config.pair_mode) {
            (Input::Single(ids), false) => {
                self.check_ids(ids)?;
                vec![self.pool_unchecked(ids)]
            }
            (Input::Pair(l, r), true) => {
                self.check_ids(l)?;
                self.check_ids(r)?;
                vec![self.pool_unchecked(l), self.pool_unchecked(r)]
            }
            (Input::Single(_), true) => return Err(Error::structural("pair model given a single input")),
            (Input::Pair(..), false) => return Err(Error::structural("single-sentence model given a pair")),
        };
        let pooled = if sides.len() == 2 {
            concat_compare(&sides[0].output, &sides[1].output)
        } else {
            sides[0].output.clone()
        };
        let n_layers = self.layers.len();
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut activations = Vec::with_capacity(n_layers.saturating_sub(1));
        for (k, layer) in self.layers.iter().enumerate() {
            let x = if k == 0 { &pooled } else { &activations[k - 1] };
            let z = layer.forward(x);
            if k + 1 < n_layers {
                activations.push(z.iter().map(|&v| v.max(T::zero())).collect());
            }
            pre_activations.push(z);
        }
        let logits = pre_activations.last().expect("at least one layer").clone();
        let probs = softmax(&logits);
        Ok(ForwardTrace {
            sides,
            pooled,
            pre_activations,
            activations,
            logits,
            probs,
        })
    }

    pub fn predict_proba(&self, input: Input<'_>) -> Result<Vec<T>> {
        Ok(self.forward(input)?.probs)
    }

    /// Converts every weight to another float width.
    pub fn cast<U: Real>(&self) -> DanModel<U> {
        let conv = |xs: &[T]| -> Vec<U> { xs.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect() };
        DanModel {
            config: self.config.clone(),
            vocab: Arc::clone(&self.vocab),
            embedding: conv(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    w: conv(&l.w),
                    b: conv(&l.b),
                })
                .collect(),
            attention: self.attention.as_ref().map(|a| AttentiveHead {
                dim: a.dim,
                wg: conv(&a.wg),
                wh: conv(&a.wh),
                v: conv(&a.v),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut enc = Encoder::with_header(MODEL_MAGIC, MODEL_VERSION);
        enc.u8(T::WIDTH);
        enc.u32(c.n_classes as u32);
        enc.u32(c.embed_dim as u32);
        enc.u32(c.hidden.len() as u32);
        for &h in &c.hidden {
            enc.u32(h as u32);
        }
        enc.u8(c.pooling.tag());
        enc.u8(c.pair_mode as u8);
        enc.u32(c.attention_dim as u32);
        self.vocab.encode_body(&mut enc);
        let mut blob = |xs: &[T]| {
            enc.u64(xs.len() as u64);
            enc.buf.reserve(xs.len() * T::WIDTH as usize);
            for &x in xs {
                x.write_le(&mut enc.buf);
            }
        };
        blob(&self.embedding);
        for p in self.dense_params() {
            blob(p);
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::open(bytes, MODEL_MAGIC, "model", MODEL_VERSION)?;
        let at = dec.offset();
        let width = dec.u8()?;
        if width != T::WIDTH {
            return Err(Error::integrity(
                at,
                format!("file stores {width}-byte floats, requested {}-byte", T::WIDTH),
            ));
        }
        let n_classes = dec.u32()? as usize;
        let embed_dim = dec.u32()? as usize;
        let n_hidden = dec.u32()? as usize;
        let hidden = (0..n_hidden).map(|_| Ok(dec.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let at = dec.offset();
        let pooling = Pooling::from_tag(dec.u8()?, at)?;
        let pair_mode = dec.u8()? != 0;
        let attention_dim = dec.u32()? as usize;
        let config = ModelConfig {
            embed_dim,
            hidden,
            n_classes,
            pooling,
            pair_mode,
            attention_dim,
        };
        config.validate().map_err(|e| Error::integrity(at, e.to_string()))?;
        let vocab = Arc::new(NgramVocab::decode_body(&mut dec)?);

        let mut blob = |expected: usize| -> Result<Vec<T>> {
            let at = dec.offset();
            let n = dec.u64()? as usize;
            if n != expected {
                return Err(Error::integrity(at, format!("tensor holds {n} values, expected {expected}")));
            }
            let w = T::WIDTH as usize;
            let raw = dec.take(n.checked_mul(w).ok_or_else(|| Error::integrity(at, "tensor size overflow"))?)?;
            Ok(raw.chunks_exact(w).map(T::read_le).collect())
        };
        let embedding = blob(vocab.len() * embed_dim)?;
        let mut layers = Vec::new();
        for (i, o) in config.layer_dims() {
            let w = blob(i * o)?;
            let b = blob(o)?;
            layers.push(Dense { in_dim: i, out_dim: o, w, b });
        }
        let attention = if pooling == Pooling::Attentive {
            let n = embed_dim * attention_dim;
            Some(AttentiveHead {
                dim: attention_dim,
                wg: blob(n)?,
                wh: blob(n)?,
                v: blob(attention_dim)?,
            })
        } else {
            None
        };
        dec.finish()?;
        DanModel::from_parts(config, vocab, embedding, layers, attention)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        DanModel::from_bytes(&std::fs::read(path)?)
    }
}

/// Stored float width of a model file, read from its header.
pub fn model_file_width(path: impl AsRef<Path>) -> Result<u8> {
    let bytes = std::fs::read(path)?;
    let mut dec = Decoder::open(&bytes, MODEL_MAGIC, "model", MODEL_VERSION)?;
    dec.u8()
}

/// `M^T x` for row-major `M` of shape `x.len() x cols`.
fn mat_t_vec<T: Real>(m: &[T], x: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for (r, &xr) in x.iter().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o = *o + xr * w;
        }
    }
    out
}

/// `[a, b, a*b, |a-b|]`.
pub fn concat_compare<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(4 * a.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out.extend(a.iter().zip(b).map(|(&x, &y)| x * y));
    out.extend(a.iter().zip(b).map(|(&x, &y)| (x - y).abs()));
    out
}

/// Softmax with max subtraction.
pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; the first one on ties.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
