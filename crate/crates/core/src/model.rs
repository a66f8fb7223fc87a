//! A small LLaMA-style decoder-only transformer.
//!
//! Blocks are `x ← x + Attn(RMSNorm(x)); x ← x + MLP(RMSNorm(x))` with causal
//! softmax attention, a SwiGLU MLP and learned absolute position embeddings.
//! Every linear weight is stored `output × input`, so a row of a weight matrix
//! holds the incoming connections of one output neuron.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::CalibrationSet;
use crate::tensor::{matmul_transposed, Matrix, Vector};

pub const RMS_NORM_EPS: f64 = 1e-6;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if u32::try_from(self.vocab_size).is_err() {
            return Err(Error::Config("vocab_size exceeds u32 token ids".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// The seven prunable linear maps of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubModule {
    Q,
    K,
    V,
    O,
    Gate,
    Up,
    Down,
}

impl SubModule {
    pub const ALL: [SubModule; 7] = [
        SubModule::Q,
        SubModule::K,
        SubModule::V,
        SubModule::O,
        SubModule::Gate,
        SubModule::Up,
        SubModule::Down,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubModule::Q => "q",
            SubModule::K => "k",
            SubModule::V => "v",
            SubModule::O => "o",
            SubModule::Gate => "gate",
            SubModule::Up => "up",
            SubModule::Down => "down",
        }
    }

    /// `(rows, cols)` = `(output, input)` dims.
    pub fn shape(self, config: &ModelConfig) -> (usize, usize) {
        match self {
            SubModule::Q | SubModule::K | SubModule::V | SubModule::O => {
                (config.d_model, config.d_model)
            }
            SubModule::Gate | SubModule::Up => (config.d_ff, config.d_model),
            SubModule::Down => (config.d_model, config.d_ff),
        }
    }
}

/// A prunable sub-module addressed by layer, written `layer.L.name`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubModuleId {
    pub layer: usize,
    pub kind: SubModule,
}

impl SubModuleId {
    pub fn new(layer: usize, kind: SubModule) -> Self {
        SubModuleId { layer, kind }
    }

    /// All prunable sub-modules in canonical order.
    pub fn all(n_layers: usize) -> impl Iterator<Item = SubModuleId> {
        (0..n_layers).flat_map(|l| SubModule::ALL.into_iter().map(move |k| SubModuleId::new(l, k)))
    }
}

impl fmt::Display for SubModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer.{}.{}", self.layer, self.kind.name())
    }
}

impl FromStr for SubModuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad sub-module name {s:?}"));
        let mut parts = s.split('.');
        if parts.next() != Some("layer") {
            return Err(bad());
        }
        let layer_str = parts.next().ok_or_else(bad)?;
        // reject "+1", "01" and friends so names round-trip exactly
        if layer_str.is_empty()
            || !layer_str.bytes().all(|b| b.is_ascii_digit())
            || (layer_str.len() > 1 && layer_str.starts_with('0'))
        {
            return Err(bad());
        }
        let layer = layer_str.parse().map_err(|_| bad())?;
        let name = parts.next().ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let kind = SubModule::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(bad)?;
        Ok(SubModuleId { layer, kind })
    }
}

impl Serialize for SubModuleId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SubModuleId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub o: Matrix,
    pub gate: Matrix,
    pub up: Matrix,
    pub down: Matrix,
    pub attn_norm: Vector,
    pub mlp_norm: Vector,
}

impl LayerWeights {
    pub fn get(&self, kind: SubModule) -> &Matrix {
        match kind {
            SubModule::Q => &self.q,
            SubModule::K => &self.k,
            SubModule::V => &self.v,
            SubModule::O => &self.o,
            SubModule::Gate => &self.gate,
            SubModule::Up => &self.up,
            SubModule::Down => &self.down,
        }
    }

    pub fn get_mut(&mut self, kind: SubModule) -> &mut Matrix {
        match kind {
            SubModule::Q => &mut self.q,
            SubModule::K => &mut self.k,
            SubModule::V => &mut self.v,
            SubModule::O => &mut self.o,
            SubModule::Gate => &mut self.gate,
            SubModule::Up => &mut self.up,
            SubModule::Down => &mut self.down,
        }
    }
}

/// Full parameter set. The output head reuses `token_embedding` transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vector,
}

impl ModelWeights {
    pub fn submodule(&self, id: SubModuleId) -> &Matrix {
        self.layers[id.layer].get(id.kind)
    }

    pub fn submodule_mut(&mut self, id: SubModuleId) -> &mut Matrix {
        self.layers[id.layer].get_mut(id.kind)
    }

    pub fn submodules(&self) -> impl Iterator<Item = (SubModuleId, &Matrix)> {
        SubModuleId::all(self.config.n_layers).map(move |id| (id, self.submodule(id)))
    }

    /// Checks every tensor against the config dims.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let expect = |what: String, m: &Matrix, shape: (usize, usize)| {
            if m.shape() != shape {
                Err(Error::Shape(format!("{what}: expected {shape:?}, got {:?}", m.shape())))
            } else {
                Ok(())
            }
        };
        expect("token_embedding".into(), &self.token_embedding, (c.vocab_size, c.d_model))?;
        expect("position_embedding".into(), &self.position_embedding, (c.max_seq_len, c.d_model))?;
        if self.layers.len() != c.n_layers {
            return Err(Error::Shape(format!(
                "expected {} layers, got {}",
                c.n_layers,
                self.layers.len()
            )));
        }
        for (id, m) in self.submodules() {
            expect(id.to_string(), m, id.kind.shape(c))?;
        }
        let norms = self
            .layers
            .iter()
            .flat_map(|l| [&l.attn_norm, &l.mlp_norm])
            .chain([&self.final_norm]);
        if norms.into_iter().any(|g| g.len() != c.d_model) {
            return Err(Error::Shape("norm gain length differs from d_model".into()));
        }
        Ok(())
    }
}

/// Draws all matrices i.i.d. from N(0, 0.02²); norm gains start at one.
///
/// Values are rounded to 32-bit precision so that a model survives a
/// write/read cycle through the weight file unchanged.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut draw = |(rows, cols): (usize, usize)| {
        let data = (0..rows * cols)
            .map(|_| normal.sample(&mut rng) as f32 as f64)
            .collect();
        Matrix::from_raw(rows, cols, data)
    };
    let token_embedding = draw((config.vocab_size, config.d_model));
    let position_embedding = draw((config.max_seq_len, config.d_model));
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights {
            q: draw(SubModule::Q.shape(&config)),
            k: draw(SubModule::K.shape(&config)),
            v: draw(SubModule::V.shape(&config)),
            o: draw(SubModule::O.shape(&config)),
            gate: draw(SubModule::Gate.shape(&config)),
            up: draw(SubModule::Up.shape(&config)),
            down: draw(SubModule::Down.shape(&config)),
            attn_norm: Vector::filled(config.d_model, 1.0),
            mlp_norm: Vector::filled(config.d_model, 1.0),
        })
        .collect();
    Ok(ModelWeights {
        config,
        token_embedding,
        position_embedding,
        layers,
        final_norm: Vector::filled(config.d_model, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `T × d_model`, after the final RMSNorm and before the output head.
    pub final_hidden: Matrix,
    /// Exact input block of each prunable sub-module, in canonical order.
    pub captured_inputs: Option<Vec<(SubModuleId, Matrix)>>,
}

pub fn rms_norm(x: &Matrix, gain: &Vector) -> Matrix {
    let d = x.cols();
    let mut out = Vec::with_capacity(x.data().len());
    for row in x.row_iter() {
        let mean_sq = row.iter().fold(0.0, |acc, v| acc + v * v) / d as f64;
        let inv = 1.0 / (mean_sq + RMS_NORM_EPS).sqrt();
        out.extend(row.iter().zip(gain.data()).map(|(v, g)| v * inv * g));
    }
    Matrix::from_raw(x.rows(), d, out)
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// In-place max-subtracted softmax.
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Attention probabilities of query position `t` for one head, over keys `0..=t`.
fn head_probs(q: &Matrix, k: &Matrix, cols: std::ops::Range<usize>, t: usize) -> Vec<f64> {
    let scale = 1.0 / (cols.len() as f64).sqrt();
    let qt = &q.row(t)[cols.clone()];
    let mut scores: Vec<f64> = (0..=t)
        .map(|j| {
            let kj = &k.row(j)[cols.clone()];
            qt.iter().zip(kj).fold(0.0, |acc, (a, b)| acc + a * b) * scale
        })
        .collect();
    softmax_in_place(&mut scores);
    scores
}

fn causal_attention(q: &Matrix, k: &Matrix, v: &Matrix, n_heads: usize) -> Matrix {
    let (t_len, d) = q.shape();
    let dh = d / n_heads;
    let mut out = vec![0.0; t_len * d];
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        for t in 0..t_len {
            let probs = head_probs(q, k, cols.clone(), t);
            let dst = &mut out[t * d + cols.start..t * d + cols.end];
            for (j, p) in probs.iter().enumerate() {
                for (o, vj) in dst.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += p * vj;
                }
            }
        }
    }
    Matrix::from_raw(t_len, d, out)
}

fn add_in_place(x: &mut Matrix, delta: &Matrix) {
    let sum: Vec<f64> = x.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect();
    *x = Matrix::from_raw(x.rows(), x.cols(), sum);
}

pub fn check_tokens(config: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence(0));
    }
    if tokens.len() > config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: config.max_seq_len,
        });
    }
    if let Some(&token) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            token,
            vocab: config.vocab_size,
        });
    }
    Ok(())
}

pub fn forward(weights: &ModelWeights, tokens: &[u32], capture: bool) -> Result<ForwardTrace> {
    let c = &weights.config;
    check_tokens(c, tokens)?;
    let t_len = tokens.len();
    let mut x = {
        let mut data = Vec::with_capacity(t_len * c.d_model);
        for (pos, &tok) in tokens.iter().enumerate() {
            let te = weights.token_embedding.row(tok as usize);
            let pe = weights.position_embedding.row(pos);
            data.extend(te.iter().zip(pe).map(|(a, b)| a + b));
        }
        Matrix::from_raw(t_len, c.d_model, data)
    };
    let mut captured = capture.then(|| Vec::with_capacity(7 * c.n_layers));

    for (l, layer) in weights.layers.iter().enumerate() {
        let h = rms_norm(&x, &layer.attn_norm);
        let q = matmul_transposed(&h, &layer.q)?;
        let k = matmul_transposed(&h, &layer.k)?;
        let v = matmul_transposed(&h, &layer.v)?;
        let attn = causal_attention(&q, &k, &v, c.n_heads);
        let attn_out = matmul_transposed(&attn, &layer.o)?;
        add_in_place(&mut x, &attn_out);

        let h2 = rms_norm(&x, &layer.mlp_norm);
        let gate = matmul_transposed(&h2, &layer.gate)?;
        let up = matmul_transposed(&h2, &layer.up)?;
        let act: Vec<f64> = gate
            .data()
            .iter()
            .zip(up.data())
            .map(|(g, u)| silu(*g) * u)
            .collect();
        let act = Matrix::new(t_len, c.d_ff, act)?;
        let mlp_out = matmul_transposed(&act, &layer.down)?;
        add_in_place(&mut x, &mlp_out);

        if let Some(cap) = captured.as_mut() {
            for kind in SubModule::ALL {
                let input = match kind {
                    SubModule::Q | SubModule::K | SubModule::V => h.clone(),
                    SubModule::O => attn.clone(),
                    SubModule::Gate | SubModule::Up => h2.clone(),
                    SubModule::Down => act.clone(),
                };
                cap.push((SubModuleId::new(l, kind), input));
            }
        }
    }

    let final_hidden = rms_norm(&x, &weights.final_norm);
    if final_hidden.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "final hidden state",
            index: final_hidden.data().iter().position(|v| !v.is_finite()).unwrap_or(0),
        });
    }
    Ok(ForwardTrace {
        final_hidden,
        captured_inputs: captured,
    })
}

/// Final hidden states of every calibration sequence, in input order.
pub fn final_hidden_batch(weights: &ModelWeights, calib: &CalibrationSet) -> Result<Vec<Matrix>> {
    if calib.sequences.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    calib
        .sequences
        .iter()
        .map(|seq| forward(weights, seq, false).map(|t| t.final_hidden))
        .collect()
}
