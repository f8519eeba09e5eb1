//! DeepSets fitness surrogate `F_Φ`.
//!
//! An action is read as the collection of sets `S_d = {n : d_n = d}`. Each
//! entity is encoded from its normalized train frequency (separate user and
//! item encoders), each set by the mean of its members' codes concatenated
//! with `d / d_max`, the action by the mean over all `d_max` set codes, and a
//! decoder maps that to a scalar fitness estimate.
//!
//! Layer shapes: user/item encoder `1 → 16 → 16`, size encoder
//! `17 → 64 → 64`, decoder `64 → 64 → 1`, LeakyReLU(0.01) on hidden layers.
//!
//! Set members are summed in a canonical order (users before items, then
//! ascending frequency, then ascending id). Entities that share field and
//! frequency have bit-identical codes, so predictions are bit-identical under
//! any relabeling that preserves each entity's (field, frequency, size).

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{BetError, Result};
use crate::sampler::SizeAction;
use crate::seed::Rng;

pub const ENTITY_DIM: usize = 16;
pub const SET_DIM: usize = 64;
pub const DECODER_HIDDEN: usize = 64;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_PREDICTOR_LR: f64 = 1e-3;

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Fully connected layer, weights row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn glorot(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in &mut layer.weights {
            *w = (2.0 * rng.random::<f64>() - 1.0) * bound;
        }
        layer
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients into `grad`; returns `∂/∂x`.
    fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut d_in = vec![0.0; self.in_dim];
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                d_in[i] += g * row[i];
            }
        }
        d_in
    }
}

/// Two dense layers with a LeakyReLU between them; linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Dense,
    pub output: Dense,
}

/// Intermediates of one forward pass kept for backprop.
struct MlpTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl Mlp {
    fn glorot(dims: [usize; 3], rng: &mut Rng) -> Self {
        Self {
            hidden: Dense::glorot(dims[0], dims[1], rng),
            output: Dense::glorot(dims[1], dims[2], rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            hidden: Dense::zeros(self.hidden.in_dim, self.hidden.out_dim),
            output: Dense::zeros(self.output.in_dim, self.output.out_dim),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.traced(x).1
    }

    fn traced(&self, x: &[f64]) -> (MlpTrace, Vec<f64>) {
        let pre = self.hidden.forward(x);
        let act: Vec<f64> = pre.iter().map(|&p| leaky(p)).collect();
        let out = self.output.forward(&act);
        (
            MlpTrace {
                input: x.to_vec(),
                pre,
                act,
            },
            out,
        )
    }

    fn backward(&self, trace: &MlpTrace, d_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let d_act = self.output.backward(&trace.act, d_out, &mut grad.output);
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&trace.pre)
            .map(|(g, &p)| g * leaky_grad(p))
            .collect();
        self.hidden.backward(&trace.input, &d_pre, &mut grad.hidden)
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [
            &self.hidden.weights,
            &self.hidden.bias,
            &self.output.weights,
            &self.output.bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.hidden.weights,
            &mut self.hidden.bias,
            &mut self.output.weights,
            &mut self.output.bias,
        ]
    }
}

/// Anything that can score and embed actions; the search loop is generic
/// over this so selection strategies can be tested with stubs.
pub trait Surrogate {
    fn predict(&self, action: &SizeAction) -> Result<f64>;
    fn embed(&self, action: &SizeAction) -> Result<Vec<f64>>;
}

/// Parameters `Φ` plus the frequency context the encoders read.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessPredictor {
    pub user_encoder: Mlp,
    pub item_encoder: Mlp,
    pub size_encoder: Mlp,
    pub decoder: Mlp,
    d_max: usize,
    max_user_freq: f64,
    max_item_freq: f64,
    /// Normalized frequency of each entity row (users, then items).
    inputs: Vec<f64>,
    num_users: usize,
    /// Entity rows in summation order.
    canonical: Vec<usize>,
    /// Per entity, the index of its (field, frequency) group.
    group_of: Vec<usize>,
    /// Per group: (is_item, normalized input).
    groups: Vec<(bool, f64)>,
}

/// Gradient of the loss with respect to every parameter of `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGradient {
    pub user_encoder: Mlp,
    pub item_encoder: Mlp,
    pub size_encoder: Mlp,
    pub decoder: Mlp,
}

impl PredictorGradient {
    /// All gradient entries in parameter order.
    pub fn flat(&self) -> Vec<f64> {
        [&self.user_encoder, &self.item_encoder, &self.size_encoder, &self.decoder]
            .iter()
            .flat_map(|m| m.tensors().into_iter().flatten().copied().collect::<Vec<_>>())
            .collect()
    }
}

struct ForwardTrace {
    sets: Vec<Vec<usize>>,
    size_traces: Vec<MlpTrace>,
    h: Vec<f64>,
    decoder: MlpTrace,
    out: f64,
}

impl FitnessPredictor {
    /// Glorot-uniform weights, zero biases.
    pub fn new(user_freq: &[u32], item_freq: &[u32], d_max: usize, rng: &mut Rng) -> Result<Self> {
        let user_encoder = Mlp::glorot([1, ENTITY_DIM, ENTITY_DIM], rng);
        let item_encoder = Mlp::glorot([1, ENTITY_DIM, ENTITY_DIM], rng);
        let size_encoder = Mlp::glorot([ENTITY_DIM + 1, SET_DIM, SET_DIM], rng);
        let decoder = Mlp::glorot([SET_DIM, DECODER_HIDDEN, 1], rng);
        Self::with_networks(
            user_freq,
            item_freq,
            d_max,
            [user_encoder, item_encoder, size_encoder, decoder],
        )
    }

    fn with_networks(
        user_freq: &[u32],
        item_freq: &[u32],
        d_max: usize,
        nets: [Mlp; 4],
    ) -> Result<Self> {
        if d_max == 0 {
            return Err(BetError::InvalidArgument("d_max must be >= 1".to_owned()));
        }
        let max_u = user_freq.iter().copied().max().unwrap_or(0);
        let max_v = item_freq.iter().copied().max().unwrap_or(0);
        if max_u == 0 || max_v == 0 {
            return Err(BetError::InvalidArgument(
                "maximum user and item frequency must be positive".to_owned(),
            ));
        }
        let (max_u, max_v) = (max_u as f64, max_v as f64);
        let num_users = user_freq.len();
        let inputs: Vec<f64> = user_freq
            .iter()
            .map(|&f| f as f64 / max_u)
            .chain(item_freq.iter().map(|&f| f as f64 / max_v))
            .collect();
        let freq = |n: usize| {
            if n < num_users {
                user_freq[n]
            } else {
                item_freq[n - num_users]
            }
        };
        let mut canonical: Vec<usize> = (0..inputs.len()).collect();
        canonical.sort_by_key(|&n| (n >= num_users, freq(n), n));

        let mut groups: Vec<(bool, f64)> = Vec::new();
        let mut group_of = vec![0usize; inputs.len()];
        let mut last: Option<(bool, u32)> = None;
        for &n in &canonical {
            let key = (n >= num_users, freq(n));
            if last != Some(key) {
                groups.push((key.0, inputs[n]));
                last = Some(key);
            }
            group_of[n] = groups.len() - 1;
        }

        let [user_encoder, item_encoder, size_encoder, decoder] = nets;
        Ok(Self {
            user_encoder,
            item_encoder,
            size_encoder,
            decoder,
            d_max,
            max_user_freq: max_u,
            max_item_freq: max_v,
            inputs,
            num_users,
            canonical,
            group_of,
            groups,
        })
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn num_entities(&self) -> usize {
        self.inputs.len()
    }

    /// Normalized frequency fed to the encoder of entity row `n`.
    pub fn entity_input(&self, n: usize) -> f64 {
        self.inputs[n]
    }

    fn encoder(&self, is_item: bool) -> &Mlp {
        if is_item {
            &self.item_encoder
        } else {
            &self.user_encoder
        }
    }

    /// `q_n`: the 16-dim code of entity row `n`.
    pub fn encode_entity(&self, n: usize) -> Result<Vec<f64>> {
        if n >= self.inputs.len() {
            return Err(BetError::OutOfBounds { index: n, len: self.inputs.len() });
        }
        Ok(self.encoder(n >= self.num_users).forward(&[self.inputs[n]]))
    }

    fn group_codes(&self) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|&(is_item, x)| self.encoder(is_item).forward(&[x]))
            .collect()
    }

    fn set_input(&self, members: &[usize], codes: &[Vec<f64>], d: usize) -> Vec<f64> {
        let mut input = vec![0.0; ENTITY_DIM + 1];
        if !members.is_empty() {
            for &n in members {
                for (acc, q) in input.iter_mut().zip(&codes[self.group_of[n]]) {
                    *acc += q;
                }
            }
            let inv = members.len() as f64;
            input[..ENTITY_DIM].iter_mut().for_each(|x| *x /= inv);
        }
        input[ENTITY_DIM] = d as f64 / self.d_max as f64;
        input
    }

    /// `s_d`: the 64-dim code of a set of entity rows holding size `d`.
    /// An empty set contributes a zero mean.
    pub fn encode_set(&self, members: &[usize], d: usize) -> Result<Vec<f64>> {
        if d == 0 || d > self.d_max {
            return Err(BetError::InvalidArgument(format!(
                "set size {d} outside [1, {}]",
                self.d_max
            )));
        }
        if let Some(&bad) = members.iter().find(|&&n| n >= self.inputs.len()) {
            return Err(BetError::OutOfBounds { index: bad, len: self.inputs.len() });
        }
        let mut sorted = members.to_vec();
        sorted.sort_by_key(|&n| (self.group_of[n], n));
        sorted.dedup();
        let codes = self.group_codes();
        Ok(self.size_encoder.forward(&self.set_input(&sorted, &codes, d)))
    }

    fn check_action(&self, action: &SizeAction) -> Result<()> {
        if action.num_entities() != self.inputs.len() || action.num_users != self.num_users {
            return Err(BetError::InvalidArgument(format!(
                "action covers {} entities ({} users), predictor expects {} ({} users)",
                action.num_entities(),
                action.num_users,
                self.inputs.len(),
                self.num_users
            )));
        }
        if let Some((row, &size)) = action
            .sizes()
            .iter()
            .enumerate()
            .find(|(_, &s)| s == 0 || s as usize > self.d_max)
        {
            return Err(BetError::SizeOutOfRange { row, size, d_max: self.d_max as u32 });
        }
        Ok(())
    }

    fn forward_trace(&self, action: &SizeAction) -> Result<ForwardTrace> {
        self.check_action(action)?;
        let codes = self.group_codes();
        let mut sets = vec![Vec::new(); self.d_max];
        for &n in &self.canonical {
            sets[action.sizes()[n] as usize - 1].push(n);
        }
        let mut h = vec![0.0; SET_DIM];
        let mut size_traces = Vec::with_capacity(self.d_max);
        for (i, members) in sets.iter().enumerate() {
            let (trace, s) = self.size_encoder.traced(&self.set_input(members, &codes, i + 1));
            for (acc, x) in h.iter_mut().zip(&s) {
                *acc += x;
            }
            size_traces.push(trace);
        }
        h.iter_mut().for_each(|x| *x /= self.d_max as f64);
        let (decoder, out) = self.decoder.traced(&h);
        let out = out[0];
        if !out.is_finite() || h.iter().any(|x| !x.is_finite()) {
            return Err(BetError::Numeric("non-finite predictor activation".to_owned()));
        }
        Ok(ForwardTrace { sets, size_traces, h, decoder, out })
    }

    /// `h_a`: mean of the `d_max` set codes.
    pub fn embed_action(&self, action: &SizeAction) -> Result<Vec<f64>> {
        Ok(self.forward_trace(action)?.h)
    }

    /// `r̂_a`.
    pub fn predict_fitness(&self, action: &SizeAction) -> Result<f64> {
        Ok(self.forward_trace(action)?.out)
    }

    /// Squared error `(target − r̂_a)²` and its gradient with respect to `Φ`.
    pub fn loss_and_gradient(&self, action: &SizeAction, target: f64) -> Result<(f64, PredictorGradient)> {
        let trace = self.forward_trace(action)?;
        let diff = trace.out - target;
        let loss = diff * diff;
        let mut grad = PredictorGradient {
            user_encoder: self.user_encoder.zeros_like(),
            item_encoder: self.item_encoder.zeros_like(),
            size_encoder: self.size_encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        };

        let d_h = self.decoder.backward(&trace.decoder, &[2.0 * diff], &mut grad.decoder);
        let d_s: Vec<f64> = d_h.iter().map(|g| g / self.d_max as f64).collect();
        let mut d_group = vec![vec![0.0; ENTITY_DIM]; self.groups.len()];
        for (members, st) in trace.sets.iter().zip(&trace.size_traces) {
            let d_in = self.size_encoder.backward(st, &d_s, &mut grad.size_encoder);
            if members.is_empty() {
                continue;
            }
            let inv = 1.0 / members.len() as f64;
            for &n in members {
                for (acc, g) in d_group[self.group_of[n]].iter_mut().zip(&d_in[..ENTITY_DIM]) {
                    *acc += g * inv;
                }
            }
        }
        for (&(is_item, x), d_q) in self.groups.iter().zip(&d_group) {
            let (net, g) = if is_item {
                (&self.item_encoder, &mut grad.item_encoder)
            } else {
                (&self.user_encoder, &mut grad.user_encoder)
            };
            let (t, _) = net.traced(&[x]);
            net.backward(&t, d_q, g);
        }
        Ok((loss, grad))
    }

    /// All parameters in a fixed order (user encoder, item encoder, size
    /// encoder, decoder; each hidden weights, hidden bias, output weights,
    /// output bias).
    pub fn params(&self) -> Vec<f64> {
        [&self.user_encoder, &self.item_encoder, &self.size_encoder, &self.decoder]
            .iter()
            .flat_map(|m| m.tensors().into_iter().flatten().copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.params().len();
        if params.len() != expected {
            return Err(BetError::InvalidArgument(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        let mut it = params.iter();
        for net in [
            &mut self.user_encoder,
            &mut self.item_encoder,
            &mut self.size_encoder,
            &mut self.decoder,
        ] {
            for t in net.tensors_mut() {
                for x in t.iter_mut() {
                    *x = *it.next().unwrap();
                }
            }
        }
        Ok(())
    }

    /// `Φ ← Φ − lr·∇`.
    pub fn apply_gradient(&mut self, grad: &PredictorGradient, lr: f64) {
        let pairs = [
            (&mut self.user_encoder, &grad.user_encoder),
            (&mut self.item_encoder, &grad.item_encoder),
            (&mut self.size_encoder, &grad.size_encoder),
            (&mut self.decoder, &grad.decoder),
        ];
        for (net, g) in pairs {
            for (t, gt) in net.tensors_mut().into_iter().zip(g.tensors()) {
                for (x, d) in t.iter_mut().zip(gt) {
                    *x -= lr * d;
                }
            }
        }
    }

    const MAGIC: &'static [u8; 4] = b"BETP";
    const TAGS: [&'static [u8; 4]; 4] = [b"RHOU", b"RHOV", b"MU\0\0", b"PI\0\0"];

    /// Binary container: magic `BETP`, version, `d_max`, section count, the
    /// two frequency maxima, then one tagged section per network.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.d_max as u32).to_le_bytes());
        buf.extend_from_slice(&4u32.to_le_bytes());
        buf.extend_from_slice(&self.max_user_freq.to_le_bytes());
        buf.extend_from_slice(&self.max_item_freq.to_le_bytes());
        let nets = [&self.user_encoder, &self.item_encoder, &self.size_encoder, &self.decoder];
        for (tag, net) in Self::TAGS.iter().zip(nets) {
            buf.extend_from_slice(*tag);
            buf.extend_from_slice(&2u32.to_le_bytes());
            for layer in [&net.hidden, &net.output] {
                buf.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
                buf.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
                for x in layer.weights.iter().chain(&layer.bias) {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        buf
    }

    /// Restores `Φ` saved by [`Self::to_bytes`] against the dataset's
    /// frequencies; the stored maxima must match.
    pub fn from_bytes(bytes: &[u8], user_freq: &[u32], item_freq: &[u32]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != Self::MAGIC {
            return Err(BetError::Format("bad magic, expected BETP".to_owned()));
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(BetError::Format(format!("unsupported predictor version {version}")));
        }
        let d_max = r.u32()? as usize;
        if r.u32()? != 4 {
            return Err(BetError::Format("expected 4 sections".to_owned()));
        }
        let (max_u, max_v) = (r.f64()?, r.f64()?);
        let expected_dims = [
            [1, ENTITY_DIM, ENTITY_DIM],
            [1, ENTITY_DIM, ENTITY_DIM],
            [ENTITY_DIM + 1, SET_DIM, SET_DIM],
            [SET_DIM, DECODER_HIDDEN, 1],
        ];
        let mut nets = Vec::with_capacity(4);
        for (tag, dims) in Self::TAGS.iter().zip(expected_dims) {
            if r.take(4)? != *tag {
                return Err(BetError::Format(format!(
                    "expected section {}",
                    String::from_utf8_lossy(*tag)
                )));
            }
            if r.u32()? != 2 {
                return Err(BetError::Format("expected 2 layers per section".to_owned()));
            }
            let mut layers = Vec::with_capacity(2);
            for l in 0..2 {
                let (i, o) = (r.u32()? as usize, r.u32()? as usize);
                if (i, o) != (dims[l], dims[l + 1]) {
                    return Err(BetError::Format(format!("layer shape {i}x{o} unexpected")));
                }
                let mut layer = Dense::zeros(i, o);
                for x in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                    *x = r.f64()?;
                }
                layers.push(layer);
            }
            let output = layers.pop().unwrap();
            let hidden = layers.pop().unwrap();
            nets.push(Mlp { hidden, output });
        }
        if r.pos != bytes.len() {
            return Err(BetError::Format("trailing bytes after predictor".to_owned()));
        }
        let nets: [Mlp; 4] = nets.try_into().unwrap();
        let p = Self::with_networks(user_freq, item_freq, d_max, nets)?;
        if p.max_user_freq != max_u || p.max_item_freq != max_v {
            return Err(BetError::Format(
                "predictor was trained on different frequencies".to_owned(),
            ));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(BetError::Format("truncated predictor file".to_owned()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Surrogate for FitnessPredictor {
    fn predict(&self, action: &SizeAction) -> Result<f64> {
        self.predict_fitness(action)
    }

    fn embed(&self, action: &SizeAction) -> Result<Vec<f64>> {
        self.embed_action(action)
    }
}

/// Measured `(action, r_a)` pairs in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Population {
    entries: Vec<SizeAction>,
}

impl Population {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SizeAction] {
        &self.entries
    }

    pub fn fitness(&self, i: usize) -> f64 {
        self.entries[i].fitness.expect("population entries carry fitness")
    }

    pub fn push(&mut self, mut action: SizeAction, fitness: f64) -> Result<()> {
        if !(fitness.is_finite() && fitness >= 0.0) {
            return Err(BetError::Numeric(format!("invalid fitness {fitness}")));
        }
        action.fitness = Some(fitness);
        self.entries.push(action);
        Ok(())
    }

    /// Index of the highest fitness; ties go to the earliest entry.
    pub fn best(&self) -> Option<usize> {
        self.ranked().first().copied()
    }

    /// Indices by decreasing fitness, ties by insertion order.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by(|&a, &b| self.fitness(b).total_cmp(&self.fitness(a)).then(a.cmp(&b)));
        idx
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Population = serde_json::from_str(text)?;
        if p.entries.iter().any(|a| a.fitness.is_none()) {
            return Err(BetError::Format("population entry without fitness".to_owned()));
        }
        Ok(p)
    }
}

/// `updates` gradient steps, each on one pair drawn uniformly from the
/// population. Returns the mean of the pre-update squared errors.
pub fn train_predictor(
    predictor: &mut FitnessPredictor,
    population: &Population,
    updates: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if population.is_empty() {
        return Err(BetError::InvalidArgument("population is empty".to_owned()));
    }
    if updates == 0 {
        return Err(BetError::InvalidArgument("need at least one update".to_owned()));
    }
    let mut total = 0.0;
    for _ in 0..updates {
        let i = rng.random_range(0..population.len());
        let (loss, grad) =
            predictor.loss_and_gradient(&population.entries()[i], population.fitness(i))?;
        if !loss.is_finite() {
            return Err(BetError::Numeric(format!("non-finite predictor loss {loss}")));
        }
        predictor.apply_gradient(&grad, lr);
        total += loss;
    }
    Ok(total / updates as f64)
}
