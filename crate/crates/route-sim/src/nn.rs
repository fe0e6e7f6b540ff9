//! Dense Q-network with a dueling head.
//!
//! A deliberately small, dependency-light implementation: three ReLU trunk
//! layers of width 300, then a value head (300 → 150 → 1) and an advantage
//! head (300 → 150 → `n_e`), combined as Q = V + A − mean(A). Backpropagation
//! is analytic, the optimizer is Adam, and checkpoints are a small versioned
//! binary format that refuses to load anything whose shapes disagree with the
//! declared architecture.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngExt};
use thiserror::Error;

/// Features per candidate slot; the network input width is this times `n_e`.
pub const FEATURES_PER_SLOT: usize = 4;
/// Width of each trunk layer.
pub const TRUNK_WIDTH: usize = 300;
/// Widths of the two hidden layers in each head.
pub const HEAD_HIDDEN: [usize; 2] = [300, 150];

/// Errors from network evaluation, training, and checkpointing.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has {got} features, network expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("batch arrays disagree: {states} states, {actions} actions, {targets} targets")]
    BatchLength {
        states: usize,
        actions: usize,
        targets: usize,
    },
    #[error("sample {sample}: action {action} out of range for {n_e} slots")]
    ActionOutOfRange {
        sample: usize,
        action: usize,
        n_e: usize,
    },
    #[error("sample {sample}: action {action} addresses a padded (zero-featured) slot")]
    MaskedAction { sample: usize, action: usize },
    #[error("non-finite gradient in {tensor} at flat index {index}")]
    NonFiniteGradient { tensor: &'static str, index: usize },
    #[error("gradient shapes do not match network ({reason})")]
    GradientShape { reason: String },
    #[error("parameter vector has {got} values, network has {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint ends before all parameters were read")]
    Truncated,
    #[error("checkpoint has trailing bytes after the parameter block")]
    TrailingBytes,
}

/// One dense layer's parameters: `w` is (input × output), `b` is (output).
///
/// Also serves as the shape-matched container for gradients and optimizer
/// moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(inp: usize, out: usize) -> Self {
        Dense {
            w: Array2::zeros((inp, out)),
            b: Array1::zeros(out),
        }
    }

    fn uniform_fan_in(inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Dense {
            w: Array2::from_shape_fn((inp, out), |_| rng.random_range(-bound..bound)),
            b: Array1::from_shape_fn(out, |_| rng.random_range(-bound..bound)),
        }
    }

    fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Index and name of each layer in [`QNetwork::layers`] order.
const LAYER_NAMES: [&str; 9] = [
    "trunk1",
    "trunk2",
    "trunk3",
    "value1",
    "value2",
    "value_out",
    "advantage1",
    "advantage2",
    "advantage_out",
];

const CHECKPOINT_MAGIC: [u8; 4] = *b"RQNC";
const CHECKPOINT_VERSION: u32 = 1;

/// The shared Q-function approximator.
///
/// Input is `4·n_e` features (four per candidate slot); output is one
/// Q-value per slot. The same network is evaluated once per legal resource,
/// so the action space it sees is always the slot axis.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    n_e: usize,
    pub(crate) layers: Vec<Dense>,
}

/// (input, output) widths of every layer, in storage order.
fn layer_dims(n_e: usize) -> [(usize, usize); 9] {
    let inp = FEATURES_PER_SLOT * n_e;
    [
        (inp, TRUNK_WIDTH),
        (TRUNK_WIDTH, TRUNK_WIDTH),
        (TRUNK_WIDTH, TRUNK_WIDTH),
        (TRUNK_WIDTH, HEAD_HIDDEN[0]),
        (HEAD_HIDDEN[0], HEAD_HIDDEN[1]),
        (HEAD_HIDDEN[1], 1),
        (TRUNK_WIDTH, HEAD_HIDDEN[0]),
        (HEAD_HIDDEN[0], HEAD_HIDDEN[1]),
        (HEAD_HIDDEN[1], n_e),
    ]
}

/// Everything the backward pass needs from a forward pass.
struct ForwardCache {
    a1: Array2<f64>,
    a2: Array2<f64>,
    a3: Array2<f64>,
    v1: Array2<f64>,
    v2: Array2<f64>,
    value: Array2<f64>,
    u1: Array2<f64>,
    u2: Array2<f64>,
    q: Array2<f64>,
}

fn relu(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Zero out upstream gradient wherever the post-ReLU activation is zero.
fn apply_relu_mask(grad: &mut Array2<f64>, post: &Array2<f64>) {
    grad.zip_mut_with(post, |g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

impl QNetwork {
    /// Fresh network for `n_e` candidate slots, all layers initialized with
    /// uniform fan-in scaling.
    pub fn new(n_e: usize, rng: &mut impl Rng) -> Self {
        assert!(n_e >= 1, "need at least one candidate slot");
        let layers = layer_dims(n_e)
            .iter()
            .map(|&(i, o)| Dense::uniform_fan_in(i, o, rng))
            .collect();
        QNetwork { n_e, layers }
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    /// Expected input width, `4·n_e`.
    pub fn input_width(&self) -> usize {
        FEATURES_PER_SLOT * self.n_e
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    fn forward_cached(&self, states: ArrayView2<f64>) -> ForwardCache {
        let l = &self.layers;
        let a1 = relu(states.dot(&l[0].w) + &l[0].b);
        let a2 = relu(a1.dot(&l[1].w) + &l[1].b);
        let a3 = relu(a2.dot(&l[2].w) + &l[2].b);
        let v1 = relu(a3.dot(&l[3].w) + &l[3].b);
        let v2 = relu(v1.dot(&l[4].w) + &l[4].b);
        let value = v2.dot(&l[5].w) + &l[5].b;
        let u1 = relu(a3.dot(&l[6].w) + &l[6].b);
        let u2 = relu(u1.dot(&l[7].w) + &l[7].b);
        let adv = u2.dot(&l[8].w) + &l[8].b;

        let adv_mean = adv.mean_axis(Axis(1)).unwrap();
        let mut q = adv;
        for (mut row, (&v, &m)) in q
            .rows_mut()
            .into_iter()
            .zip(value.column(0).iter().zip(adv_mean.iter()))
        {
            row.mapv_inplace(|a| v + a - m);
        }
        ForwardCache {
            a1,
            a2,
            a3,
            v1,
            v2,
            value,
            u1,
            u2,
            q,
        }
    }

    fn check_input_width(&self, got: usize) -> Result<(), NnError> {
        if got != self.input_width() {
            return Err(NnError::InputWidth {
                expected: self.input_width(),
                got,
            });
        }
        Ok(())
    }

    /// Q-values for a batch of states (rows).
    pub fn forward_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input_width(states.ncols())?;
        Ok(self.forward_cached(states).q)
    }

    /// Q-values for a single state.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input_width(state.len())?;
        let states = ArrayView2::from_shape((1, state.len()), state).unwrap();
        Ok(self.forward_cached(states).q.row(0).to_vec())
    }

    /// Per-sample (state value, Q-values) — the dueling decomposition, for
    /// diagnostics and tests.
    pub fn forward_parts(
        &self,
        states: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>), NnError> {
        self.check_input_width(states.ncols())?;
        let cache = self.forward_cached(states);
        Ok((cache.value.column(0).to_owned(), cache.q))
    }

    /// Mean-squared-error loss of `Q[action]` against `target` over the
    /// batch, with analytic gradients for every parameter.
    ///
    /// An action addressing a padded slot — recognizable by its all-zero
    /// feature block — is a pipeline bug upstream and is rejected. (A real
    /// neighbor produces a zero block only in degenerate geometries that the
    /// experiment worlds cannot reach.)
    pub fn loss_and_gradients(
        &self,
        states: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients), NnError> {
        self.check_input_width(states.ncols())?;
        let batch = states.nrows();
        if actions.len() != batch || targets.len() != batch {
            return Err(NnError::BatchLength {
                states: batch,
                actions: actions.len(),
                targets: targets.len(),
            });
        }
        for (s, &a) in actions.iter().enumerate() {
            if a >= self.n_e {
                return Err(NnError::ActionOutOfRange {
                    sample: s,
                    action: a,
                    n_e: self.n_e,
                });
            }
            let block = states.row(s);
            let block = &block.as_slice().unwrap()[a * FEATURES_PER_SLOT..(a + 1) * FEATURES_PER_SLOT];
            if block.iter().all(|&f| f == 0.0) {
                return Err(NnError::MaskedAction { sample: s, action: a });
            }
        }

        let cache = self.forward_cached(states);
        let inv_b = 1.0 / batch as f64;
        let mut loss = 0.0;
        // Upstream gradients at the two head outputs.
        let mut d_value = Array2::<f64>::zeros((batch, 1));
        let mut d_adv = Array2::<f64>::zeros((batch, self.n_e));
        for s in 0..batch {
            let err = cache.q[[s, actions[s]]] - targets[s];
            loss += err * err * inv_b;
            let g = 2.0 * err * inv_b;
            d_value[[s, 0]] = g;
            // ∂Q_a/∂A_k = δ_{ka} − 1/n_e.
            let spread = g / self.n_e as f64;
            for k in 0..self.n_e {
                d_adv[[s, k]] = -spread;
            }
            d_adv[[s, actions[s]]] += g;
        }

        let l = &self.layers;
        let mut grads: Vec<Dense> = layer_dims(self.n_e)
            .iter()
            .map(|&(i, o)| Dense::zeros(i, o))
            .collect();

        // One dense layer backward: fills grads[idx], returns gradient w.r.t.
        // the layer input. `d_out` must already be masked for the layer's own
        // activation (identity for linear outputs).
        let backward = |idx: usize,
                        input: &ArrayView2<f64>,
                        d_out: &Array2<f64>,
                        grads: &mut Vec<Dense>| {
            grads[idx].w = input.t().dot(d_out);
            grads[idx].b = d_out.sum_axis(Axis(0));
            d_out.dot(&l[idx].w.t())
        };

        // Value head.
        let mut d = backward(5, &cache.v2.view(), &d_value, &mut grads);
        apply_relu_mask(&mut d, &cache.v2);
        let mut d = backward(4, &cache.v1.view(), &d, &mut grads);
        apply_relu_mask(&mut d, &cache.v1);
        let d_a3_value = backward(3, &cache.a3.view(), &d, &mut grads);

        // Advantage head.
        let mut d = backward(8, &cache.u2.view(), &d_adv, &mut grads);
        apply_relu_mask(&mut d, &cache.u2);
        let mut d = backward(7, &cache.u1.view(), &d, &mut grads);
        apply_relu_mask(&mut d, &cache.u1);
        let d_a3_adv = backward(6, &cache.a3.view(), &d, &mut grads);

        // Trunk: both heads feed gradient into a3.
        let mut d = d_a3_value + d_a3_adv;
        apply_relu_mask(&mut d, &cache.a3);
        let mut d = backward(2, &cache.a2.view(), &d, &mut grads);
        apply_relu_mask(&mut d, &cache.a2);
        let mut d = backward(1, &cache.a1.view(), &d, &mut grads);
        apply_relu_mask(&mut d, &cache.a1);
        backward(0, &states, &d, &mut grads);

        Ok((loss, Gradients { layers: grads }))
    }

    /// All parameters as one flat vector (layer order, weights row-major,
    /// then bias).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        out
    }

    /// Overwrites all parameters from a flat vector laid out as
    /// [`flatten_params`](Self::flatten_params) produces.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.num_params() {
            return Err(NnError::ParamCount {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for w in layer.w.iter_mut() {
                *w = flat[off];
                off += 1;
            }
            for b in layer.b.iter_mut() {
                *b = flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    /// (name, flat offset, length) of every parameter tensor, in flat-vector
    /// order — weights and biases listed separately.
    pub fn param_layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        let mut off = 0;
        for (layer, name) in self.layers.iter().zip(LAYER_NAMES) {
            out.push((format!("{name}.w"), off, layer.w.len()));
            off += layer.w.len();
            out.push((format!("{name}.b"), off, layer.b.len()));
            off += layer.b.len();
        }
        out
    }

    /// Writes a versioned binary checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        f.write_all(&(self.n_e as u64).to_le_bytes())?;
        f.write_all(&(self.layers.len() as u64).to_le_bytes())?;
        for layer in &self.layers {
            f.write_all(&(layer.w.nrows() as u64).to_le_bytes())?;
            f.write_all(&(layer.w.ncols() as u64).to_le_bytes())?;
        }
        for layer in &self.layers {
            for &v in layer.w.iter() {
                f.write_all(&v.to_le_bytes())?;
            }
            for &v in layer.b.iter() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    /// Loads a checkpoint, refusing any file whose declared shapes do not
    /// form this module's architecture.
    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut f = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact_or_truncated(&mut f, &mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(NnError::BadMagic);
        }
        let version = read_u32(&mut f)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::UnsupportedVersion(version));
        }
        let n_e = read_u64(&mut f)? as usize;
        if n_e == 0 {
            return Err(NnError::ShapeMismatch("zero candidate slots".into()));
        }
        let n_layers = read_u64(&mut f)? as usize;
        let expected = layer_dims(n_e);
        if n_layers != expected.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{n_layers} layers, architecture has {}",
                expected.len()
            )));
        }
        for (idx, &(ei, eo)) in expected.iter().enumerate() {
            let (i, o) = (read_u64(&mut f)? as usize, read_u64(&mut f)? as usize);
            if (i, o) != (ei, eo) {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {} ({}) is {i}×{o}, expected {ei}×{eo}",
                    idx, LAYER_NAMES[idx]
                )));
            }
        }
        let mut layers = Vec::with_capacity(expected.len());
        for &(i, o) in &expected {
            let mut w = Array2::zeros((i, o));
            for v in w.iter_mut() {
                *v = read_f64(&mut f)?;
            }
            let mut b = Array1::zeros(o);
            for v in b.iter_mut() {
                *v = read_f64(&mut f)?;
            }
            layers.push(Dense { w, b });
        }
        let mut probe = [0u8; 1];
        if f.read(&mut probe)? != 0 {
            return Err(NnError::TrailingBytes);
        }
        Ok(QNetwork { n_e, layers })
    }
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), NnError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            NnError::Truncated
        } else {
            NnError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, NnError> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Parameter gradients, shaped exactly like the network's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    /// Flat view in [`QNetwork::flatten_params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        out
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            alpha: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment accumulators for one network.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    params: AdamParams,
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: u64,
}

impl OptimizerState {
    pub fn new(net: &QNetwork, params: AdamParams) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Dense::zeros(l.w.nrows(), l.w.ncols()))
                .collect::<Vec<_>>()
        };
        OptimizerState {
            params,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update of `net` in place. Rejects non-finite gradients,
    /// naming the offending tensor.
    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients) -> Result<(), NnError> {
        if grads.layers.len() != net.layers.len() {
            return Err(NnError::GradientShape {
                reason: format!(
                    "{} gradient layers for {} network layers",
                    grads.layers.len(),
                    net.layers.len()
                ),
            });
        }
        for (idx, (g, l)) in grads.layers.iter().zip(&net.layers).enumerate() {
            if g.w.dim() != l.w.dim() || g.b.len() != l.b.len() {
                return Err(NnError::GradientShape {
                    reason: format!("layer {} ({})", idx, LAYER_NAMES[idx]),
                });
            }
            if let Some(pos) = g.w.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient {
                    tensor: LAYER_NAMES[idx],
                    index: pos,
                });
            }
            if let Some(pos) = g.b.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient {
                    tensor: LAYER_NAMES[idx],
                    index: g.w.len() + pos,
                });
            }
        }

        self.t += 1;
        let p = self.params;
        let bias1 = 1.0 - p.beta1.powi(self.t as i32);
        let bias2 = 1.0 - p.beta2.powi(self.t as i32);
        for (layer, (g, (m, v))) in net
            .layers
            .iter_mut()
            .zip(grads.layers.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())))
        {
            for ((pw, gw), (mw, vw)) in layer
                .w
                .iter_mut()
                .zip(g.w.iter())
                .zip(m.w.iter_mut().zip(v.w.iter_mut()))
            {
                *mw = p.beta1 * *mw + (1.0 - p.beta1) * gw;
                *vw = p.beta2 * *vw + (1.0 - p.beta2) * gw * gw;
                *pw -= p.alpha * (*mw / bias1) / ((*vw / bias2).sqrt() + p.epsilon);
            }
            for ((pb, gb), (mb, vb)) in layer
                .b
                .iter_mut()
                .zip(g.b.iter())
                .zip(m.b.iter_mut().zip(v.b.iter_mut()))
            {
                *mb = p.beta1 * *mb + (1.0 - p.beta1) * gb;
                *vb = p.beta2 * *vb + (1.0 - p.beta2) * gb * gb;
                *pb -= p.alpha * (*mb / bias1) / ((*vb / bias2).sqrt() + p.epsilon);
            }
        }
        Ok(())
    }
}
