//! Implements small feed-forward networks built from dense layers and
//! parameter-free multiply layers, with min-max feature scaling, exact input
//! Jacobians and Hessians, and plain-text checkpoints.
//!
//! Architectures are written as strings over the alphabet `d` (dense) and
//! `m` (multiply, the elementwise square `h * h` of the previous
//! activation); the final `d` is the linear output head. The canonical
//! families are `ddd`, `dmdd`, `dmdmd`, `dmmdd`, and `dmmdmd`.
//!
//! Derivatives with respect to the inputs propagate alongside the values as
//! Taylor channels: one channel per input direction for first order plus one
//! channel per unordered direction pair for second order. The same batched
//! kernels back-propagate adjoints of all channels to the parameters, which
//! is what makes Sobolev-style training losses affordable. The expression
//! graph in [`crate::autodiff`] re-derives all of this slowly and serves as
//! the oracle in the tests.

use crate::autodiff::{Graph, NodeId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Checkpoint format version written and accepted by this module
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Indicates an invalid network construction or checkpoint
#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture code {code:?}: {reason}")]
    BadArchitecture { code: String, reason: String },
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identifies the activation of a dense layer
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Tanh,
}

impl Activation {
    /// Returns the lowercase name used in configs and checkpoints
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
        }
    }

    /// Parses a lowercase activation name
    pub fn parse(name: &str) -> Result<Self, NetworkError> {
        match name {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            "tanh" => Ok(Activation::Tanh),
            other => Err(NetworkError::BadCheckpoint(format!("unknown activation {:?}", other))),
        }
    }
}

/// Describes one layer of a network
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { width: usize, activation: Activation },
    Multiply,
}

/// Holds a per-feature min-max scaler mapping data to [0, 1]; features with
/// zero range map to the constant 0 and invert back to their minimum
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub ranges: Vec<f64>,
}

impl MinMaxScaler {
    /// Returns the identity scaler for the given dimension
    pub fn identity(dim: usize) -> Self {
        MinMaxScaler { mins: vec![0.0; dim], ranges: vec![1.0; dim] }
    }

    /// Fits the scaler column-wise on data rows
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "cannot fit a scaler on an empty set");
        let dim = rows[0].len();
        let mut mins = vec![f64::INFINITY; dim];
        let mut maxs = vec![f64::NEG_INFINITY; dim];
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        let ranges = mins
            .iter()
            .zip(maxs.iter())
            .map(|(lo, hi)| if hi - lo > 0.0 { hi - lo } else { 1.0 })
            .collect();
        MinMaxScaler { mins, ranges }
    }

    /// Returns the dimension
    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    /// Applies the affine map (x - min) / range; extrapolates linearly
    /// outside the fitted range
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.dim() {
            out[j] = (x[j] - self.mins[j]) / self.ranges[j];
        }
    }

    /// Applies the inverse map y * range + min
    pub fn invert(&self, y: &[f64], out: &mut [f64]) {
        for j in 0..self.dim() {
            out[j] = y[j] * self.ranges[j] + self.mins[j];
        }
    }
}

/// Holds one dense layer with weights stored input-major (`w[i][o]`) plus a
/// bias per output
#[derive(Clone, Debug)]
struct DenseLayer {
    fan_in: usize,
    fan_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Clone, Debug)]
enum Layer {
    Dense(DenseLayer),
    Multiply,
}

/// Holds a feed-forward network together with its input and output scalers
#[derive(Clone, Debug)]
pub struct NetworkModel {
    code: String,
    hidden_width: usize,
    hidden_activation: Activation,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer>,
    pub input_scaler: MinMaxScaler,
    pub output_scaler: MinMaxScaler,
}

/// Holds value, Jacobian, and optional Hessian blocks of a network output
/// in physical (unscaled) units
#[derive(Clone, Debug)]
pub struct NetTaylor {
    pub value: Vec<f64>,
    pub jacobian: Vec<Vec<f64>>,
    pub hessian: Option<Vec<Vec<Vec<f64>>>>,
}

/// Returns the layer list encoded by an architecture string such as
/// "dmmdmd": every `d` is a hidden dense layer except the last, which is the
/// linear output head; every `m` is a multiply layer
pub fn parse_architecture(
    code: &str,
    output_dim: usize,
    hidden_width: usize,
    hidden_activation: Activation,
) -> Result<Vec<LayerSpec>, NetworkError> {
    let bad = |reason: &str| NetworkError::BadArchitecture {
        code: code.to_string(),
        reason: reason.to_string(),
    };
    if code.is_empty() {
        return Err(bad("empty code"));
    }
    if !code.ends_with('d') {
        return Err(bad("must end with a dense output head"));
    }
    let mut specs = Vec::new();
    let last = code.len() - 1;
    for (i, ch) in code.chars().enumerate() {
        match ch {
            'd' if i == last => {
                specs.push(LayerSpec::Dense { width: output_dim, activation: Activation::Linear })
            }
            'd' => specs
                .push(LayerSpec::Dense { width: hidden_width, activation: hidden_activation }),
            'm' => specs.push(LayerSpec::Multiply),
            other => return Err(bad(&format!("unknown layer letter {:?}", other))),
        }
    }
    if matches!(specs[0], LayerSpec::Multiply) {
        return Err(bad("cannot start with a multiply layer"));
    }
    Ok(specs)
}

/// Returns the flat index of the unordered direction pair (k, l) with
/// k <= l among n directions
pub(crate) fn pair_index(n: usize, k: usize, l: usize) -> usize {
    debug_assert!(k <= l && l < n);
    k * (2 * n - k + 1) / 2 + (l - k)
}

/// Returns the number of Taylor channels for the given input dimension and
/// derivative order (0, 1, or 2)
pub(crate) fn channel_count(n: usize, order: usize) -> usize {
    match order {
        0 => 1,
        1 => 1 + n,
        2 => 1 + n + n * (n + 1) / 2,
        _ => panic!("unsupported derivative order {}", order),
    }
}

impl NetworkModel {
    /// Builds a network from an architecture code with Glorot-uniform
    /// weights drawn from the given generator and identity scalers
    pub fn from_code(
        code: &str,
        input_dim: usize,
        output_dim: usize,
        hidden_width: usize,
        hidden_activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetworkError> {
        let specs = parse_architecture(code, output_dim, hidden_width, hidden_activation)?;
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = input_dim;
        for spec in &specs {
            match *spec {
                LayerSpec::Dense { width: out, activation } => {
                    let limit = (6.0 / (width + out) as f64).sqrt();
                    let weights = (0..width * out)
                        .map(|_| limit * (2.0 * rng.gen::<f64>() - 1.0))
                        .collect();
                    layers.push(Layer::Dense(DenseLayer {
                        fan_in: width,
                        fan_out: out,
                        weights,
                        bias: vec![0.0; out],
                        activation,
                    }));
                    width = out;
                }
                LayerSpec::Multiply => layers.push(Layer::Multiply),
            }
        }
        Ok(NetworkModel {
            code: code.to_string(),
            hidden_width,
            hidden_activation,
            input_dim,
            output_dim,
            layers,
            input_scaler: MinMaxScaler::identity(input_dim),
            output_scaler: MinMaxScaler::identity(output_dim),
        })
    }

    /// Returns the architecture code
    pub fn code(&self) -> &str {
        &self.code
    }

    /// Returns the input dimension
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Returns the output dimension
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Returns the total number of trainable parameters
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.weights.len() + d.bias.len(),
                Layer::Multiply => 0,
            })
            .sum()
    }

    /// Returns all parameters as one flat vector (dense weights input-major,
    /// then biases, layer by layer)
    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            if let Layer::Dense(d) = layer {
                flat.extend_from_slice(&d.weights);
                flat.extend_from_slice(&d.bias);
            }
        }
        flat
    }

    /// Overwrites all parameters from a flat vector
    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter count mismatch");
        let mut at = 0;
        for layer in &mut self.layers {
            if let Layer::Dense(d) = layer {
                let nw = d.weights.len();
                let nb = d.bias.len();
                d.weights.copy_from_slice(&flat[at..at + nw]);
                at += nw;
                d.bias.copy_from_slice(&flat[at..at + nb]);
                at += nb;
            }
        }
    }

    /// Evaluates the network in physical units
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.taylor_eval(x, 0).value
    }

    /// Calculates the Jacobian of the outputs with respect to the inputs in
    /// physical units
    pub fn input_jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.taylor_eval(x, 1).jacobian
    }

    /// Calculates the Hessian of one output with respect to the inputs in
    /// physical units
    pub fn input_hessian(&self, x: &[f64], output: usize) -> Vec<Vec<f64>> {
        let taylor = self.taylor_eval(x, 2);
        taylor.hessian.unwrap()[output].clone()
    }

    /// Evaluates value, Jacobian, and (for order 2) Hessians in physical
    /// units through the scaler chain
    pub fn taylor_eval(&self, x: &[f64], order: usize) -> NetTaylor {
        assert_eq!(x.len(), self.input_dim, "input dimension mismatch");
        let n = self.input_dim;
        let channels = channel_count(n, order);
        let mut scaled = vec![0.0; n];
        self.input_scaler.apply(x, &mut scaled);
        // seed the Taylor channels in scaled space
        let mut seed = vec![0.0; channels * n];
        seed[..n].copy_from_slice(&scaled);
        for k in 0..n.min(if order >= 1 { n } else { 0 }) {
            seed[(1 + k) * n + k] = 1.0;
        }
        let tape = self.forward_batch(&seed, 1, channels);
        let out = &tape.output;
        let m = self.output_dim;
        // unscale: value rows get the affine map, derivative rows the range
        // factor divided by the input ranges
        let mut value = vec![0.0; m];
        self.output_scaler.invert(&out[..m], &mut value);
        let mut jacobian = vec![vec![0.0; n]; m];
        if order >= 1 {
            for o in 0..m {
                for k in 0..n {
                    jacobian[o][k] = out[(1 + k) * m + o] * self.output_scaler.ranges[o]
                        / self.input_scaler.ranges[k];
                }
            }
        }
        let hessian = if order >= 2 {
            let mut hess = vec![vec![vec![0.0; n]; n]; m];
            for o in 0..m {
                for k in 0..n {
                    for l in k..n {
                        let c = 1 + n + pair_index(n, k, l);
                        let v = out[c * m + o] * self.output_scaler.ranges[o]
                            / (self.input_scaler.ranges[k] * self.input_scaler.ranges[l]);
                        hess[o][k][l] = v;
                        hess[o][l][k] = v;
                    }
                }
            }
            Some(hess)
        } else {
            None
        };
        NetTaylor { value, jacobian, hessian }
    }

    /// Runs the batched forward pass over Taylor channels in scaled space.
    /// `input` has `batch * channels` rows of `input_dim` entries, sample
    /// major (rows of one sample are contiguous: value, then directions,
    /// then direction pairs). Returns the tape needed for the backward pass.
    pub(crate) fn forward_batch(
        &self,
        input: &[f64],
        batch: usize,
        channels: usize,
    ) -> ForwardTape {
        let rows = batch * channels;
        assert_eq!(input.len(), rows * self.input_dim);
        let n_dirs = dirs_from_channels(self.input_dim, channels);
        let mut tape = ForwardTape {
            batch,
            channels,
            n_dirs,
            layers: Vec::with_capacity(self.layers.len()),
            output: Vec::new(),
        };
        let mut current = input.to_vec();
        let mut width = self.input_dim;
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    let mut z = vec![0.0; rows * d.fan_out];
                    matmul(&current, &d.weights, &mut z, rows, d.fan_in, d.fan_out);
                    for s in 0..batch {
                        let row = s * channels;
                        for (o, &b) in d.bias.iter().enumerate() {
                            z[row * d.fan_out + o] += b;
                        }
                    }
                    let mut a = vec![0.0; rows * d.fan_out];
                    activate(d.activation, &z, &mut a, batch, channels, n_dirs, d.fan_out);
                    tape.layers.push(TapeLayer { input: current, pre: z });
                    current = a;
                    width = d.fan_out;
                }
                Layer::Multiply => {
                    let mut m = vec![0.0; rows * width];
                    multiply_forward(&current, &mut m, batch, channels, n_dirs, width);
                    tape.layers.push(TapeLayer { input: current, pre: Vec::new() });
                    current = m;
                }
            }
        }
        tape.output = current;
        tape
    }

    /// Runs the batched backward pass: given adjoints of the output channels
    /// (same layout as the tape output), accumulates parameter gradients
    /// into `grads` (layout of [`Self::params_flat`])
    pub(crate) fn backward_batch(
        &self,
        tape: &ForwardTape,
        out_adjoint: &[f64],
        grads: &mut [f64],
    ) {
        assert_eq!(grads.len(), self.num_params());
        let (batch, channels, n_dirs) = (tape.batch, tape.channels, tape.n_dirs);
        let rows = batch * channels;
        let mut adj = out_adjoint.to_vec();
        // parameter offsets per layer in the flat layout
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for layer in &self.layers {
            offsets.push(at);
            if let Layer::Dense(d) = layer {
                at += d.weights.len() + d.bias.len();
            }
        }
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let tl = &tape.layers[li];
            match layer {
                Layer::Dense(d) => {
                    // adjoint through the activation
                    let mut zbar = vec![0.0; rows * d.fan_out];
                    activate_backward(
                        d.activation,
                        &tl.pre,
                        &adj,
                        &mut zbar,
                        batch,
                        channels,
                        n_dirs,
                        d.fan_out,
                    );
                    // weight and bias gradients
                    let base = offsets[li];
                    let (wg, bg) = grads[base..base + d.weights.len() + d.bias.len()]
                        .split_at_mut(d.weights.len());
                    matmul_at_b(&tl.input, &zbar, wg, rows, d.fan_in, d.fan_out);
                    for s in 0..batch {
                        let row = s * channels;
                        for (o, slot) in bg.iter_mut().enumerate() {
                            *slot += zbar[row * d.fan_out + o];
                        }
                    }
                    // adjoint of the layer input
                    let mut hbar = vec![0.0; rows * d.fan_in];
                    matmul_b_wt(&zbar, &d.weights, &mut hbar, rows, d.fan_in, d.fan_out);
                    adj = hbar;
                }
                Layer::Multiply => {
                    let width = tl.input.len() / rows;
                    let mut hbar = vec![0.0; rows * width];
                    multiply_backward(&tl.input, &adj, &mut hbar, batch, channels, n_dirs, width);
                    adj = hbar;
                }
            }
        }
    }

    /// Builds the scaled-space network as an expression graph with inputs
    /// and parameters as leaves (inputs first, then parameters in the flat
    /// layout); returns the output node of each output feature
    pub fn to_graph(&self) -> (Graph, Vec<NodeId>, Vec<NodeId>, Vec<NodeId>) {
        let mut g = Graph::new();
        let inputs: Vec<NodeId> = (0..self.input_dim).map(|_| g.leaf()).collect();
        let mut params = Vec::with_capacity(self.num_params());
        let mut param_nodes_per_layer = Vec::new();
        for layer in &self.layers {
            if let Layer::Dense(d) = layer {
                let w: Vec<NodeId> = (0..d.weights.len()).map(|_| g.leaf()).collect();
                let b: Vec<NodeId> = (0..d.bias.len()).map(|_| g.leaf()).collect();
                params.extend_from_slice(&w);
                params.extend_from_slice(&b);
                param_nodes_per_layer.push((w, b));
            } else {
                param_nodes_per_layer.push((Vec::new(), Vec::new()));
            }
        }
        let mut current = inputs.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    let (w, b) = &param_nodes_per_layer[li];
                    let mut next = Vec::with_capacity(d.fan_out);
                    for o in 0..d.fan_out {
                        let mut acc = b[o];
                        for (i, h) in current.iter().enumerate() {
                            let prod = g.mul(*h, w[i * d.fan_out + o]);
                            acc = g.add(acc, prod);
                        }
                        let out = match d.activation {
                            Activation::Relu => g.max_zero(acc),
                            Activation::Linear => acc,
                            Activation::Tanh => g.tanh(acc),
                        };
                        next.push(out);
                    }
                    current = next;
                }
                Layer::Multiply => {
                    current = current.iter().map(|h| g.square(*h)).collect();
                }
            }
        }
        (g, inputs, params, current)
    }

    /// Writes the checkpoint as deterministic JSON text with 17 significant
    /// digits so parameters round-trip bit-exactly
    pub fn checkpoint_string(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        s.push_str(&format!("  \"format_version\": {},\n", CHECKPOINT_FORMAT_VERSION));
        s.push_str(&format!("  \"architecture\": \"{}\",\n", self.code));
        s.push_str(&format!("  \"input_dim\": {},\n", self.input_dim));
        s.push_str(&format!("  \"output_dim\": {},\n", self.output_dim));
        s.push_str(&format!("  \"hidden_width\": {},\n", self.hidden_width));
        s.push_str(&format!("  \"hidden_activation\": \"{}\",\n", self.hidden_activation.name()));
        s.push_str(&format!(
            "  \"input_scaler\": {},\n",
            scaler_json(&self.input_scaler)
        ));
        s.push_str(&format!(
            "  \"output_scaler\": {},\n",
            scaler_json(&self.output_scaler)
        ));
        s.push_str("  \"layers\": [\n");
        for (li, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    s.push_str("    {\"kind\": \"dense\", ");
                    s.push_str(&format!("\"activation\": \"{}\", ", d.activation.name()));
                    s.push_str(&format!("\"fan_in\": {}, \"fan_out\": {},\n", d.fan_in, d.fan_out));
                    s.push_str("     \"weights\": [");
                    for i in 0..d.fan_in {
                        if i > 0 {
                            s.push_str(",\n                  ");
                        }
                        s.push_str(&float_list(&d.weights[i * d.fan_out..(i + 1) * d.fan_out]));
                    }
                    s.push_str("],\n");
                    s.push_str(&format!("     \"bias\": {}}}", float_list(&d.bias)));
                }
                Layer::Multiply => s.push_str("    {\"kind\": \"multiply\"}"),
            }
            s.push_str(if li + 1 < self.layers.len() { ",\n" } else { "\n" });
        }
        s.push_str("  ]\n}\n");
        s
    }

    /// Saves the checkpoint to a file
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), NetworkError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.checkpoint_string().as_bytes())?;
        Ok(())
    }

    /// Parses a checkpoint from its textual form
    pub fn from_checkpoint_str(text: &str) -> Result<Self, NetworkError> {
        let bad = |m: &str| NetworkError::BadCheckpoint(m.to_string());
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| bad(&format!("not valid JSON: {}", e)))?;
        let version = v["format_version"].as_u64().ok_or_else(|| bad("missing format_version"))?;
        if version != u64::from(CHECKPOINT_FORMAT_VERSION) {
            return Err(bad(&format!("unsupported format_version {}", version)));
        }
        let code = v["architecture"].as_str().ok_or_else(|| bad("missing architecture"))?;
        let input_dim = v["input_dim"].as_u64().ok_or_else(|| bad("missing input_dim"))? as usize;
        let output_dim =
            v["output_dim"].as_u64().ok_or_else(|| bad("missing output_dim"))? as usize;
        let hidden_width =
            v["hidden_width"].as_u64().ok_or_else(|| bad("missing hidden_width"))? as usize;
        let hidden_activation =
            Activation::parse(v["hidden_activation"].as_str().ok_or_else(|| bad("missing hidden_activation"))?)?;
        let input_scaler = scaler_from_json(&v["input_scaler"])?;
        let output_scaler = scaler_from_json(&v["output_scaler"])?;
        let layer_values = v["layers"].as_array().ok_or_else(|| bad("missing layers"))?;
        let mut layers = Vec::with_capacity(layer_values.len());
        for lv in layer_values {
            match lv["kind"].as_str() {
                Some("dense") => {
                    let fan_in = lv["fan_in"].as_u64().ok_or_else(|| bad("missing fan_in"))? as usize;
                    let fan_out =
                        lv["fan_out"].as_u64().ok_or_else(|| bad("missing fan_out"))? as usize;
                    let activation = Activation::parse(
                        lv["activation"].as_str().ok_or_else(|| bad("missing activation"))?,
                    )?;
                    let rows = lv["weights"].as_array().ok_or_else(|| bad("missing weights"))?;
                    if rows.len() != fan_in {
                        return Err(bad("weight row count mismatch"));
                    }
                    let mut weights = Vec::with_capacity(fan_in * fan_out);
                    for row in rows {
                        let cols = row.as_array().ok_or_else(|| bad("weight row not a list"))?;
                        if cols.len() != fan_out {
                            return Err(bad("weight column count mismatch"));
                        }
                        for c in cols {
                            weights.push(c.as_f64().ok_or_else(|| bad("weight not a number"))?);
                        }
                    }
                    let bias_vals = lv["bias"].as_array().ok_or_else(|| bad("missing bias"))?;
                    let mut bias = Vec::with_capacity(fan_out);
                    for b in bias_vals {
                        bias.push(b.as_f64().ok_or_else(|| bad("bias not a number"))?);
                    }
                    layers.push(Layer::Dense(DenseLayer { fan_in, fan_out, weights, bias, activation }));
                }
                Some("multiply") => layers.push(Layer::Multiply),
                _ => return Err(bad("unknown layer kind")),
            }
        }
        Ok(NetworkModel {
            code: code.to_string(),
            hidden_width,
            hidden_activation,
            input_dim,
            output_dim,
            layers,
            input_scaler,
            output_scaler,
        })
    }

    /// Loads a checkpoint from a file
    pub fn load_checkpoint(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)?;
        NetworkModel::from_checkpoint_str(&text)
    }
}

/// Holds intermediate activations of one forward pass (inputs of every
/// layer, plus dense pre-activations) for the backward pass
pub(crate) struct ForwardTape {
    pub batch: usize,
    pub channels: usize,
    pub n_dirs: usize,
    layers: Vec<TapeLayer>,
    pub output: Vec<f64>,
}

struct TapeLayer {
    input: Vec<f64>,
    pre: Vec<f64>,
}

/// Returns the number of first-order directions encoded by a channel count
fn dirs_from_channels(n: usize, channels: usize) -> usize {
    if channels == 1 {
        0
    } else if channels == 1 + n {
        n
    } else if channels == channel_count(n, 2) {
        n
    } else {
        panic!("channel count {} does not match input dimension {}", channels, n);
    }
}

/// Returns true if the channel layout carries second-order blocks
fn has_second_order(n: usize, channels: usize) -> bool {
    channels == channel_count(n, 2) && channels > 1 + n
}

/// Calculates C += A * W for row-major A (rows x inner) and W (inner x out)
/// with a fixed ikj loop order (deterministic, vectorizable inner loop)
fn matmul(a: &[f64], w: &[f64], c: &mut [f64], rows: usize, inner: usize, out: usize) {
    for r in 0..rows {
        let arow = &a[r * inner..(r + 1) * inner];
        let crow = &mut c[r * out..(r + 1) * out];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let wrow = &w[i * out..(i + 1) * out];
            for (cv, &wv) in crow.iter_mut().zip(wrow.iter()) {
                *cv += av * wv;
            }
        }
    }
}

/// Calculates WG += A^T * B for row-major A (rows x inner) and B (rows x out),
/// accumulating into the input-major weight gradient (inner x out)
fn matmul_at_b(a: &[f64], b: &[f64], wg: &mut [f64], rows: usize, inner: usize, out: usize) {
    for r in 0..rows {
        let arow = &a[r * inner..(r + 1) * inner];
        let brow = &b[r * out..(r + 1) * out];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let grow = &mut wg[i * out..(i + 1) * out];
            for (gv, &bv) in grow.iter_mut().zip(brow.iter()) {
                *gv += av * bv;
            }
        }
    }
}

/// Calculates HBAR += B * W^T for row-major B (rows x out) and input-major
/// W (inner x out): hbar[r][i] = sum_o b[r][o] w[i][o]
fn matmul_b_wt(b: &[f64], w: &[f64], hbar: &mut [f64], rows: usize, inner: usize, out: usize) {
    for r in 0..rows {
        let brow = &b[r * out..(r + 1) * out];
        let hrow = &mut hbar[r * inner..(r + 1) * inner];
        for (i, hv) in hrow.iter_mut().enumerate() {
            let wrow = &w[i * out..(i + 1) * out];
            let mut acc = 0.0;
            for (&bv, &wv) in brow.iter().zip(wrow.iter()) {
                acc += bv * wv;
            }
            *hv += acc;
        }
    }
}

/// Applies an activation to all Taylor channels of a batch
#[allow(clippy::too_many_arguments)]
fn activate(
    act: Activation,
    z: &[f64],
    a: &mut [f64],
    batch: usize,
    channels: usize,
    n_dirs: usize,
    width: usize,
) {
    let second = has_second_order(n_dirs, channels);
    for s in 0..batch {
        let base = s * channels * width;
        let (val, rest) = a[base..base + channels * width].split_at_mut(width);
        let z0 = &z[base..base + width];
        // derivative factors of the activation at the value channel
        let mut d1 = vec![0.0; width];
        let mut d2 = vec![0.0; width];
        for j in 0..width {
            match act {
                Activation::Relu => {
                    let on = z0[j] > 0.0;
                    val[j] = if on { z0[j] } else { 0.0 };
                    d1[j] = if on { 1.0 } else { 0.0 };
                }
                Activation::Linear => {
                    val[j] = z0[j];
                    d1[j] = 1.0;
                }
                Activation::Tanh => {
                    let t = z0[j].tanh();
                    val[j] = t;
                    d1[j] = 1.0 - t * t;
                    d2[j] = -2.0 * t * (1.0 - t * t);
                }
            }
        }
        for k in 0..n_dirs {
            let zk = &z[base + (1 + k) * width..base + (2 + k) * width];
            let ak = &mut rest[k * width..(k + 1) * width];
            for j in 0..width {
                ak[j] = d1[j] * zk[j];
            }
        }
        if second {
            for k in 0..n_dirs {
                for l in k..n_dirs {
                    let c = 1 + n_dirs + pair_index(n_dirs, k, l);
                    let zk = &z[base + (1 + k) * width..base + (2 + k) * width];
                    let zl = &z[base + (1 + l) * width..base + (2 + l) * width];
                    let zkl = &z[base + c * width..base + (c + 1) * width];
                    let akl = &mut rest[(c - 1) * width..c * width];
                    for j in 0..width {
                        akl[j] = d2[j] * zk[j] * zl[j] + d1[j] * zkl[j];
                    }
                }
            }
        }
    }
}

/// Back-propagates adjoints through an activation: given abar (adjoint of
/// the activations) accumulate zbar (adjoint of the pre-activations)
#[allow(clippy::too_many_arguments)]
fn activate_backward(
    act: Activation,
    z: &[f64],
    abar: &[f64],
    zbar: &mut [f64],
    batch: usize,
    channels: usize,
    n_dirs: usize,
    width: usize,
) {
    let second = has_second_order(n_dirs, channels);
    for s in 0..batch {
        let base = s * channels * width;
        let z0 = &z[base..base + width];
        let mut d1 = vec![0.0; width];
        let mut d2 = vec![0.0; width];
        let mut d3 = vec![0.0; width];
        for j in 0..width {
            match act {
                Activation::Relu => d1[j] = if z0[j] > 0.0 { 1.0 } else { 0.0 },
                Activation::Linear => d1[j] = 1.0,
                Activation::Tanh => {
                    let t = z0[j].tanh();
                    let sech2 = 1.0 - t * t;
                    d1[j] = sech2;
                    d2[j] = -2.0 * t * sech2;
                    d3[j] = -2.0 * sech2 * (1.0 - 3.0 * t * t);
                }
            }
        }
        // value channel: a0 = phi(z0)
        for j in 0..width {
            zbar[base + j] += abar[base + j] * d1[j];
        }
        // first-order channels: a_k = phi'(z0) z_k
        for k in 0..n_dirs {
            let zk = &z[base + (1 + k) * width..base + (2 + k) * width];
            let ak_bar = &abar[base + (1 + k) * width..base + (2 + k) * width];
            for j in 0..width {
                zbar[base + (1 + k) * width + j] += ak_bar[j] * d1[j];
                zbar[base + j] += ak_bar[j] * d2[j] * zk[j];
            }
        }
        // second-order channels: a_kl = phi'' z_k z_l + phi' z_kl
        if second {
            for k in 0..n_dirs {
                for l in k..n_dirs {
                    let c = 1 + n_dirs + pair_index(n_dirs, k, l);
                    let zk_off = base + (1 + k) * width;
                    let zl_off = base + (1 + l) * width;
                    let zkl_off = base + c * width;
                    for j in 0..width {
                        let w = abar[zkl_off + j];
                        if w == 0.0 {
                            continue;
                        }
                        let zk = z[zk_off + j];
                        let zl = z[zl_off + j];
                        let zkl = z[zkl_off + j];
                        zbar[zkl_off + j] += w * d1[j];
                        zbar[zk_off + j] += w * d2[j] * zl;
                        zbar[zl_off + j] += w * d2[j] * zk;
                        zbar[base + j] += w * (d3[j] * zk * zl + d2[j] * zkl);
                    }
                }
            }
        }
    }
}

/// Applies a multiply layer (elementwise square of the activations) to all
/// Taylor channels of a batch
fn multiply_forward(
    h: &[f64],
    m: &mut [f64],
    batch: usize,
    channels: usize,
    n_dirs: usize,
    width: usize,
) {
    let second = has_second_order(n_dirs, channels);
    for s in 0..batch {
        let base = s * channels * width;
        let h0 = &h[base..base + width];
        for j in 0..width {
            m[base + j] = h0[j] * h0[j];
        }
        for k in 0..n_dirs {
            let hk = &h[base + (1 + k) * width..base + (2 + k) * width];
            for j in 0..width {
                m[base + (1 + k) * width + j] = 2.0 * h0[j] * hk[j];
            }
        }
        if second {
            for k in 0..n_dirs {
                for l in k..n_dirs {
                    let c = 1 + n_dirs + pair_index(n_dirs, k, l);
                    let hk = &h[base + (1 + k) * width..base + (2 + k) * width];
                    let hl = &h[base + (1 + l) * width..base + (2 + l) * width];
                    let hkl = &h[base + c * width..base + (c + 1) * width];
                    for j in 0..width {
                        m[base + c * width + j] = 2.0 * (hk[j] * hl[j] + h0[j] * hkl[j]);
                    }
                }
            }
        }
    }
}

/// Back-propagates adjoints through a multiply layer
fn multiply_backward(
    h: &[f64],
    mbar: &[f64],
    hbar: &mut [f64],
    batch: usize,
    channels: usize,
    n_dirs: usize,
    width: usize,
) {
    let second = has_second_order(n_dirs, channels);
    for s in 0..batch {
        let base = s * channels * width;
        let h0_off = base;
        // value channel: m0 = h0^2
        for j in 0..width {
            hbar[h0_off + j] += mbar[base + j] * 2.0 * h[h0_off + j];
        }
        // first-order: m_k = 2 h0 h_k
        for k in 0..n_dirs {
            let hk_off = base + (1 + k) * width;
            for j in 0..width {
                let w = mbar[hk_off + j];
                hbar[h0_off + j] += w * 2.0 * h[hk_off + j];
                hbar[hk_off + j] += w * 2.0 * h[h0_off + j];
            }
        }
        // second-order: m_kl = 2 (h_k h_l + h0 h_kl)
        if second {
            for k in 0..n_dirs {
                for l in k..n_dirs {
                    let c = 1 + n_dirs + pair_index(n_dirs, k, l);
                    let hk_off = base + (1 + k) * width;
                    let hl_off = base + (1 + l) * width;
                    let hkl_off = base + c * width;
                    for j in 0..width {
                        let w = mbar[hkl_off + j];
                        if w == 0.0 {
                            continue;
                        }
                        if k == l {
                            hbar[hk_off + j] += w * 4.0 * h[hk_off + j];
                        } else {
                            hbar[hk_off + j] += w * 2.0 * h[hl_off + j];
                            hbar[hl_off + j] += w * 2.0 * h[hk_off + j];
                        }
                        hbar[h0_off + j] += w * 2.0 * h[hkl_off + j];
                        hbar[hkl_off + j] += w * 2.0 * h[h0_off + j];
                    }
                }
            }
        }
    }
}

/// Formats a float slice as a JSON list with 17 significant digits
fn float_list(values: &[f64]) -> String {
    let mut s = String::from("[");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(&format!("{:.16e}", v));
    }
    s.push(']');
    s
}

/// Formats a scaler as JSON
fn scaler_json(sc: &MinMaxScaler) -> String {
    format!("{{\"mins\": {}, \"ranges\": {}}}", float_list(&sc.mins), float_list(&sc.ranges))
}

/// Parses a scaler from JSON
fn scaler_from_json(v: &serde_json::Value) -> Result<MinMaxScaler, NetworkError> {
    let bad = |m: &str| NetworkError::BadCheckpoint(m.to_string());
    let list = |key: &str| -> Result<Vec<f64>, NetworkError> {
        v[key]
            .as_array()
            .ok_or_else(|| bad(&format!("missing scaler field {}", key)))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| bad("scaler entry not a number")))
            .collect()
    };
    Ok(MinMaxScaler { mins: list("mins")?, ranges: list("ranges")? })
}

////////////////////////////////////////////////////////////////////////////////
