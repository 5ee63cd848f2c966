//! Minimal fully-connected network with softmax output, manual
//! backpropagation, and plain minibatch SGD.
//!
//! This is deliberately small: dense layers with ReLU hidden activations,
//! cross-entropy loss against a discrete target bin, and a per-example loss
//! weight (used downstream for recency weighting). With no hidden layers the
//! model degenerates to multinomial logistic regression, which doubles as the
//! linear ablation. Everything is deterministic for a fixed seed.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    BadSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target bin {got} out of range (output dim {output_dim})")]
    BadTarget { got: usize, output_dim: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("model parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Architecture of an [`Mlp`]: layer widths plus the initialization seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, output_dim: usize, seed: u64) -> Self {
        Self { input_dim, hidden_layers, output_dim, seed }
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 {
            return Err(NnError::BadSpec("input_dim must be positive".into()));
        }
        if self.output_dim < 2 {
            return Err(NnError::BadSpec("output_dim must be at least 2".into()));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(NnError::BadSpec("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Per-layer (fan_in, fan_out) pairs, input to output.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden_layers {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

/// One dense layer; `weights` is row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Fully-connected network with ReLU hidden activations and linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Builds a network with seeded uniform Xavier initialization
    /// (`±sqrt(6/(fan_in+fan_out))`) and zero biases.
    pub fn new(spec: MlpSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
                Layer { in_dim: fan_in, out_dim: fan_out, weights, bias: vec![0.0; fan_out] }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Runs the network, returning the raw output logits.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: input.len(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite("input"));
        }
        let mut scratch = Scratch::for_net(self);
        self.forward_cached(input, &mut scratch);
        Ok(scratch.activations.last().expect("at least one layer").clone())
    }

    /// Forward pass caching post-activation values for backprop.
    /// `scratch.activations[l]` holds layer `l`'s output (ReLU applied on
    /// hidden layers, raw logits on the last).
    fn forward_cached(&self, input: &[f64], scratch: &mut Scratch) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if l == 0 {
                matvec(layer, input, &mut scratch.activations[0]);
            } else {
                let (prev, rest) = scratch.activations.split_at_mut(l);
                matvec(layer, &prev[l - 1], &mut rest[0]);
            }
            if l != last {
                for v in scratch.activations[l].iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }
}

fn matvec(layer: &Layer, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(&layer.bias);
    for (o, acc) in out.iter_mut().enumerate() {
        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
        let mut sum = 0.0;
        for (w, x) in row.iter().zip(input) {
            sum += w * x;
        }
        *acc += sum;
    }
}

/// Gradients with the same shape as a network's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Per layer: (weight gradients, bias gradients).
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|v| *v = 0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|v| *v *= s);
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn shape_matches(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|((w, b), l)| {
                w.len() == l.weights.len() && b.len() == l.bias.len()
            })
    }
}

/// Reusable forward/backward buffers.
struct Scratch {
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn for_net(net: &Mlp) -> Self {
        let sizes: Vec<usize> = net.layers.iter().map(|l| l.out_dim).collect();
        Self {
            activations: sizes.iter().map(|&n| Vec::with_capacity(n)).collect(),
            deltas: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Log of `softmax(logits)[target]` via log-sum-exp, avoiding underflow.
fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits[target] - lse
}

/// Weighted cross-entropy loss of one example, evaluated by forward pass only.
/// Kept free of the backprop path so it can serve as its finite-difference
/// reference.
pub fn cross_entropy_loss(
    net: &Mlp,
    input: &[f64],
    target_bin: usize,
    weight: f64,
) -> Result<f64, NnError> {
    if target_bin >= net.output_dim() {
        return Err(NnError::BadTarget { got: target_bin, output_dim: net.output_dim() });
    }
    if weight == 0.0 {
        return Ok(0.0);
    }
    let logits = net.forward(input)?;
    Ok(-weight * log_softmax_at(&logits, target_bin))
}

/// Loss and exact analytic gradients of one weighted example.
pub fn cross_entropy_grad(
    net: &Mlp,
    input: &[f64],
    target_bin: usize,
    weight: f64,
) -> Result<(f64, Gradients), NnError> {
    let mut grads = Gradients::zeros_like(net);
    let mut scratch = Scratch::for_net(net);
    let loss = accumulate_example(net, input, target_bin, weight, &mut grads, &mut scratch)?;
    Ok((loss, grads))
}

/// Backprop for one example, adding its gradient contribution into `grads`.
fn accumulate_example(
    net: &Mlp,
    input: &[f64],
    target_bin: usize,
    weight: f64,
    grads: &mut Gradients,
    scratch: &mut Scratch,
) -> Result<f64, NnError> {
    if input.len() != net.input_dim() {
        return Err(NnError::DimensionMismatch { expected: net.input_dim(), got: input.len() });
    }
    if target_bin >= net.output_dim() {
        return Err(NnError::BadTarget { got: target_bin, output_dim: net.output_dim() });
    }
    if weight == 0.0 {
        return Ok(0.0);
    }

    net.forward_cached(input, scratch);
    let logits = scratch.activations.last().expect("at least one layer");
    let loss = -weight * log_softmax_at(logits, target_bin);

    // d loss / d logits = weight * (softmax - onehot)
    let probs = softmax(logits);
    {
        let delta_out = scratch.deltas.last_mut().expect("at least one layer");
        for (d, &p) in delta_out.iter_mut().zip(&probs) {
            *d = weight * p;
        }
        delta_out[target_bin] -= weight;
    }

    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        // dW += delta ⊗ prev_activation; db += delta
        {
            let prev: &[f64] = if l == 0 { input } else { &scratch.activations[l - 1] };
            let (dw, db) = &mut grads.layers[l];
            let delta = &scratch.deltas[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                db[o] += d;
                if d != 0.0 {
                    let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, &a) in row.iter_mut().zip(prev) {
                        *g += d * a;
                    }
                }
            }
        }
        if l > 0 {
            // delta_{l-1} = W^T delta_l, gated by ReLU (activation > 0).
            let (below, above) = scratch.deltas.split_at_mut(l);
            let prev_delta = &mut below[l - 1];
            let delta = &above[0];
            prev_delta.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d != 0.0 {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (pd, &w) in prev_delta.iter_mut().zip(row) {
                        *pd += w * d;
                    }
                }
            }
            let prev_act = &scratch.activations[l - 1];
            for (pd, &a) in prev_delta.iter_mut().zip(prev_act) {
                if a <= 0.0 {
                    *pd = 0.0;
                }
            }
        }
    }
    Ok(loss)
}

/// Applies one plain SGD update: `p -= learning_rate * g`.
pub fn sgd_step(net: &mut Mlp, grads: &Gradients, learning_rate: f64) -> Result<(), NnError> {
    if !grads.shape_matches(net) {
        return Err(NnError::DimensionMismatch {
            expected: net.param_count(),
            got: grads.layers.iter().map(|(w, b)| w.len() + b.len()).sum(),
        });
    }
    for ((dw, db), layer) in grads.layers.iter().zip(&net.layers) {
        if dw.iter().chain(db).any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite("gradient"));
        }
        let _ = layer;
    }
    for ((dw, db), layer) in grads.layers.iter().zip(&mut net.layers) {
        for (p, g) in layer.weights.iter_mut().zip(dw) {
            *p -= learning_rate * g;
        }
        for (p, g) in layer.bias.iter_mut().zip(db) {
            *p -= learning_rate * g;
        }
    }
    Ok(())
}

/// One supervised example: feature vector, target bin, and loss weight.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub target_bin: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 64, epochs: 50, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub examples: usize,
    pub epochs: usize,
    /// Mean per-example loss observed during the first epoch (pre-update).
    pub first_epoch_loss: f64,
    /// Mean per-example loss observed during the final epoch.
    pub final_epoch_loss: f64,
    pub warm_started: bool,
}

/// Trains with shuffled minibatch SGD, starting from `warm_start` when given
/// and from `net`'s parameters otherwise. Deterministic for a fixed config
/// seed: the per-epoch shuffle is the only source of randomness.
pub fn train(
    net: &Mlp,
    dataset: &[TrainSample],
    config: &TrainConfig,
    warm_start: Option<&Mlp>,
) -> Result<(Mlp, TrainReport), NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if !(config.learning_rate > 0.0) {
        return Err(NnError::BadSpec("learning_rate must be positive".into()));
    }
    if config.batch_size == 0 {
        return Err(NnError::BadSpec("batch_size must be positive".into()));
    }
    let mut model = match warm_start {
        Some(w) => {
            if w.spec.layer_dims() != net.spec.layer_dims() {
                return Err(NnError::BadSpec("warm-start dims differ from target spec".into()));
            }
            w.clone()
        }
        None => net.clone(),
    };
    for s in dataset {
        if s.input.len() != model.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: model.input_dim(),
                got: s.input.len(),
            });
        }
        if s.target_bin >= model.output_dim() {
            return Err(NnError::BadTarget { got: s.target_bin, output_dim: model.output_dim() });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut scratch = Scratch::for_net(&model);
    let mut first_epoch_loss = 0.0;
    let mut last_epoch_loss = 0.0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            for &i in batch {
                let s = &dataset[i];
                epoch_loss +=
                    accumulate_example(&model, &s.input, s.target_bin, s.weight, &mut grads, &mut scratch)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(&mut model, &grads, config.learning_rate)?;
        }
        let mean = epoch_loss / dataset.len() as f64;
        if epoch == 0 {
            first_epoch_loss = mean;
        }
        last_epoch_loss = mean;
    }

    Ok((
        model,
        TrainReport {
            examples: dataset.len(),
            epochs: config.epochs,
            first_epoch_loss,
            final_epoch_loss: last_epoch_loss,
            warm_started: warm_start.is_some(),
        },
    ))
}

// ---------------------------------------------------------------------------
// Serialization: versioned plain-text format. Floats are written with Rust's
// shortest round-trip formatting, so save/load is bit-exact.
// ---------------------------------------------------------------------------

const MODEL_HEADER: &str = "mlp v1";

pub fn save_model(net: &Mlp) -> String {
    let mut out = String::new();
    out.push_str(MODEL_HEADER);
    out.push('\n');
    out.push_str("dims");
    out.push_str(&format!(" {}", net.spec.input_dim));
    for w in &net.spec.hidden_layers {
        out.push_str(&format!(" {w}"));
    }
    out.push_str(&format!(" {}\n", net.spec.output_dim));
    out.push_str(&format!("seed {}\n", net.spec.seed));
    for (i, layer) in net.layers.iter().enumerate() {
        out.push_str(&format!("layer {i} weights"));
        for w in &layer.weights {
            out.push_str(&format!(" {w}"));
        }
        out.push('\n');
        out.push_str(&format!("layer {i} bias"));
        for b in &layer.bias {
            out.push_str(&format!(" {b}"));
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn load_model(text: &str) -> Result<Mlp, NnError> {
    let err = |line: usize, msg: &str| NnError::Parse { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate();

    let (ln, header) = lines.next().ok_or_else(|| err(0, "empty model file"))?;
    if header.trim() != MODEL_HEADER {
        return Err(err(ln + 1, "unrecognized model header"));
    }

    let (ln, dims_line) = lines.next().ok_or_else(|| err(1, "missing dims line"))?;
    let mut dims_it = dims_line.split_whitespace();
    if dims_it.next() != Some("dims") {
        return Err(err(ln + 1, "expected dims line"));
    }
    let dims: Vec<usize> = dims_it
        .map(|t| t.parse().map_err(|_| err(ln + 1, "bad dimension")))
        .collect::<Result<_, _>>()?;
    if dims.len() < 2 {
        return Err(err(ln + 1, "need at least input and output dims"));
    }

    let (ln, seed_line) = lines.next().ok_or_else(|| err(2, "missing seed line"))?;
    let seed: u64 = seed_line
        .strip_prefix("seed ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| err(ln + 1, "expected seed line"))?;

    let spec = MlpSpec::new(
        dims[0],
        dims[1..dims.len() - 1].to_vec(),
        *dims.last().expect("nonempty"),
        seed,
    );
    spec.validate()?;

    let mut layers = Vec::new();
    for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        let (ln, wline) = lines.next().ok_or_else(|| err(0, "missing weights line"))?;
        let prefix = format!("layer {l} weights");
        let wbody = wline
            .strip_prefix(&prefix)
            .ok_or_else(|| err(ln + 1, "expected layer weights line"))?;
        let weights: Vec<f64> = wbody
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(ln + 1, "bad weight value")))
            .collect::<Result<_, _>>()?;
        if weights.len() != fan_in * fan_out {
            return Err(err(ln + 1, "wrong weight count"));
        }
        let (ln, bline) = lines.next().ok_or_else(|| err(0, "missing bias line"))?;
        let prefix = format!("layer {l} bias");
        let bbody =
            bline.strip_prefix(&prefix).ok_or_else(|| err(ln + 1, "expected layer bias line"))?;
        let bias: Vec<f64> = bbody
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(ln + 1, "bad bias value")))
            .collect::<Result<_, _>>()?;
        if bias.len() != fan_out {
            return Err(err(ln + 1, "wrong bias count"));
        }
        layers.push(Layer { in_dim: fan_in, out_dim: fan_out, weights, bias });
    }
    let (ln, endline) = lines.next().ok_or_else(|| err(0, "missing end marker"))?;
    if endline.trim() != "end" {
        return Err(err(ln + 1, "expected end marker"));
    }
    Ok(Mlp { spec, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_random_net(rng: &mut ChaCha8Rng) -> Mlp {
        let input = rng.gen_range(1..=8);
        let n_hidden = rng.gen_range(0..=2);
        let hidden: Vec<usize> = (0..n_hidden).map(|_| rng.gen_range(1..=8)).collect();
        let output = rng.gen_range(2..=8);
        Mlp::new(MlpSpec::new(input, hidden, output, rng.gen())).unwrap()
    }

    #[test]
    fn forward_zero_weights_gives_zero_logits() {
        let mut net = Mlp::new(MlpSpec::new(3, vec![4], 2, 1)).unwrap();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let out = net.forward(&[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_identity_single_weight() {
        // 1x2 net with first output wired straight through.
        let mut net = Mlp::new(MlpSpec::new(1, vec![], 2, 1)).unwrap();
        net.layers[0].weights = vec![1.0, 0.0];
        net.layers[0].bias = vec![0.0, 0.0];
        let out = net.forward(&[3.0]).unwrap();
        assert_eq!(out[0], 3.0);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Mlp::new(MlpSpec::new(5, vec![7], 3, 42)).unwrap();
        let x = [0.1, -0.2, 0.3, 0.4, -0.5];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let net2 = Mlp::new(MlpSpec::new(5, vec![7], 3, 42)).unwrap();
        assert_eq!(net, net2);
    }

    #[test]
    fn forward_rejects_wrong_dims() {
        let net = Mlp::new(MlpSpec::new(3, vec![], 2, 0)).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(NnError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn softmax_known_values() {
        let u = softmax(&[0.0, 0.0, 0.0]);
        for p in &u {
            assert_relative_eq!(*p, 1.0 / 3.0, max_relative = 1e-12);
        }
        let s = softmax(&[1000.0, 0.0]);
        assert_eq!(s[0], 1.0);
        assert!(s[1] >= 0.0 && s[1] < 1e-300);
        let t = softmax(&[2f64.ln(), 0.0]);
        assert_relative_eq!(t[0], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(t[1], 1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn softmax_is_valid_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..30);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let p = softmax(&logits);
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_output_loss_is_ln_output_dim() {
        let mut net = Mlp::new(MlpSpec::new(4, vec![], 21, 3)).unwrap();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let (loss, _) = cross_entropy_grad(&net, &[1.0, 2.0, 3.0, 4.0], 5, 1.0).unwrap();
        assert_relative_eq!(loss, 21f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn zero_weight_gives_zero_loss_and_grads() {
        let net = Mlp::new(MlpSpec::new(3, vec![5], 4, 9)).unwrap();
        let (loss, grads) = cross_entropy_grad(&net, &[1.0, -2.0, 0.5], 2, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        for (w, b) in &grads.layers {
            assert!(w.iter().all(|&g| g == 0.0));
            assert!(b.iter().all(|&g| g == 0.0));
        }
    }

    /// Central finite differences against the analytic gradients. The loss
    /// reference goes through the plain forward pass only.
    fn gradient_check(net: &Mlp, input: &[f64], target: usize, weight: f64) {
        let eps = 1e-5;
        let (_, grads) = cross_entropy_grad(net, input, target, weight).unwrap();
        for l in 0..net.layers.len() {
            for (which, count) in [(0usize, net.layers[l].weights.len()), (1, net.layers[l].bias.len())] {
                for k in 0..count {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    {
                        let (p, m) = if which == 0 {
                            (&mut plus.layers[l].weights[k], &mut minus.layers[l].weights[k])
                        } else {
                            (&mut plus.layers[l].bias[k], &mut minus.layers[l].bias[k])
                        };
                        *p += eps;
                        *m -= eps;
                    }
                    let lp = cross_entropy_loss(&plus, input, target, weight).unwrap();
                    let lm = cross_entropy_loss(&minus, input, target, weight).unwrap();
                    let numeric = (lp - lm) / (2.0 * eps);
                    let analytic = if which == 0 {
                        grads.layers[l].0[k]
                    } else {
                        grads.layers[l].1[k]
                    };
                    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
                    let rel = (analytic - numeric).abs() / denom;
                    assert!(
                        rel < 1e-4,
                        "layer {l} param {k}: analytic {analytic} vs numeric {numeric} (rel {rel})"
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..10 {
            let net = small_random_net(&mut rng);
            let input: Vec<f64> =
                (0..net.input_dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let target = rng.gen_range(0..net.output_dim());
            let weight = rng.gen_range(0.5..2.0);
            gradient_check(&net, &input, target, weight);
        }
    }

    #[test]
    fn sgd_step_known_values() {
        let mut net = Mlp::new(MlpSpec::new(1, vec![], 2, 0)).unwrap();
        net.layers[0].weights = vec![1.0, 0.0];
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].0[0] = 0.5;
        sgd_step(&mut net, &grads, 0.1).unwrap();
        assert_relative_eq!(net.layers[0].weights[0], 0.95);

        // lr = 0 leaves the net unchanged
        let before = net.clone();
        sgd_step(&mut net, &grads, 0.0).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_two_steps_equal_one_at_double_lr() {
        let base = Mlp::new(MlpSpec::new(2, vec![3], 2, 5)).unwrap();
        let mut grads = Gradients::zeros_like(&base);
        let mut v = 0.1;
        for (w, b) in &mut grads.layers {
            for g in w.iter_mut().chain(b.iter_mut()) {
                *g = v;
                v += 0.05;
            }
        }
        let mut twice = base.clone();
        sgd_step(&mut twice, &grads, 0.01).unwrap();
        sgd_step(&mut twice, &grads, 0.01).unwrap();
        let mut once = base.clone();
        sgd_step(&mut once, &grads, 0.02).unwrap();
        for (a, b) in twice.layers.iter().zip(&once.layers) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_relative_eq!(x, y, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut net = Mlp::new(MlpSpec::new(1, vec![], 2, 0)).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].0[0] = f64::NAN;
        assert!(matches!(sgd_step(&mut net, &grads, 0.1), Err(NnError::NonFinite(_))));
    }

    fn one_hot_dataset() -> Vec<TrainSample> {
        // Target is a fixed permutation of the one-hot input index.
        let perm = [2usize, 0, 3, 1, 4, 5];
        (0..6)
            .flat_map(|i| {
                let mut input = vec![0.0; 6];
                input[i] = 1.0;
                std::iter::repeat(TrainSample { input, target_bin: perm[i], weight: 1.0 }).take(4)
            })
            .collect()
    }

    #[test]
    fn train_learns_one_hot_mapping() {
        let dataset = one_hot_dataset();
        let net = Mlp::new(MlpSpec::new(6, vec![12], 6, 11)).unwrap();
        let cfg = TrainConfig { learning_rate: 0.3, batch_size: 8, epochs: 200, seed: 1 };
        let (model, report) = train(&net, &dataset, &cfg, None).unwrap();
        let mut correct = 0;
        for s in &dataset {
            let logits = model.forward(&s.input).unwrap();
            let argmax = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == s.target_bin {
                correct += 1;
            }
        }
        assert!(correct as f64 / dataset.len() as f64 >= 0.99, "accuracy {correct}/{}", dataset.len());
        assert!(report.final_epoch_loss < report.first_epoch_loss);
    }

    #[test]
    fn train_is_deterministic_and_warm_start_takes_precedence() {
        let dataset = one_hot_dataset();
        let net = Mlp::new(MlpSpec::new(6, vec![8], 6, 21)).unwrap();
        let cfg = TrainConfig { learning_rate: 0.1, batch_size: 4, epochs: 5, seed: 3 };
        let (a, _) = train(&net, &dataset, &cfg, None).unwrap();
        let (b, _) = train(&net, &dataset, &cfg, None).unwrap();
        assert_eq!(a, b);

        // Warm start: epoch count 0 keeps exactly the warm-start parameters.
        let warm = a.clone();
        let cfg0 = TrainConfig { epochs: 0, ..cfg };
        let (restarted, report) = train(&net, &dataset, &cfg0, Some(&warm)).unwrap();
        assert_eq!(restarted, warm);
        assert!(report.warm_started);
    }

    #[test]
    fn train_rejects_empty_dataset() {
        let net = Mlp::new(MlpSpec::new(2, vec![], 2, 0)).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&net, &[], &cfg, None), Err(NnError::EmptyDataset)));
    }

    #[test]
    fn linear_spec_has_single_layer() {
        let net = Mlp::new(MlpSpec::new(22, vec![], 21, 0)).unwrap();
        assert_eq!(net.layers().len(), 1);
        assert_eq!(net.param_count(), 22 * 21 + 21);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let net = small_random_net(&mut rng);
            let text = save_model(&net);
            let back = load_model(&text).unwrap();
            assert_eq!(net, back);
            assert_eq!(save_model(&back), text);
        }
    }

    #[test]
    fn load_model_reports_line_numbers() {
        let err = load_model("mlp v1\ndims 2 2\nseed 0\nlayer 0 weights 1 2 x 4\n").unwrap_err();
        match err {
            NnError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
