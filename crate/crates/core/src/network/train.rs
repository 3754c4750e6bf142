use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, DenseNet};
use crate::dataset::{one_vs_rest_targets, Dataset, CLASSES};
use crate::error::{Error, Result};
use crate::nodeset::NodeSet;

/// Adam and stopping parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Training stops after the first epoch whose accuracy reaches this.
    pub target_accuracy: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            target_accuracy: 0.95,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(format!("train config: {m}")));
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if self.target_accuracy.is_nan() || self.target_accuracy > 1.0 {
            return bad("target accuracy must not exceed 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and max epochs must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("learning rate and epsilon must be positive");
        }
        Ok(())
    }
}

/// Row-major `[samples x outputs]` regression targets in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub outputs: usize,
    pub values: Vec<f64>,
}

impl Targets {
    /// `+1` at the label's output, `-1` elsewhere.
    pub fn one_hot(data: &Dataset) -> Self {
        let mut values = vec![-1.0; data.len() * CLASSES];
        for (i, l) in data.labels().enumerate() {
            values[i * CLASSES + l as usize] = 1.0;
        }
        Targets {
            outputs: CLASSES,
            values,
        }
    }

    /// Single-output targets for a numeral detector.
    pub fn one_vs_rest(data: &Dataset, numeral: usize) -> Result<Self> {
        Ok(Targets {
            outputs: 1,
            values: one_vs_rest_targets(data, numeral)?,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.outputs..(i + 1) * self.outputs]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.outputs
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: DenseNet,
    pub history: Vec<EpochStats>,
    pub reached_target: bool,
}

/// Gradients of the mean squared error, laid out like the network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
        }
    }

    fn clear(&mut self) {
        for v in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            v.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

struct Scratch {
    hidden: Vec<f64>,
    out: Vec<f64>,
    d_out: Vec<f64>,
    d_hidden: Vec<f64>,
}

impl Scratch {
    fn new(net: &DenseNet) -> Self {
        Scratch {
            hidden: vec![0.0; net.hidden],
            out: vec![0.0; net.outputs],
            d_out: vec![0.0; net.outputs],
            d_hidden: vec![0.0; net.hidden],
        }
    }
}

/// Accumulates the batch-mean MSE gradient into `grads` and returns the
/// batch loss `mean((tanh(out) - target)^2)` over samples and outputs.
fn accumulate(net: &DenseNet, batch: &[(&[f64], &[f64])], grads: &mut Gradients, s: &mut Scratch) -> f64 {
    let scale = 2.0 / (batch.len() * net.outputs) as f64;
    let mut loss = 0.0;
    for &(x, t) in batch {
        net.forward_into(x, NodeSet::EMPTY, &mut s.hidden, &mut s.out);
        for (k, &target) in t.iter().enumerate() {
            let err = s.out[k] - target;
            loss += err * err;
            s.d_out[k] = scale * err * (1.0 - s.out[k] * s.out[k]);
        }
        for j in 0..net.hidden {
            let mut acc = 0.0;
            for k in 0..net.outputs {
                acc += s.d_out[k] * net.w2[k * net.hidden + j];
            }
            s.d_hidden[j] = acc * (1.0 - s.hidden[j] * s.hidden[j]);
        }
        for k in 0..net.outputs {
            grads.b2[k] += s.d_out[k];
            let row = &mut grads.w2[k * net.hidden..(k + 1) * net.hidden];
            for (g, h) in row.iter_mut().zip(&s.hidden) {
                *g += s.d_out[k] * h;
            }
        }
        for j in 0..net.hidden {
            let d = s.d_hidden[j];
            grads.b1[j] += d;
            let row = &mut grads.w1[j * net.inputs..(j + 1) * net.inputs];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += d * xi;
            }
        }
    }
    loss / (batch.len() * net.outputs) as f64
}

/// Mean squared error over the given samples and its analytic gradient.
pub fn loss_and_gradient(net: &DenseNet, inputs: &[&[f64]], targets: &[&[f64]]) -> (f64, Gradients) {
    let batch: Vec<_> = inputs.iter().copied().zip(targets.iter().copied()).collect();
    let mut grads = Gradients::zeros_like(net);
    let mut scratch = Scratch::new(net);
    let loss = accumulate(net, &batch, &mut grads, &mut scratch);
    (loss, grads)
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    fn new(net: &DenseNet) -> Self {
        Adam {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
        }
    }

    fn update(&mut self, net: &mut DenseNet, g: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let groups = [
            (&mut net.w1, &g.w1, &mut self.m.w1, &mut self.v.w1),
            (&mut net.b1, &g.b1, &mut self.m.b1, &mut self.v.b1),
            (&mut net.w2, &g.w2, &mut self.m.w2, &mut self.v.w2),
            (&mut net.b2, &g.b2, &mut self.m.b2, &mut self.v.b2),
        ];
        for (p, g, m, v) in groups {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Fraction of samples whose output agrees with the target: argmax match for
/// multi-output networks, sign match for single-output detectors.
fn target_accuracy(net: &DenseNet, data: &Dataset, targets: &Targets) -> f64 {
    let hits: usize = data
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut hidden = vec![0.0; net.hidden];
            let mut out = vec![0.0; net.outputs];
            net.forward_into(&s.pixels, NodeSet::EMPTY, &mut hidden, &mut out);
            let t = targets.row(i);
            let hit = if net.outputs == 1 {
                (out[0] > 0.0) == (t[0] > 0.0)
            } else {
                argmax(&out) == argmax(t)
            };
            hit as usize
        })
        .sum();
    hits as f64 / data.len() as f64
}

/// Trains with Adam on mean squared error until the training accuracy
/// reaches `config.target_accuracy` or `config.max_epochs` is exhausted.
/// Deterministic for a given seed.
pub fn train(net: DenseNet, data: &Dataset, targets: &Targets, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    if targets.outputs != net.outputs || targets.len() != data.len() {
        return Err(Error::Shape(format!(
            "targets are {}x{}, expected {}x{}",
            targets.len(),
            targets.outputs,
            data.len(),
            net.outputs
        )));
    }
    if targets.values.iter().any(|t| !(-1.0..=1.0).contains(t)) {
        return Err(Error::Argument("targets must lie in [-1, 1]".into()));
    }
    if data.samples()[0].pixels.len() != net.inputs {
        return Err(Error::Shape("sample width does not match network inputs".into()));
    }

    let mut net = net;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = Adam::new(&net);
    let mut grads = Gradients::zeros_like(&net);
    let mut scratch = Scratch::new(&net);
    let mut history = Vec::new();
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(
                chunk
                    .iter()
                    .map(|&i| (data.samples()[i].pixels.as_slice(), targets.row(i))),
            );
            grads.clear();
            let loss = accumulate(&net, &batch, &mut grads, &mut scratch);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            adam.update(&mut net, &grads, config);
            epoch_loss += loss;
            batches += 1;
        }
        let accuracy = target_accuracy(&net, data, targets);
        let loss = epoch_loss / batches as f64;
        log::info!("epoch {epoch}: loss {loss:.5}, accuracy {accuracy:.4}");
        history.push(EpochStats { epoch, loss, accuracy });
        if accuracy >= config.target_accuracy {
            return Ok(TrainOutcome {
                net,
                history,
                reached_target: true,
            });
        }
    }
    Ok(TrainOutcome {
        net,
        history,
        reached_target: false,
    })
}
