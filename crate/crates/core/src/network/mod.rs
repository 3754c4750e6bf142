//! Two-layer tanh networks: the full classifier, the one-vs-rest
//! sub-networks, and the composite assembled from them.
//!
//! Both layers use summation followed by `tanh`. A knocked-out hidden node is
//! forced to exactly `0.0` after activation, which makes it equivalent to
//! zeroing the node's incoming and outgoing weights.

mod composite;
mod train;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use composite::build_composite;
pub use train::{loss_and_gradient, train, EpochStats, Gradients, Targets, TrainConfig, TrainOutcome};

use crate::dataset::{check_numeral, Dataset};
use crate::error::{Error, Result};
use crate::nodeset::NodeSet;

/// Hidden nodes forced to zero during the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnockoutMask(pub NodeSet);

impl KnockoutMask {
    pub const NONE: KnockoutMask = KnockoutMask(NodeSet::EMPTY);

    pub fn nodes(self) -> NodeSet {
        self.0
    }
}

impl From<NodeSet> for KnockoutMask {
    fn from(set: NodeSet) -> Self {
        KnockoutMask(set)
    }
}

/// Dense `inputs -> hidden -> outputs` network with tanh on both layers.
/// Weight matrices are row-major: `w1[j * inputs + i]` connects input `i` to
/// hidden node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub(crate) inputs: usize,
    pub(crate) hidden: usize,
    pub(crate) outputs: usize,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub hidden: Vec<f64>,
    pub outputs: Vec<f64>,
    pub predicted: usize,
}

impl DenseNet {
    pub fn from_parts(
        inputs: usize,
        hidden: usize,
        outputs: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        let net = DenseNet {
            inputs,
            hidden,
            outputs,
            w1,
            b1,
            w2,
            b2,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        DenseNet {
            inputs,
            hidden,
            outputs,
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; outputs * hidden],
            b2: vec![0.0; outputs],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization of all weights and biases.
    pub fn random(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let w1 = fill(hidden * inputs, inputs);
        let b1 = fill(hidden, inputs);
        let w2 = fill(outputs * hidden, hidden);
        let b2 = fill(outputs, hidden);
        DenseNet {
            inputs,
            hidden,
            outputs,
            w1,
            b1,
            w2,
            b2,
        }
    }

    fn validate(&self) -> Result<()> {
        let checks = [
            ("w1", self.w1.len(), self.hidden * self.inputs),
            ("b1", self.b1.len(), self.hidden),
            ("w2", self.w2.len(), self.outputs * self.hidden),
            ("b2", self.b2.len(), self.outputs),
        ];
        if self.hidden == 0 || self.outputs == 0 || self.inputs == 0 {
            return Err(Error::Shape("network layers must be nonempty".into()));
        }
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Shape(format!("{name} has {got} entries, expected {want}")));
            }
        }
        let all = self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2);
        if all.clone().any(|w| !w.is_finite()) {
            return Err(Error::Data("network contains non-finite weights".into()));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn b2(&self) -> &[f64] {
        &self.b2
    }

    pub fn forward(&self, x: &[f64], mask: KnockoutMask) -> Result<ForwardOutput> {
        if x.len() != self.inputs {
            return Err(Error::Shape(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.inputs
            )));
        }
        mask.nodes().check_within(self.hidden)?;
        let mut hidden = vec![0.0; self.hidden];
        let mut outputs = vec![0.0; self.outputs];
        self.forward_into(x, mask.nodes(), &mut hidden, &mut outputs);
        let predicted = argmax(&outputs);
        Ok(ForwardOutput {
            hidden,
            outputs,
            predicted,
        })
    }

    /// Unchecked forward pass into caller-provided buffers.
    pub(crate) fn forward_into(&self, x: &[f64], mask: NodeSet, hidden: &mut [f64], out: &mut [f64]) {
        for (j, h) in hidden.iter_mut().enumerate() {
            if mask.contains(j) {
                *h = 0.0;
                continue;
            }
            let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
            *h = (self.b1[j] + dot(row, x)).tanh();
        }
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            *o = (self.b2[k] + dot(row, hidden)).tanh();
        }
    }

    /// Second layer only: outputs from recorded (unmasked) hidden
    /// activations with `mask` applied. Matches [`forward`](Self::forward)
    /// bit for bit.
    pub fn readout(&self, hidden: &[f64], mask: NodeSet, outputs: &mut [f64]) {
        debug_assert_eq!(hidden.len(), self.hidden);
        let masked: Vec<f64> = hidden
            .iter()
            .enumerate()
            .map(|(j, &h)| if mask.contains(j) { 0.0 } else { h })
            .collect();
        for (k, o) in outputs.iter_mut().enumerate() {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            *o = (self.b2[k] + dot(row, &masked)).tanh();
        }
    }

    /// Predicted class per sample, in dataset order.
    pub fn predict(&self, data: &Dataset, mask: KnockoutMask) -> Result<Vec<ForwardOutput>> {
        mask.nodes().check_within(self.hidden)?;
        if let Some(s) = data.samples().first() {
            if s.pixels.len() != self.inputs {
                return Err(Error::Shape(format!(
                    "samples have {} pixels, network expects {}",
                    s.pixels.len(),
                    self.inputs
                )));
            }
        }
        Ok(data
            .samples()
            .par_iter()
            .map(|s| {
                let mut hidden = vec![0.0; self.hidden];
                let mut outputs = vec![0.0; self.outputs];
                self.forward_into(&s.pixels, mask.nodes(), &mut hidden, &mut outputs);
                let predicted = argmax(&outputs);
                ForwardOutput {
                    hidden,
                    outputs,
                    predicted,
                }
            })
            .collect())
    }

    /// Without `numeral`: fraction of samples classified correctly.
    ///
    /// With `numeral`: one-vs-rest agreement between "predicted as numeral"
    /// and "labelled as numeral". A single-output network predicts the
    /// numeral when its output is positive.
    pub fn accuracy(&self, data: &Dataset, mask: KnockoutMask, numeral: Option<usize>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Argument("accuracy of an empty dataset".into()));
        }
        if let Some(c) = numeral {
            check_numeral(c)?;
        } else if self.outputs == 1 {
            return Err(Error::Argument(
                "overall accuracy needs a multi-output network; pass a numeral".into(),
            ));
        }
        let outs = self.predict(data, mask)?;
        let hits = outs
            .iter()
            .zip(data.labels())
            .filter(|(o, label)| {
                let label = *label as usize;
                match numeral {
                    None => o.predicted == label,
                    Some(c) => {
                        let says = if self.outputs == 1 {
                            o.outputs[0] > 0.0
                        } else {
                            o.predicted == c
                        };
                        says == (label == c)
                    }
                }
            })
            .count();
        Ok(hits as f64 / data.len() as f64)
    }

    /// Post-mask hidden activations, labels and predictions for every sample.
    pub fn record_trace(&self, data: &Dataset, mask: KnockoutMask) -> Result<ActivationTrace> {
        let outs = self.predict(data, mask)?;
        let mut activations = Vec::with_capacity(outs.len() * self.hidden);
        let mut predicted = Vec::with_capacity(outs.len());
        for o in &outs {
            activations.extend_from_slice(&o.hidden);
            predicted.push(o.predicted as u8);
        }
        Ok(ActivationTrace {
            hidden: self.hidden,
            activations,
            labels: data.labels().collect(),
            predicted,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_VERSION,
            hidden: self.hidden,
            outputs: self.outputs,
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_VERSION {
            return Err(Error::Data(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        if file.hidden == 0 || !file.w1.len().is_multiple_of(file.hidden) {
            return Err(Error::Shape(format!(
                "w1 length {} is not a multiple of hidden={}",
                file.w1.len(),
                file.hidden
            )));
        }
        let inputs = file.w1.len() / file.hidden;
        DenseNet::from_parts(inputs, file.hidden, file.outputs, file.w1, file.b1, file.w2, file.b2)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DenseNet::from_json(&text)
    }
}

const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    hidden: usize,
    outputs: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Continuous hidden activations for a set of evaluated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub hidden: usize,
    /// Row-major `[samples x hidden]`.
    pub activations: Vec<f64>,
    pub labels: Vec<u8>,
    pub predicted: Vec<u8>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.activations[i * self.hidden..(i + 1) * self.hidden]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.activations[i * self.hidden + j]).collect()
    }

    /// CSV with header `sample,label,predicted,h0,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample".to_string(), "label".into(), "predicted".into()];
        header.extend((0..self.hidden).map(|j| format!("h{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string(), self.labels[i].to_string(), self.predicted[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let hidden = headers.iter().filter(|h| h.starts_with('h')).count();
        if headers.len() != hidden + 3 {
            return Err(Error::Data(format!("unexpected trace header {headers:?}")));
        }
        let mut trace = ActivationTrace {
            hidden,
            activations: Vec::new(),
            labels: Vec::new(),
            predicted: Vec::new(),
        };
        for rec in r.records() {
            let rec = rec?;
            let parse_u8 = |s: &str| {
                s.parse::<u8>()
                    .map_err(|e| Error::Data(format!("bad integer `{s}`: {e}")))
            };
            trace.labels.push(parse_u8(&rec[1])?);
            trace.predicted.push(parse_u8(&rec[2])?);
            for j in 0..hidden {
                let v: f64 = rec[3 + j]
                    .parse()
                    .map_err(|e| Error::Data(format!("bad activation `{}`: {e}", &rec[3 + j])))?;
                trace.activations.push(v);
            }
        }
        Ok(trace)
    }
}
