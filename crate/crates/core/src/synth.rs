//! Synthetic binary channels with planted relays and known ground truth.
//!
//! A channel draws the input bit, derives each hidden node from it (or from
//! independent noise), and computes the output from the hidden bits. The
//! generated [`BinnedTrace`] encodes the input and output as numeral 0:
//! label/prediction 0 when the bit is set, 1 otherwise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::BinnedTrace;
use crate::error::{Error, Result};
use crate::infotheory::{set_information, Bits, Column, RelayKernel};
use crate::nodeset::NodeSet;

/// Largest layer [`exact_truth`] accepts.
pub const EXACT_TRUTH_LIMIT: usize = 12;
/// Latent bits beyond this make the exact table too large.
pub const EXACT_LATENT_LIMIT: usize = 24;
const BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Copy,
    /// The input with an independent flip.
    NoisyCopy {
        flip: f64,
    },
    /// Independent of everything; set with probability `p`.
    Noise {
        p: f64,
    },
    /// The input xor the listed copy/noisy-copy/noise nodes.
    Xor {
        with: Vec<usize>,
    },
    /// Identical to another non-duplicate node.
    Duplicate {
        of: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum OutputRule {
    Node {
        node: usize,
    },
    Xor {
        nodes: Vec<usize>,
    },
    /// Odd number of nodes.
    Majority {
        nodes: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub nodes: Vec<NodeKind>,
    pub output: OutputRule,
    /// Probability that the input bit is set.
    #[serde(default = "fair")]
    pub input_p: f64,
}

fn fair() -> f64 {
    0.5
}

fn probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl ChannelSpec {
    pub fn hidden(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let bad = |m: String| Err(Error::Validation(m));
        if n == 0 || n > 30 {
            return bad(format!("a channel needs 1..=30 hidden nodes, got {n}"));
        }
        if !probability(self.input_p) {
            return bad(format!("input probability {} outside [0, 1]", self.input_p));
        }
        for (i, kind) in self.nodes.iter().enumerate() {
            match kind {
                NodeKind::Copy => {}
                NodeKind::NoisyCopy { flip } if !probability(*flip) => {
                    return bad(format!("node {i}: flip {flip} outside [0, 1]"))
                }
                NodeKind::Noise { p } if !probability(*p) => {
                    return bad(format!("node {i}: noise probability {p} outside [0, 1]"))
                }
                NodeKind::Xor { with } => {
                    for &j in with {
                        if j >= n || j == i || !self.is_root(j) {
                            return bad(format!("node {i}: xor operand {j} is not a copy or noise node"));
                        }
                    }
                }
                NodeKind::Duplicate { of }
                    if *of >= n || *of == i || matches!(self.nodes[*of], NodeKind::Duplicate { .. }) =>
                {
                    return bad(format!("node {i}: cannot duplicate node {of}"));
                }
                _ => {}
            }
        }
        let refs: &[usize] = match &self.output {
            OutputRule::Node { node } => std::slice::from_ref(node),
            OutputRule::Xor { nodes } => nodes,
            OutputRule::Majority { nodes } => {
                if nodes.len() % 2 == 0 {
                    return bad("majority output needs an odd number of nodes".into());
                }
                nodes
            }
        };
        if refs.is_empty() || refs.iter().any(|&j| j >= n) {
            return bad(format!("output rule references nodes outside the layer: {refs:?}"));
        }
        Ok(())
    }

    fn is_root(&self, j: usize) -> bool {
        matches!(
            self.nodes[j],
            NodeKind::Copy | NodeKind::NoisyCopy { .. } | NodeKind::Noise { .. }
        )
    }

    /// Nodes that duplicate another node, with the node they copy.
    pub fn copy_pairs(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, k)| match k {
                NodeKind::Duplicate { of } => Some((*of, i)),
                _ => None,
            })
            .collect()
    }

    /// Independent random bits: the input first, then one per noisy or
    /// noise node, each with its probability of being set.
    fn latent_probabilities(&self) -> Vec<f64> {
        let mut p = vec![self.input_p];
        for k in &self.nodes {
            match k {
                NodeKind::NoisyCopy { flip } => p.push(*flip),
                NodeKind::Noise { p: q } => p.push(*q),
                _ => {}
            }
        }
        p
    }

    /// Hidden word and output bit for one latent draw (`latent[0]` is the input).
    fn realize(&self, latent: &[bool]) -> (u32, bool) {
        let x = latent[0];
        let mut bits = vec![false; self.nodes.len()];
        let mut next = 1;
        for (i, k) in self.nodes.iter().enumerate() {
            match k {
                NodeKind::Copy => bits[i] = x,
                NodeKind::NoisyCopy { .. } => {
                    bits[i] = x ^ latent[next];
                    next += 1;
                }
                NodeKind::Noise { .. } => {
                    bits[i] = latent[next];
                    next += 1;
                }
                _ => {}
            }
        }
        for (i, k) in self.nodes.iter().enumerate() {
            if let NodeKind::Xor { with } = k {
                bits[i] = with.iter().fold(x, |acc, &j| acc ^ bits[j]);
            }
        }
        for (i, k) in self.nodes.iter().enumerate() {
            if let NodeKind::Duplicate { of } = k {
                bits[i] = bits[*of];
            }
        }
        let out = match &self.output {
            OutputRule::Node { node } => bits[*node],
            OutputRule::Xor { nodes } => nodes.iter().fold(false, |a, &j| a ^ bits[j]),
            OutputRule::Majority { nodes } => 2 * nodes.iter().filter(|&&j| bits[j]).count() > nodes.len(),
        };
        let word = bits.iter().enumerate().fold(0u32, |w, (i, &b)| w | (b as u32) << i);
        (word, out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: ChannelSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn numeral_zero(bit: bool) -> u8 {
    if bit {
        0
    } else {
        1
    }
}

/// `samples` i.i.d. draws. Blocks of samples use separate ChaCha streams of
/// the same seed, so the result does not depend on the thread count.
pub fn generate(spec: &ChannelSpec, samples: usize, seed: u64) -> Result<BinnedTrace> {
    spec.validate()?;
    if samples == 0 {
        return Err(Error::Validation("sample count must be positive".into()));
    }
    let probs = spec.latent_probabilities();
    let blocks: Vec<Vec<(u32, bool, bool)>> = (0..samples.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = BLOCK.min(samples - b * BLOCK);
            let mut latent = vec![false; probs.len()];
            (0..len)
                .map(|_| {
                    for (l, &p) in latent.iter_mut().zip(&probs) {
                        *l = rng.random_bool(p);
                    }
                    let (word, out) = spec.realize(&latent);
                    (word, latent[0], out)
                })
                .collect()
        })
        .collect();
    let rows: Vec<_> = blocks.into_iter().flatten().collect();
    BinnedTrace::new(
        spec.hidden(),
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| numeral_zero(r.1)).collect(),
        rows.iter().map(|r| numeral_zero(r.2)).collect(),
    )
}

/// The exact joint distribution as a weighted trace: one row per latent
/// assignment with nonzero probability, weighted by that probability.
pub fn generate_exact(spec: &ChannelSpec) -> Result<BinnedTrace> {
    spec.validate()?;
    let probs = spec.latent_probabilities();
    if probs.len() > EXACT_LATENT_LIMIT {
        return Err(Error::Refused(format!(
            "{} latent bits exceed the exact-table limit of {EXACT_LATENT_LIMIT}",
            probs.len()
        )));
    }
    let mut words = Vec::new();
    let mut labels = Vec::new();
    let mut predicted = Vec::new();
    let mut weights = Vec::new();
    let mut latent = vec![false; probs.len()];
    for state in 0u32..1 << probs.len() {
        let mut w = 1.0;
        for (k, (l, &p)) in latent.iter_mut().zip(&probs).enumerate() {
            *l = state >> k & 1 == 1;
            w *= if *l { p } else { 1.0 - p };
        }
        if w == 0.0 {
            continue;
        }
        let (word, out) = spec.realize(&latent);
        words.push(word);
        labels.push(numeral_zero(latent[0]));
        predicted.push(numeral_zero(out));
        weights.push(w);
    }
    BinnedTrace::weighted(spec.hidden(), words, labels, predicted, weights)
}

/// Exact relay information of every subset, plus the smallest sets that
/// attain the maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub hidden: usize,
    /// Indexed by set bits; entry 0 is the empty set.
    pub relay: Vec<Bits>,
    /// `I(xout; Y_S)` per set, indexed the same way.
    pub output_information: Vec<Bits>,
    pub max_relay: Bits,
    /// Smallest sets whose relay information reaches the maximum.
    pub minimal_relay_sets: Vec<NodeSet>,
    /// Smallest sets that carry all the information about the output.
    pub minimal_output_sets: Vec<NodeSet>,
    /// The spec plants duplicate nodes.
    pub redundant: bool,
}

impl GroundTruth {
    pub fn relay_of(&self, set: NodeSet) -> Bits {
        self.relay[set.bits() as usize]
    }

    /// Best relay information among sets of `size`, with the first set
    /// (in ascending bit order) attaining it.
    pub fn best_of_size(&self, size: usize) -> (NodeSet, Bits) {
        let mut best = (NodeSet::EMPTY, f64::NEG_INFINITY);
        for bits in 1..self.relay.len() as u32 {
            let s = NodeSet::from_bits(bits);
            if s.len() == size && self.relay[bits as usize] > best.1 {
                best = (s, self.relay[bits as usize]);
            }
        }
        best
    }
}

const TRUTH_TOLERANCE: Bits = 1e-9;

fn minimal_sets(values: &[Bits]) -> Vec<NodeSet> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let reaching: Vec<NodeSet> = (1..values.len() as u32)
        .filter(|&b| values[b as usize] >= max - TRUTH_TOLERANCE)
        .map(NodeSet::from_bits)
        .collect();
    let smallest = reaching.iter().map(|s| s.len()).min().unwrap_or(0);
    reaching.into_iter().filter(|s| s.len() == smallest).collect()
}

pub fn exact_truth(spec: &ChannelSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let hidden = spec.hidden();
    if hidden > EXACT_TRUTH_LIMIT {
        return Err(Error::Refused(format!(
            "exact ground truth is limited to {EXACT_TRUTH_LIMIT} hidden nodes, spec has {hidden}"
        )));
    }
    let trace = generate_exact(spec)?;
    let kernel = RelayKernel::new(&trace, 0)?;
    let sets = 1u32 << hidden;
    let relay: Vec<Bits> = (0..sets)
        .into_par_iter()
        .map(|b| kernel.relay_fast_unchecked(NodeSet::from_bits(b)))
        .collect();
    let output_information = (0..sets)
        .into_par_iter()
        .map(|b| set_information(&trace, Column::Output(0), NodeSet::from_bits(b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth {
        hidden,
        max_relay: relay.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        minimal_relay_sets: minimal_sets(&relay),
        minimal_output_sets: minimal_sets(&output_information),
        relay,
        output_information,
        redundant: !spec.copy_pairs().is_empty(),
    })
}

/// Random relay channel: a few noisy copies of the input with distinct,
/// well-separated flip rates at random positions, the rest noise. The output
/// is the cleanest relay, or the majority of three relays when
/// `majority` is set. `copy_pair` turns one noise node into a duplicate of
/// the output relay.
pub fn random_channel(hidden: usize, seed: u64, majority: bool, copy_pair: bool) -> Result<ChannelSpec> {
    let relays = if majority { 3 } else { 2 + (seed as usize % 2) };
    let needed = relays + copy_pair as usize + 1;
    if hidden < needed {
        return Err(Error::Validation(format!(
            "a random channel needs at least {needed} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..hidden).collect();
    for i in (1..hidden).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut flips = [0.03, 0.1, 0.18, 0.27, 0.36];
    for i in (1..flips.len()).rev() {
        flips.swap(i, rng.random_range(0..=i));
    }
    let mut nodes: Vec<NodeKind> = (0..hidden)
        .map(|_| NodeKind::Noise {
            p: rng.random_range(0.3..0.7),
        })
        .collect();
    let relay_nodes = &order[..relays];
    for (k, &n) in relay_nodes.iter().enumerate() {
        nodes[n] = NodeKind::NoisyCopy { flip: flips[k] };
    }
    let cleanest = *relay_nodes
        .iter()
        .min_by(|&&a, &&b| flip_of(&nodes[a]).total_cmp(&flip_of(&nodes[b])))
        .unwrap();
    let output = if majority {
        let mut r = relay_nodes.to_vec();
        r.sort();
        OutputRule::Majority { nodes: r }
    } else {
        OutputRule::Node { node: cleanest }
    };
    if copy_pair {
        nodes[order[relays]] = NodeKind::Duplicate { of: cleanest };
    }
    let spec = ChannelSpec {
        nodes,
        output,
        input_p: 0.5,
    };
    spec.validate()?;
    Ok(spec)
}

fn flip_of(k: &NodeKind) -> f64 {
    match k {
        NodeKind::NoisyCopy { flip } => *flip,
        _ => 1.0,
    }
}
