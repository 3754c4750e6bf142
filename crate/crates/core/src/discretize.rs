//! Binarization of hidden activations and one-vs-rest indicator bits.
//!
//! Each hidden column is split into two bins independently, by default with
//! one-dimensional 2-means. Lloyd iterations start from the column minimum
//! and maximum and run until the assignment stops changing; a value exactly
//! halfway between the centers goes to the lower bin. A constant column is
//! degenerate and maps entirely to bit 0.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::CLASSES;
use crate::error::{Error, Result};
use crate::network::ActivationTrace;
use crate::nodeset::{NodeSet, MAX_NODES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinningStrategy {
    #[default]
    Kmeans,
    Median,
}

impl std::str::FromStr for BinningStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(BinningStrategy::Kmeans),
            "median" => Ok(BinningStrategy::Median),
            other => Err(Error::Argument(format!("unknown binning strategy `{other}`"))),
        }
    }
}

/// Two-bin split of one hidden node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeBins {
    /// Ascending cluster centers. For median binning both entries hold the
    /// median.
    pub centers: [f64; 2],
    pub degenerate: bool,
    #[serde(default)]
    pub iterations: usize,
    pub strategy: BinningStrategy,
}

impl NodeBins {
    /// Bin of a single value.
    pub fn assign(&self, v: f64) -> bool {
        if self.degenerate {
            return false;
        }
        match self.strategy {
            BinningStrategy::Kmeans => (v - self.centers[0]).abs() > (v - self.centers[1]).abs(),
            BinningStrategy::Median => v > self.centers[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub strategy: BinningStrategy,
    pub nodes: Vec<NodeBins>,
}

impl BinSpec {
    pub fn degenerate_nodes(&self) -> NodeSet {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.degenerate)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Data("cannot bin an empty column".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite activation {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// Deterministic 2-means on a column of reals.
///
/// Works on the sorted values so the result does not depend on sample order.
pub fn kmeans2(values: &[f64]) -> Result<NodeBins> {
    let sorted = sorted_finite(values)?;
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        return Ok(NodeBins {
            centers: [lo, hi],
            degenerate: true,
            iterations: 0,
            strategy: BinningStrategy::Kmeans,
        });
    }

    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in &sorted {
        acc += v;
        prefix.push(acc);
    }
    let total = acc;
    let n = sorted.len();

    let mut centers = [lo, hi];
    // number of values in the lower cluster
    let mut split = usize::MAX;
    let mut iterations = 0;
    loop {
        let [c0, c1] = centers;
        let next = sorted.partition_point(|&v| (v - c0).abs() <= (v - c1).abs());
        if next == split {
            break;
        }
        split = next;
        iterations += 1;
        centers = [
            prefix[split] / split as f64,
            (total - prefix[split]) / (n - split) as f64,
        ];
    }
    Ok(NodeBins {
        centers,
        degenerate: false,
        iterations,
        strategy: BinningStrategy::Kmeans,
    })
}

/// Median threshold: values strictly above the median go to bin 1.
pub fn median_split(values: &[f64]) -> Result<NodeBins> {
    let sorted = sorted_finite(values)?;
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(NodeBins {
        centers: [median, median],
        degenerate: sorted[0] == sorted[n - 1],
        iterations: 0,
        strategy: BinningStrategy::Median,
    })
}

/// Binary hidden states plus labels/predictions for every sample.
///
/// Hidden node `j` of sample `i` is bit `j` of `words[i]`. The input and
/// output indicator for numeral `c` are `labels[i] == c` and
/// `predicted[i] == c`. `weights` are all 1 for empirical traces; exact
/// synthetic distributions carry fractional probabilities instead.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedTrace {
    hidden: usize,
    words: Vec<u32>,
    labels: Vec<u8>,
    predicted: Vec<u8>,
    weights: Vec<f64>,
}

impl BinnedTrace {
    pub fn new(hidden: usize, words: Vec<u32>, labels: Vec<u8>, predicted: Vec<u8>) -> Result<Self> {
        let weights = vec![1.0; words.len()];
        BinnedTrace::weighted(hidden, words, labels, predicted, weights)
    }

    pub fn weighted(
        hidden: usize,
        words: Vec<u32>,
        labels: Vec<u8>,
        predicted: Vec<u8>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if hidden == 0 || hidden > MAX_NODES - 2 {
            return Err(Error::Argument(format!(
                "hidden count {hidden} outside 1..={}",
                MAX_NODES - 2
            )));
        }
        let n = words.len();
        if labels.len() != n || predicted.len() != n || weights.len() != n {
            return Err(Error::Shape("trace columns have different lengths".into()));
        }
        let full = NodeSet::full(hidden).bits();
        if words.iter().any(|w| w & !full != 0) {
            return Err(Error::Data("hidden word has bits beyond the layer".into()));
        }
        if labels.iter().chain(&predicted).any(|&c| c as usize >= CLASSES) {
            return Err(Error::Data("class index outside 0..10".into()));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Data("weights must be finite and nonnegative".into()));
        }
        Ok(BinnedTrace {
            hidden,
            words,
            labels,
            predicted,
            weights,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn predicted(&self) -> &[u8] {
        &self.predicted
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_unit_weighted(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0)
    }

    pub fn hidden_bit(&self, sample: usize, node: usize) -> bool {
        self.words[sample] >> node & 1 == 1
    }

    pub fn xin(&self, sample: usize, numeral: usize) -> bool {
        self.labels[sample] as usize == numeral
    }

    pub fn xout(&self, sample: usize, numeral: usize) -> bool {
        self.predicted[sample] as usize == numeral
    }

    /// CSV with header `sample,label,predicted,b0,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        if !self.is_unit_weighted() {
            return Err(Error::Argument(
                "weighted (exact) traces have no CSV representation".into(),
            ));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample".to_string(), "label".into(), "predicted".into()];
        header.extend((0..self.hidden).map(|j| format!("b{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string(), self.labels[i].to_string(), self.predicted[i].to_string()];
            rec.extend((0..self.hidden).map(|j| (self.hidden_bit(i, j) as u8).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let hidden = headers.len().saturating_sub(3);
        if hidden == 0 || (0..hidden).any(|j| headers[3 + j] != format!("b{j}")) {
            return Err(Error::Data(format!("unexpected binned trace header {headers:?}")));
        }
        let (mut words, mut labels, mut predicted) = (Vec::new(), Vec::new(), Vec::new());
        let int = |s: &str| {
            s.parse::<u8>()
                .map_err(|e| Error::Data(format!("bad integer `{s}`: {e}")))
        };
        for rec in r.records() {
            let rec = rec?;
            labels.push(int(&rec[1])?);
            predicted.push(int(&rec[2])?);
            let mut word = 0u32;
            for j in 0..hidden {
                match int(&rec[3 + j])? {
                    0 => {}
                    1 => word |= 1 << j,
                    b => return Err(Error::Data(format!("bit value {b} is not 0/1"))),
                }
            }
            words.push(word);
        }
        BinnedTrace::new(hidden, words, labels, predicted)
    }
}

/// Bins every hidden column of `trace` independently.
pub fn bin_trace(trace: &ActivationTrace, strategy: BinningStrategy) -> Result<(BinnedTrace, BinSpec)> {
    if trace.is_empty() {
        return Err(Error::Data("cannot bin an empty trace".into()));
    }
    let nodes = (0..trace.hidden)
        .map(|j| {
            let col = trace.column(j);
            match strategy {
                BinningStrategy::Kmeans => kmeans2(&col),
                BinningStrategy::Median => median_split(&col),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let words = (0..trace.len())
        .map(|i| {
            trace
                .row(i)
                .iter()
                .zip(&nodes)
                .enumerate()
                .fold(0u32, |w, (j, (&v, b))| w | ((b.assign(v) as u32) << j))
        })
        .collect();
    let binned = BinnedTrace::new(trace.hidden, words, trace.labels.clone(), trace.predicted.clone())?;
    Ok((binned, BinSpec { strategy, nodes }))
}
