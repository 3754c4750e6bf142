//! Knockout validation of relay sets and the regression of knockout effect
//! on set size and relay information.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::dataset::{check_numeral, Dataset};
use crate::error::{Error, Result};
use crate::infotheory::{Bits, RelayKernel};
use crate::network::{argmax, ActivationTrace, DenseNet, KnockoutMask};
use crate::nodeset::NodeSet;
use crate::search::{format_bits, GreedyChain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoutRecord {
    pub numeral: usize,
    pub set: NodeSet,
    pub size: usize,
    pub relay_information: Bits,
    /// Baseline minus knocked-out one-vs-rest accuracy.
    pub effect: f64,
}

/// Evaluates knockouts of one network on one dataset. The unmasked hidden
/// activations are recorded once; each knockout only redoes the readout.
pub struct KnockoutProbe<'a> {
    net: &'a DenseNet,
    trace: ActivationTrace,
}

impl<'a> KnockoutProbe<'a> {
    pub fn new(net: &'a DenseNet, data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Argument("knockouts need a nonempty dataset".into()));
        }
        Ok(KnockoutProbe {
            net,
            trace: net.record_trace(data, KnockoutMask::NONE)?,
        })
    }

    /// One-vs-rest accuracy for `numeral` with `mask` knocked out.
    pub fn accuracy(&self, numeral: usize, mask: NodeSet) -> Result<f64> {
        check_numeral(numeral)?;
        mask.check_within(self.net.hidden())?;
        let outputs = self.net.outputs();
        let hits = (0..self.trace.len())
            .into_par_iter()
            .map(|i| {
                let mut out = vec![0.0; outputs];
                self.net.readout(self.trace.row(i), mask, &mut out);
                let says = if outputs == 1 {
                    out[0] > 0.0
                } else {
                    argmax(&out) == numeral
                };
                (says == (self.trace.labels[i] as usize == numeral)) as usize
            })
            .sum::<usize>();
        Ok(hits as f64 / self.trace.len() as f64)
    }

    /// Baseline accuracy minus accuracy with `mask` knocked out.
    pub fn effect(&self, numeral: usize, mask: NodeSet) -> Result<f64> {
        Ok(self.accuracy(numeral, NodeSet::EMPTY)? - self.accuracy(numeral, mask)?)
    }

    /// Records for explicit sets; `kernel` supplies their relay information.
    pub fn records(&self, kernel: &RelayKernel, sets: &[NodeSet]) -> Result<Vec<KnockoutRecord>> {
        if kernel.hidden() != self.net.hidden() {
            return Err(Error::Argument(format!(
                "trace has {} hidden nodes, network has {}",
                kernel.hidden(),
                self.net.hidden()
            )));
        }
        let numeral = kernel.numeral();
        let baseline = self.accuracy(numeral, NodeSet::EMPTY)?;
        sets.iter()
            .map(|&set| {
                Ok(KnockoutRecord {
                    numeral,
                    set,
                    size: set.len(),
                    relay_information: kernel.relay_information_fast(set)?,
                    effect: baseline - self.accuracy(numeral, set)?,
                })
            })
            .collect()
    }

    /// One record per nested set of the greedy chain, largest first.
    pub fn sweep(&self, chain: &GreedyChain) -> Result<Vec<KnockoutRecord>> {
        if chain.hidden != self.net.hidden() {
            return Err(Error::Argument(format!(
                "chain covers {} hidden nodes, network has {}",
                chain.hidden,
                self.net.hidden()
            )));
        }
        let baseline = self.accuracy(chain.numeral, NodeSet::EMPTY)?;
        (1..=chain.hidden)
            .rev()
            .map(|size| {
                let set = chain.set_of_size(size);
                Ok(KnockoutRecord {
                    numeral: chain.numeral,
                    set,
                    size,
                    relay_information: chain.information_of_size(size),
                    effect: baseline - self.accuracy(chain.numeral, set)?,
                })
            })
            .collect()
    }
}

/// Knockout effect of each nested set of `chain`, evaluated on `data`.
pub fn knockout_sweep(net: &DenseNet, data: &Dataset, chain: &GreedyChain) -> Result<Vec<KnockoutRecord>> {
    KnockoutProbe::new(net, data)?.sweep(chain)
}

/// `count` uniformly drawn nonempty sets, for robustness runs.
pub fn random_sets(hidden: usize, count: usize, seed: u64) -> Vec<NodeSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let size = 1 + i % hidden;
            NodeSet::from_nodes(sample(&mut rng, hidden, size))
        })
        .collect()
}

/// CSV with header `numeral,set_bits,set_size,relay_info,knockout_effect`.
pub fn write_records_csv<W: Write>(records: &[KnockoutRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["numeral", "set_bits", "set_size", "relay_info", "knockout_effect"])?;
    for r in records {
        w.write_record([
            r.numeral.to_string(),
            r.set.bits().to_string(),
            r.size.to_string(),
            format_bits(r.relay_information),
            format_bits(r.effect),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<KnockoutRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize, name: &'static str| -> Result<&str> {
            row.get(i).ok_or_else(|| Error::Format {
                file: "<knockout csv>".into(),
                field: name,
                detail: "missing column".into(),
            })
        };
        let parse_err = |name: &'static str, v: &str| Error::Format {
            file: "<knockout csv>".into(),
            field: name,
            detail: format!("cannot parse {v:?}"),
        };
        let numeral = field(0, "numeral")?;
        let bits = field(1, "set_bits")?;
        let size = field(2, "set_size")?;
        let info = field(3, "relay_info")?;
        let effect = field(4, "knockout_effect")?;
        let record = KnockoutRecord {
            numeral: numeral.parse().map_err(|_| parse_err("numeral", numeral))?,
            set: NodeSet::from_bits(bits.parse().map_err(|_| parse_err("set_bits", bits))?),
            size: size.parse().map_err(|_| parse_err("set_size", size))?,
            relay_information: info.parse().map_err(|_| parse_err("relay_info", info))?,
            effect: effect.parse().map_err(|_| parse_err("knockout_effect", effect))?,
        };
        if record.size != record.set.len() {
            return Err(Error::Consistency(format!(
                "record for set {} claims size {}",
                record.set, record.size
            )));
        }
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub estimate: f64,
    /// Estimate times predictor spread over response spread; 0 for the intercept.
    pub standardized: f64,
    pub std_error: f64,
    pub t: f64,
    /// Two-sided.
    pub p: f64,
}

/// Fit of `K = b0 + b_S * S + b_I * I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub intercept: Coefficient,
    pub set_size: Coefficient,
    pub information: Coefficient,
    pub r_squared: f64,
    pub f_statistic: f64,
    pub f_p_value: f64,
    pub samples: usize,
    pub degrees_of_freedom: usize,
}

pub fn fit_regression(records: &[KnockoutRecord]) -> Result<RegressionResult> {
    let s: Vec<f64> = records.iter().map(|r| r.size as f64).collect();
    let i: Vec<f64> = records.iter().map(|r| r.relay_information).collect();
    let k: Vec<f64> = records.iter().map(|r| r.effect).collect();
    ols_two(&k, &s, &i)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn spread(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Ordinary least squares of `response` on two predictors plus intercept.
pub fn ols_two(response: &[f64], set_size: &[f64], information: &[f64]) -> Result<RegressionResult> {
    let n = response.len();
    if n < 4 || set_size.len() != n || information.len() != n {
        return Err(Error::Argument(format!(
            "regression needs at least 4 aligned records, got {n}"
        )));
    }
    for (name, col) in [("K", response), ("S", set_size), ("I", information)] {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("column {name} has non-finite values")));
        }
    }
    let degenerate = |column, reason: &str| Error::Degeneracy {
        column,
        reason: reason.to_string(),
    };
    let flat = |v: &[f64]| {
        let m = mean(v);
        let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
        spread(v) <= 1e-12 * scale.max(m.abs())
    };
    if flat(set_size) {
        return Err(degenerate("S", "constant predictor"));
    }
    if flat(information) {
        return Err(degenerate("I", "constant predictor"));
    }
    if flat(response) {
        return Err(degenerate("K", "constant response"));
    }

    // normal equations over [1, S, I]
    let rows: Vec<[f64; 3]> = (0..n).map(|r| [1.0, set_size[r], information[r]]).collect();
    let mut xtx = [[0.0; 3]; 3];
    let mut xty = [0.0; 3];
    for (row, &y) in rows.iter().zip(response) {
        for a in 0..3 {
            xty[a] += row[a] * y;
            for b in 0..3 {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let inverse = invert3(&xtx).ok_or_else(|| degenerate("I", "collinear with S"))?;
    let beta: [f64; 3] = std::array::from_fn(|a| (0..3).map(|b| inverse[a][b] * xty[b]).sum());

    let fitted: Vec<f64> = rows
        .iter()
        .map(|r| r[0] * beta[0] + r[1] * beta[1] + r[2] * beta[2])
        .collect();
    let rss: f64 = response.iter().zip(&fitted).map(|(y, f)| (y - f) * (y - f)).sum();
    let ym = mean(response);
    let tss: f64 = response.iter().map(|y| (y - ym) * (y - ym)).sum();
    let df = n - 3;
    let sigma2 = rss / df as f64;
    let (sd_k, sd_s, sd_i) = (spread(response), spread(set_size), spread(information));

    let coefficient = |a: usize, predictor_spread: f64| {
        let estimate = beta[a];
        let std_error = (sigma2 * inverse[a][a]).max(0.0).sqrt();
        let (t, p) = if std_error > 0.0 {
            let t = estimate / std_error;
            (t, two_sided_p(t, df as f64))
        } else if estimate == 0.0 {
            (0.0, 1.0)
        } else {
            (estimate.signum() * f64::INFINITY, 0.0)
        };
        Coefficient {
            estimate,
            standardized: estimate * predictor_spread / sd_k,
            std_error,
            t,
            p,
        }
    };
    let r_squared = (1.0 - rss / tss).clamp(0.0, 1.0);
    let (f_statistic, f_p_value) = if rss > 0.0 {
        let f = ((tss - rss) / 2.0) / (rss / df as f64);
        (f, f_upper_tail(f, 2.0, df as f64))
    } else {
        (f64::INFINITY, 0.0)
    };
    Ok(RegressionResult {
        intercept: coefficient(0, 0.0),
        set_size: coefficient(1, sd_s),
        information: coefficient(2, sd_i),
        r_squared,
        f_statistic,
        f_p_value,
        samples: n,
        degrees_of_freedom: df,
    })
}

/// Gauss-Jordan inverse with partial pivoting; `None` when singular relative
/// to the matrix scale.
fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    // scale rows and columns by the diagonal so the pivot test is relative
    let d: [f64; 3] = std::array::from_fn(|i| m[i][i].sqrt());
    if d.iter().any(|&x| x.is_nan() || x <= 0.0) {
        return None;
    }
    let mut a: [[f64; 6]; 3] = std::array::from_fn(|i| {
        let mut row = [0.0; 6];
        for j in 0..3 {
            row[j] = m[i][j] / (d[i] * d[j]);
        }
        row[3 + i] = 1.0;
        row
    });
    for col in 0..3 {
        let pivot = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = a[col];
        for (r, row) in a.iter_mut().enumerate() {
            let f = row[col];
            if r != col && f != 0.0 {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    Some(std::array::from_fn(|i| {
        std::array::from_fn(|j| a[i][3 + j] / (d[i] * d[j]))
    }))
}

/// Student-t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `P(|T| >= |t|)`.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

fn f_upper_tail(f: f64, d1: f64, d2: f64) -> f64 {
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}
