//! Plug-in entropies and shared information over binned traces.
//!
//! All quantities are in bits and use maximum-likelihood (plug-in)
//! probabilities with no bias correction. Weighted traces are treated as
//! exact distributions.
//!
//! The relay information of a hidden subset `Y_R` about numeral `c` is the
//! three-way shared information of the input indicator, the output indicator
//! and `Y_R`, conditioned on the remaining hidden nodes `Y_0`:
//!
//! ```text
//! I_R = sum_{y0} p(y0) * [ H(a) + H(b) + H(r) - H(a,b) - H(a,r) - H(b,r) + H(a,b,r) ]_{Y_0 = y0}
//! ```
//!
//! which also equals `I(a; b | Y_0) - I(a; b | Y_0, Y_R)`. [`RelayKernel`]
//! implements both forms; the second is what the search uses.

use rustc_hash::FxHashMap;

use crate::dataset::check_numeral;
use crate::discretize::BinnedTrace;
use crate::error::{Error, Result};
use crate::nodeset::NodeSet;

pub type Bits = f64;

/// One binary column of a [`BinnedTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    Hidden(usize),
    /// `label == numeral`
    Input(usize),
    /// `predicted == numeral`
    Output(usize),
}

impl Column {
    fn value(self, trace: &BinnedTrace, sample: usize) -> bool {
        match self {
            Column::Hidden(j) => trace.hidden_bit(sample, j),
            Column::Input(c) => trace.xin(sample, c),
            Column::Output(c) => trace.xout(sample, c),
        }
    }

    fn check(self, trace: &BinnedTrace) -> Result<()> {
        match self {
            Column::Hidden(j) if j >= trace.hidden() => Err(Error::Argument(format!(
                "hidden column {j} outside a layer of {}",
                trace.hidden()
            ))),
            Column::Input(c) | Column::Output(c) => check_numeral(c),
            _ => Ok(()),
        }
    }
}

/// Hidden columns of a node set, ascending.
pub fn hidden_columns(set: NodeSet) -> Vec<Column> {
    set.iter().map(Column::Hidden).collect()
}

/// Empirical joint distribution of a set of columns. States pack the
/// column values in ascending column order, first column in bit 0.
#[derive(Debug, Clone)]
pub struct JointCounts {
    columns: Vec<Column>,
    counts: FxHashMap<u64, f64>,
    total: f64,
}

impl JointCounts {
    pub fn from_trace(trace: &BinnedTrace, columns: &[Column]) -> Result<Self> {
        let mut columns = columns.to_vec();
        columns.sort();
        columns.dedup();
        if columns.len() > 64 {
            return Err(Error::Argument("at most 64 columns can be packed".into()));
        }
        for c in &columns {
            c.check(trace)?;
        }
        let mut counts = FxHashMap::default();
        for i in 0..trace.len() {
            let w = trace.weights()[i];
            if w == 0.0 {
                continue;
            }
            let state = columns
                .iter()
                .enumerate()
                .fold(0u64, |s, (k, c)| s | (c.value(trace, i) as u64) << k);
            *counts.entry(state).or_insert(0.0) += w;
        }
        let total = counts.values().sum();
        Ok(JointCounts { columns, counts, total })
    }

    /// Builds counts directly; mostly useful in tests.
    pub fn from_counts<I: IntoIterator<Item = (u64, f64)>>(columns: Vec<Column>, counts: I) -> Self {
        let mut map = FxHashMap::default();
        for (s, c) in counts {
            if c > 0.0 {
                *map.entry(s).or_insert(0.0) += c;
            }
        }
        let total = map.values().sum();
        JointCounts {
            columns,
            counts: map,
            total,
        }
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn states(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, state: u64) -> f64 {
        self.counts.get(&state).copied().unwrap_or(0.0)
    }
}

/// Shannon entropy `-sum p log2 p` of the empirical distribution.
pub fn entropy(counts: &JointCounts) -> Result<Bits> {
    if counts.total.is_nan() || counts.total <= 0.0 {
        return Err(Error::Argument("entropy of an empty distribution".into()));
    }
    let mut keys: Vec<_> = counts.counts.iter().collect();
    keys.sort_by_key(|(s, _)| **s);
    let h: f64 = keys
        .into_iter()
        .map(|(_, &c)| {
            let p = c / counts.total;
            -p * p.log2()
        })
        .sum();
    Ok(h.max(0.0))
}

fn joint_entropy(trace: &BinnedTrace, groups: &[&[Column]]) -> Result<Bits> {
    let cols: Vec<Column> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    if cols.is_empty() {
        return Ok(0.0);
    }
    entropy(&JointCounts::from_trace(trace, &cols)?)
}

fn check_disjoint(selectors: &[&[Column]]) -> Result<()> {
    for (i, a) in selectors.iter().enumerate() {
        for b in &selectors[i + 1..] {
            if a.iter().any(|c| b.contains(c)) {
                return Err(Error::Argument("column selectors overlap".into()));
            }
        }
    }
    Ok(())
}

fn check_nonempty(trace: &BinnedTrace) -> Result<()> {
    if trace.is_empty() || trace.total_weight().is_nan() || trace.total_weight() <= 0.0 {
        Err(Error::Argument("trace is empty".into()))
    } else {
        Ok(())
    }
}

/// `H(A) + H(B) - H(A,B)`.
pub fn mutual_information(trace: &BinnedTrace, a: &[Column], b: &[Column]) -> Result<Bits> {
    check_nonempty(trace)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("mutual information needs nonempty selectors".into()));
    }
    check_disjoint(&[a, b])?;
    Ok(joint_entropy(trace, &[a])? + joint_entropy(trace, &[b])? - joint_entropy(trace, &[a, b])?)
}

/// `I(A; B | C) = H(A,C) + H(B,C) - H(A,B,C) - H(C)`.
pub fn conditional_mutual_information(
    trace: &BinnedTrace,
    a: &[Column],
    b: &[Column],
    given: &[Column],
) -> Result<Bits> {
    check_nonempty(trace)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("mutual information needs nonempty selectors".into()));
    }
    check_disjoint(&[a, b, given])?;
    Ok(joint_entropy(trace, &[a, given])? + joint_entropy(trace, &[b, given])?
        - joint_entropy(trace, &[a, b, given])?
        - joint_entropy(trace, &[given])?)
}

/// Three-way co-information by inclusion-exclusion; negative values signal
/// synergy.
pub fn co_information3(trace: &BinnedTrace, a: &[Column], b: &[Column], c: &[Column]) -> Result<Bits> {
    check_nonempty(trace)?;
    check_disjoint(&[a, b, c])?;
    let h = |g: &[&[Column]]| joint_entropy(trace, g);
    Ok(h(&[a])? + h(&[b])? + h(&[c])? - h(&[a, b])? - h(&[a, c])? - h(&[b, c])? + h(&[a, b, c])?)
}

/// Information the hidden subset `yr` carries about `target`, without
/// conditioning: `I(target; Y_R)`, zero for the empty set.
pub fn set_information(trace: &BinnedTrace, target: Column, yr: NodeSet) -> Result<Bits> {
    yr.check_within(trace.hidden())?;
    if yr.is_empty() {
        return Ok(0.0);
    }
    mutual_information(trace, &[target], &hidden_columns(yr))
}

/// Relay information via the conditioned seven-term form.
pub fn relay_information(trace: &BinnedTrace, numeral: usize, yr: NodeSet) -> Result<Bits> {
    RelayKernel::new(trace, numeral)?.relay_information(yr)
}

/// Relay information via `I(a; b | Y_0) - I(a; b | Y)`.
pub fn relay_information_fast(trace: &BinnedTrace, numeral: usize, yr: NodeSet) -> Result<Bits> {
    RelayKernel::new(trace, numeral)?.relay_information_fast(yr)
}

/// Distinct `(hidden word, input bit, output bit)` states of a trace for one
/// numeral, with their total weights. Building it once makes repeated relay
/// evaluations cost `O(distinct states)` instead of `O(samples)`.
#[derive(Debug, Clone)]
pub struct RelayKernel {
    hidden: usize,
    numeral: usize,
    /// `(word, ab, weight)` sorted by `(word, ab)`; `ab = 2 * xin + xout`.
    states: Vec<(u32, u8, f64)>,
    total: f64,
    given_all: f64,
}

impl RelayKernel {
    pub fn new(trace: &BinnedTrace, numeral: usize) -> Result<Self> {
        check_numeral(numeral)?;
        check_nonempty(trace)?;
        let mut map: FxHashMap<(u32, u8), f64> = FxHashMap::default();
        for i in 0..trace.len() {
            let ab = (trace.xin(i, numeral) as u8) << 1 | trace.xout(i, numeral) as u8;
            *map.entry((trace.words()[i], ab)).or_insert(0.0) += trace.weights()[i];
        }
        let mut states: Vec<(u32, u8, f64)> = map
            .into_iter()
            .filter(|&(_, w)| w > 0.0)
            .map(|((w, ab), c)| (w, ab, c))
            .collect();
        states.sort_by_key(|&(w, ab, _)| (w, ab));
        let total = states.iter().map(|s| s.2).sum();
        let mut kernel = RelayKernel {
            hidden: trace.hidden(),
            numeral,
            states,
            total,
            given_all: 0.0,
        };
        kernel.given_all = kernel.input_output_information_given(NodeSet::full(kernel.hidden));
        Ok(kernel)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn numeral(&self) -> usize {
        self.numeral
    }

    pub fn distinct_states(&self) -> usize {
        self.states.len()
    }

    /// `I(xin; xout | Y_given)`.
    pub fn input_output_information_given(&self, given: NodeSet) -> Bits {
        let mask = given.bits();
        let mut groups: FxHashMap<u32, [f64; 4]> = FxHashMap::default();
        groups.reserve(self.states.len().min(1 << given.len().min(20)));
        for &(word, ab, w) in &self.states {
            groups.entry(word & mask).or_insert([0.0; 4])[ab as usize] += w;
        }
        let mut keys: Vec<_> = groups.into_iter().collect();
        keys.sort_unstable_by_key(|(k, _)| *k);
        let sum: f64 = keys.iter().map(|(_, n)| table_information(n)).sum();
        sum / self.total
    }

    /// `I(xin; xout)`, the throughput of the whole channel.
    pub fn input_output_information(&self) -> Bits {
        self.input_output_information_given(NodeSet::EMPTY)
    }

    fn check(&self, yr: NodeSet) -> Result<()> {
        yr.check_within(self.hidden)
    }

    pub fn relay_information_fast(&self, yr: NodeSet) -> Result<Bits> {
        self.check(yr)?;
        Ok(self.relay_fast_unchecked(yr))
    }

    pub(crate) fn relay_fast_unchecked(&self, yr: NodeSet) -> Bits {
        if yr.is_empty() {
            return 0.0;
        }
        self.input_output_information_given(yr.complement(self.hidden)) - self.given_all
    }

    /// Seven-term co-information of `(xin, xout, Y_R)` averaged over the
    /// slices `Y_0 = y0`.
    pub fn relay_information(&self, yr: NodeSet) -> Result<Bits> {
        self.check(yr)?;
        if yr.is_empty() {
            return Ok(0.0);
        }
        let r_mask = yr.bits();
        let y0_mask = yr.complement(self.hidden).bits();
        let mut slices: FxHashMap<u32, Vec<(u32, u8, f64)>> = FxHashMap::default();
        for &(word, ab, w) in &self.states {
            slices.entry(word & y0_mask).or_default().push((word & r_mask, ab, w));
        }
        let mut keys: Vec<_> = slices.into_iter().collect();
        keys.sort_unstable_by_key(|(k, _)| *k);
        let mut acc = 0.0;
        for (_, slice) in &keys {
            let n: f64 = slice.iter().map(|s| s.2).sum();
            acc += n * slice_co_information(slice, n);
        }
        Ok(acc / self.total)
    }
}

/// `sum_ab n_ab log2(n_ab n / (n_a n_b))` for a 2x2 table indexed by
/// `2a + b`; dividing by the grand total gives the group's contribution to a
/// conditional mutual information.
fn table_information(n: &[f64; 4]) -> f64 {
    let total = n[0] + n[1] + n[2] + n[3];
    if total <= 0.0 {
        return 0.0;
    }
    let a = [n[0] + n[1], n[2] + n[3]];
    let b = [n[0] + n[2], n[1] + n[3]];
    let mut s = 0.0;
    for (ab, &nab) in n.iter().enumerate() {
        if nab > 0.0 {
            s += nab * (nab * total / (a[ab >> 1] * b[ab & 1])).log2();
        }
    }
    s
}

fn slice_co_information(slice: &[(u32, u8, f64)], n: f64) -> f64 {
    fn h<K: std::hash::Hash + Eq + Ord + Copy>(items: impl Iterator<Item = (K, f64)>, n: f64) -> f64 {
        let mut m: FxHashMap<K, f64> = FxHashMap::default();
        for (k, w) in items {
            *m.entry(k).or_insert(0.0) += w;
        }
        let mut v: Vec<_> = m.into_iter().collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v.into_iter()
            .map(|(_, c)| {
                let p = c / n;
                -p * p.log2()
            })
            .sum()
    }
    let it = || slice.iter().copied();
    let ha = h(it().map(|(_, ab, w)| (ab >> 1, w)), n);
    let hb = h(it().map(|(_, ab, w)| (ab & 1, w)), n);
    let hr = h(it().map(|(r, _, w)| (r, w)), n);
    let hab = h(it().map(|(_, ab, w)| (ab, w)), n);
    let har = h(it().map(|(r, ab, w)| ((r, ab >> 1), w)), n);
    let hbr = h(it().map(|(r, ab, w)| ((r, ab & 1), w)), n);
    let habr = h(it().map(|(r, ab, w)| ((r, ab), w)), n);
    ha + hb + hr - hab - har - hbr + habr
}
