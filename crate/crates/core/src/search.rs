//! Relay-set search: the greedy shrinking-subset chain, the exhaustive
//! bipartition oracle, and the per-node importance/essentiality maps.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CLASSES;
use crate::discretize::BinnedTrace;
use crate::error::{Error, Result};
use crate::infotheory::{Bits, RelayKernel};
use crate::nodeset::NodeSet;

pub const DEFAULT_TIE_TOLERANCE: Bits = 1e-6;
pub const EXHAUSTIVE_HARD_LIMIT: usize = 20;

/// One greedy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub node: usize,
    /// Relay information of the set before the removal.
    pub before: Bits,
    /// Relay information of the remaining set.
    pub after: Bits,
    pub delta: Bits,
    /// Candidates whose remaining information was within the tie tolerance
    /// of the chosen one, chosen node included.
    pub tied_with: Vec<usize>,
}

impl Removal {
    pub fn is_tie(&self) -> bool {
        self.tied_with.len() >= 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyChain {
    pub numeral: usize,
    pub hidden: usize,
    pub tie_tolerance: Bits,
    pub full_information: Bits,
    pub removals: Vec<Removal>,
    /// Indexed by node.
    pub delta: Vec<Bits>,
    /// Cumulative loss up to and including each node's removal, by node.
    pub aggregated: Vec<Bits>,
    pub essentiality: Vec<Bits>,
    /// Candidate evaluations, not counting the full-set baseline.
    pub evaluations: usize,
}

impl GreedyChain {
    /// The set that remains once `hidden - size` nodes have been removed.
    pub fn set_of_size(&self, size: usize) -> NodeSet {
        assert!(size <= self.hidden, "size {size} exceeds {}", self.hidden);
        self.removals[..self.hidden - size]
            .iter()
            .fold(NodeSet::full(self.hidden), |s, r| s.without(r.node))
    }

    /// Relay information of [`set_of_size`](Self::set_of_size).
    pub fn information_of_size(&self, size: usize) -> Bits {
        if size == self.hidden {
            self.full_information
        } else {
            self.removals[self.hidden - size - 1].after
        }
    }

    /// Nested sets from the full layer down to a single node.
    pub fn nested_sets(&self) -> Vec<NodeSet> {
        (1..=self.hidden).rev().map(|k| self.set_of_size(k)).collect()
    }

    /// Nodes in removal order; the last one is the most essential.
    pub fn removal_order(&self) -> Vec<usize> {
        self.removals.iter().map(|r| r.node).collect()
    }

    pub fn tie_steps(&self) -> Vec<usize> {
        (0..self.removals.len())
            .filter(|&i| self.removals[i].is_tie())
            .collect()
    }
}

/// Greedy chain over an arbitrary set function. Each step removes the node
/// whose removal leaves the largest value, lowest index first on exact ties.
pub fn greedy_chain<F>(hidden: usize, numeral: usize, tie_tolerance: Bits, objective: F) -> Result<GreedyChain>
where
    F: Fn(NodeSet) -> Bits + Sync,
{
    if hidden == 0 || hidden > crate::nodeset::MAX_NODES {
        return Err(Error::Argument(format!("cannot search a layer of {hidden} nodes")));
    }
    if tie_tolerance.is_nan() || tie_tolerance < 0.0 {
        return Err(Error::Argument("tie tolerance must be nonnegative".into()));
    }
    let full = NodeSet::full(hidden);
    let full_information = objective(full);
    let mut current = full;
    let mut current_info = full_information;
    let mut removals = Vec::with_capacity(hidden);
    let mut evaluations = 0;
    while !current.is_empty() {
        let candidates: Vec<usize> = current.iter().collect();
        let values: Vec<Bits> = candidates.par_iter().map(|&a| objective(current.without(a))).collect();
        evaluations += candidates.len();
        let mut best = 0;
        for i in 1..values.len() {
            if values[i] > values[best] {
                best = i;
            }
        }
        let tied_with = candidates
            .iter()
            .zip(&values)
            .filter(|(_, &v)| values[best] - v <= tie_tolerance)
            .map(|(&a, _)| a)
            .collect();
        let node = candidates[best];
        let after = values[best];
        removals.push(Removal {
            node,
            before: current_info,
            after,
            delta: current_info - after,
            tied_with,
        });
        current = current.without(node);
        current_info = after;
    }

    let mut delta = vec![0.0; hidden];
    let mut aggregated = vec![0.0; hidden];
    let mut running = 0.0;
    for r in &removals {
        running += r.delta;
        delta[r.node] = r.delta;
        aggregated[r.node] = running;
    }
    Ok(GreedyChain {
        numeral,
        hidden,
        tie_tolerance,
        full_information,
        removals,
        essentiality: delta.clone(),
        delta,
        aggregated,
        evaluations,
    })
}

/// Greedy shrinking-subset search on the relay information of `numeral`.
pub fn greedy_ssa(trace: &BinnedTrace, numeral: usize) -> Result<GreedyChain> {
    greedy_ssa_with(&RelayKernel::new(trace, numeral)?, DEFAULT_TIE_TOLERANCE)
}

pub fn greedy_ssa_with(kernel: &RelayKernel, tie_tolerance: Bits) -> Result<GreedyChain> {
    greedy_chain(kernel.hidden(), kernel.numeral(), tie_tolerance, |s| {
        kernel.relay_fast_unchecked(s)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExhaustiveOptions {
    pub hard_limit: usize,
    /// Sets kept in the report; beyond this a seeded reservoir sample is kept.
    pub size_cap: usize,
    pub seed: u64,
    pub tie_tolerance: Bits,
}

impl Default for ExhaustiveOptions {
    fn default() -> Self {
        ExhaustiveOptions {
            hard_limit: EXHAUSTIVE_HARD_LIMIT,
            size_cap: 1 << 16,
            seed: 0,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub sets: usize,
    pub best: NodeSet,
    pub best_information: Bits,
    pub greedy: NodeSet,
    pub greedy_information: Bits,
    /// Other sets of this size with relay information at least the greedy one's.
    pub at_least_greedy: usize,
}

impl SizeSummary {
    /// Greedy's set reaches the best value of its size, up to `tolerance`;
    /// interchangeable nodes make the best set itself non-unique.
    pub fn greedy_is_optimal(&self, tolerance: Bits) -> bool {
        self.greedy_information >= self.best_information - tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveReport {
    pub numeral: usize,
    pub hidden: usize,
    pub evaluated: usize,
    pub by_size: Vec<SizeSummary>,
    /// Every `(set, I_R)` pair, or a reservoir sample when `sampled`.
    pub sets: Vec<(NodeSet, Bits)>,
    pub sampled: bool,
    pub at_least_greedy: usize,
}

impl ExhaustiveReport {
    /// Share of all nonempty sets that match or beat the greedy set of the
    /// same size.
    pub fn fraction_at_least_greedy(&self) -> f64 {
        self.at_least_greedy as f64 / self.evaluated as f64
    }

    pub fn size(&self, size: usize) -> &SizeSummary {
        &self.by_size[size - 1]
    }
}

/// Enumerates every nonempty bipartition and compares with the greedy chain.
pub fn exhaustive_best_sets(
    trace: &BinnedTrace,
    numeral: usize,
    options: &ExhaustiveOptions,
) -> Result<ExhaustiveReport> {
    let kernel = RelayKernel::new(trace, numeral)?;
    check_limit(kernel.hidden(), options)?;
    let chain = greedy_ssa_with(&kernel, options.tie_tolerance)?;
    exhaustive_with(&chain, options, |s| kernel.relay_fast_unchecked(s))
}

fn check_limit(hidden: usize, options: &ExhaustiveOptions) -> Result<()> {
    if hidden > options.hard_limit.min(30) {
        return Err(Error::Refused(format!(
            "exhaustive enumeration of {hidden} hidden nodes exceeds the limit of {}; use the greedy chain alone",
            options.hard_limit.min(30)
        )));
    }
    Ok(())
}

/// Exhaustive oracle over an arbitrary set function.
pub fn exhaustive_with<F>(chain: &GreedyChain, options: &ExhaustiveOptions, objective: F) -> Result<ExhaustiveReport>
where
    F: Fn(NodeSet) -> Bits + Sync,
{
    let hidden = chain.hidden;
    check_limit(hidden, options)?;
    let count = (1usize << hidden) - 1;
    let values: Vec<Bits> = (1..=count as u32)
        .into_par_iter()
        .map(|bits| objective(NodeSet::from_bits(bits)))
        .collect();
    let value = |bits: u32| values[bits as usize - 1];

    let mut by_size: Vec<SizeSummary> = (1..=hidden)
        .map(|size| {
            let greedy = chain.set_of_size(size);
            SizeSummary {
                size,
                sets: 0,
                best: NodeSet::EMPTY,
                best_information: f64::NEG_INFINITY,
                greedy,
                greedy_information: value(greedy.bits()),
                at_least_greedy: 0,
            }
        })
        .collect();
    for bits in 1..=count as u32 {
        let set = NodeSet::from_bits(bits);
        let v = value(bits);
        let s = &mut by_size[set.len() - 1];
        s.sets += 1;
        // exact ties go to the lexicographically smallest member list,
        // mirroring the greedy lowest-index preference
        if v > s.best_information || (v == s.best_information && lex_less(set, s.best)) {
            s.best_information = v;
            s.best = set;
        }
        if set != s.greedy && v >= s.greedy_information {
            s.at_least_greedy += 1;
        }
    }
    let sampled = count > options.size_cap;
    let sets = if sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut reservoir: Vec<u32> = (1..=options.size_cap as u32).collect();
        for bits in options.size_cap as u32 + 1..=count as u32 {
            let j = rng.random_range(0..bits as usize);
            if j < options.size_cap {
                reservoir[j] = bits;
            }
        }
        reservoir.sort_unstable();
        reservoir
            .into_iter()
            .map(|b| (NodeSet::from_bits(b), value(b)))
            .collect()
    } else {
        (1..=count as u32).map(|b| (NodeSet::from_bits(b), value(b))).collect()
    };
    let at_least_greedy = by_size.iter().map(|s| s.at_least_greedy).sum();
    Ok(ExhaustiveReport {
        numeral: chain.numeral,
        hidden,
        evaluated: count,
        by_size,
        sets,
        sampled,
        at_least_greedy,
    })
}

fn lex_less(a: NodeSet, b: NodeSet) -> bool {
    a.iter().lt(b.iter())
}

/// `numeral,size,sets,best_bits,best_info,greedy_bits,greedy_info,at_least_greedy` rows.
pub fn write_size_summary_csv<W: Write>(reports: &[ExhaustiveReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "numeral",
        "size",
        "sets",
        "best_bits",
        "best_info",
        "greedy_bits",
        "greedy_info",
        "at_least_greedy",
    ])?;
    for r in reports {
        for s in &r.by_size {
            w.write_record([
                r.numeral.to_string(),
                s.size.to_string(),
                s.sets.to_string(),
                s.best.bits().to_string(),
                format_bits(s.best_information),
                s.greedy.bits().to_string(),
                format_bits(s.greedy_information),
                s.at_least_greedy.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// A `hidden x 10` table of per-node values, one column per numeral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMatrix {
    pub hidden: usize,
    /// Row-major by node.
    pub values: Vec<Bits>,
}

impl NodeMatrix {
    pub fn get(&self, node: usize, numeral: usize) -> Bits {
        self.values[node * CLASSES + numeral]
    }

    pub fn column(&self, numeral: usize) -> Vec<Bits> {
        (0..self.hidden).map(|n| self.get(n, numeral)).collect()
    }

    /// Nodes of one column sorted by decreasing value, lowest index first on ties.
    pub fn ranking(&self, numeral: usize) -> Vec<usize> {
        let col = self.column(numeral);
        let mut order: Vec<usize> = (0..self.hidden).collect();
        order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
        order
    }

    /// `node,numeral,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "numeral", "value"])?;
        for n in 0..self.hidden {
            for c in 0..CLASSES {
                w.write_record([n.to_string(), c.to_string(), format_bits(self.get(n, c))])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Fixed textual form for report values so reruns compare byte for byte.
pub fn format_bits(v: Bits) -> String {
    format!("{v:.12e}")
}

fn node_matrix(chains: &[GreedyChain], pick: impl Fn(&GreedyChain) -> &[Bits]) -> Result<NodeMatrix> {
    if chains.len() != CLASSES {
        return Err(Error::Argument(format!("need {CLASSES} chains, got {}", chains.len())));
    }
    let hidden = chains[0].hidden;
    for (c, chain) in chains.iter().enumerate() {
        if chain.numeral != c {
            return Err(Error::Argument(format!(
                "chain {c} belongs to numeral {}",
                chain.numeral
            )));
        }
        if chain.hidden != hidden {
            return Err(Error::Argument("chains disagree on the layer width".into()));
        }
    }
    let mut values = vec![0.0; hidden * CLASSES];
    for (c, chain) in chains.iter().enumerate() {
        for (n, &v) in pick(chain).iter().enumerate() {
            values[n * CLASSES + c] = v;
        }
    }
    Ok(NodeMatrix { hidden, values })
}

/// Aggregated relay information per node and numeral.
pub fn importance_matrix(chains: &[GreedyChain]) -> Result<NodeMatrix> {
    node_matrix(chains, |c| &c.aggregated)
}

pub fn essentiality_matrix(chains: &[GreedyChain]) -> Result<NodeMatrix> {
    node_matrix(chains, |c| &c.essentiality)
}

/// Chains for all ten numerals, evaluated in parallel.
pub fn greedy_all_numerals(trace: &BinnedTrace, tie_tolerance: Bits) -> Result<Vec<GreedyChain>> {
    (0..CLASSES)
        .into_par_iter()
        .map(|c| greedy_ssa_with(&RelayKernel::new(trace, c)?, tie_tolerance))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infotheory::{relay_information, set_information, Column};
    use approx::assert_abs_diff_eq;

    fn trace(hidden: usize, rows: &[(u32, u8, u8, f64)]) -> BinnedTrace {
        BinnedTrace::weighted(
            hidden,
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            rows.iter().map(|r| r.3).collect(),
        )
        .unwrap()
    }

    fn numeral_zero(bit: u32) -> u8 {
        if bit == 1 {
            0
        } else {
            1
        }
    }

    /// Node 0 carries xin = xout; nodes 1..6 are uniform noise.
    fn copy_channel() -> BinnedTrace {
        let rows: Vec<_> = (0..64u32)
            .map(|w| (w, numeral_zero(w & 1), numeral_zero(w & 1), 1.0))
            .collect();
        trace(6, &rows)
    }

    #[test]
    fn planted_copy_is_removed_last() {
        let chain = greedy_ssa(&copy_channel(), 0).unwrap();
        assert_eq!(chain.removals.len(), 6);
        assert_eq!(*chain.removal_order().last().unwrap(), 0);
        assert_abs_diff_eq!(chain.essentiality[0], 1.0, epsilon = 1e-12);
        for n in 1..6 {
            assert_abs_diff_eq!(chain.delta[n], 0.0, epsilon = 1e-12);
        }
        assert_eq!(chain.evaluations, 21);
        // noise nodes tie with each other; lowest index goes first
        assert_eq!(chain.removal_order(), vec![1, 2, 3, 4, 5, 0]);
        assert!(chain.removals[0].is_tie());
        assert!(!chain.removals[5].is_tie());
    }

    /// xout = xin = node0 xor node1; nodes 2..5 are noise.
    fn encrypted_pair() -> BinnedTrace {
        let rows: Vec<_> = (0..64u32)
            .map(|w| {
                let x = (w & 1) ^ (w >> 1 & 1);
                (w, numeral_zero(x), numeral_zero(x), 1.0)
            })
            .collect();
        trace(6, &rows)
    }

    #[test]
    fn encrypted_pair_under_output_information() {
        // unconditioned: dropping either member of the pair loses everything
        let t = encrypted_pair();
        let info = |s: NodeSet| set_information(&t, Column::Output(0), s).unwrap();
        let chain = greedy_chain(6, 0, DEFAULT_TIE_TOLERANCE, info).unwrap();
        let mut last_two = chain.removal_order()[4..].to_vec();
        last_two.sort();
        assert_eq!(last_two, vec![0, 1]);
        assert_abs_diff_eq!(chain.removals[4].after, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chain.aggregated[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chain.aggregated[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn encrypted_pair_under_relay_information() {
        // Conditioned on one member, the other is a clean copy of the input,
        // so the first step sees every node as dispensable. Only the member
        // that survives is credited.
        let chain = greedy_ssa(&encrypted_pair(), 0).unwrap();
        assert_eq!(chain.removals[0].tied_with, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(chain.removal_order(), vec![0, 2, 3, 4, 5, 1]);
        assert_abs_diff_eq!(chain.aggregated[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chain.essentiality[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chain.aggregated[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn chain_accessors_and_telescoping() {
        let chain = greedy_ssa(&copy_channel(), 0).unwrap();
        let total: f64 = chain.delta.iter().sum();
        assert_abs_diff_eq!(total, chain.full_information, epsilon = 1e-12);
        assert_eq!(chain.set_of_size(6), NodeSet::full(6));
        assert_eq!(chain.set_of_size(1), NodeSet::from_nodes([0]));
        assert_eq!(chain.set_of_size(0), NodeSet::EMPTY);
        assert_eq!(chain.nested_sets().len(), 6);
        let t = copy_channel();
        for k in 1..=6 {
            let direct = relay_information(&t, 0, chain.set_of_size(k)).unwrap();
            assert_abs_diff_eq!(chain.information_of_size(k), direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn exhaustive_counts_and_refusal() {
        let rows: Vec<_> = (0..8u32)
            .map(|w| (w, numeral_zero(w & 1), numeral_zero(w & 1), 1.0))
            .collect();
        let r = exhaustive_best_sets(&trace(3, &rows), 0, &ExhaustiveOptions::default()).unwrap();
        assert_eq!(r.evaluated, 7);
        assert_eq!(r.sets.len(), 7);
        assert_eq!(r.by_size.iter().map(|s| s.sets).collect::<Vec<_>>(), vec![3, 3, 1]);
        assert!(r.by_size.iter().all(|s| s.greedy_is_optimal(1e-12)));
        // {0,1} and {0,2} tie; greedy drops node 1 first
        assert_eq!(r.size(2).best, NodeSet::from_nodes([0, 1]));
        assert_eq!(r.size(2).greedy, NodeSet::from_nodes([0, 2]));
        assert_eq!(r.size(2).at_least_greedy, 1);

        let opts = ExhaustiveOptions {
            hard_limit: 2,
            ..Default::default()
        };
        assert!(matches!(
            exhaustive_best_sets(&trace(3, &rows), 0, &opts),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn reservoir_sample_is_seeded() {
        let opts = ExhaustiveOptions {
            size_cap: 10,
            seed: 3,
            ..Default::default()
        };
        let t = copy_channel();
        let a = exhaustive_best_sets(&t, 0, &opts).unwrap();
        let b = exhaustive_best_sets(&t, 0, &opts).unwrap();
        assert!(a.sampled);
        assert_eq!(a.sets.len(), 10);
        assert_eq!(a, b);
        assert_eq!(a.evaluated, 63);
    }

    #[test]
    fn matrices_need_every_numeral() {
        let rows: Vec<_> = (0..16u32)
            .map(|w| ((w & 7), (w >> 3) as u8 * 3, (w & 1) as u8, 1.0))
            .collect();
        let t = trace(3, &rows);
        let chains = greedy_all_numerals(&t, DEFAULT_TIE_TOLERANCE).unwrap();
        let m = importance_matrix(&chains).unwrap();
        assert_eq!(m.values.len(), 30);
        assert_eq!(m.get(2, 4), chains[4].aggregated[2]);
        let e = essentiality_matrix(&chains).unwrap();
        assert_eq!(e.get(1, 9), chains[9].essentiality[1]);
        assert!(importance_matrix(&chains[..9]).is_err());
        let mut swapped = chains.clone();
        swapped.swap(0, 1);
        assert!(importance_matrix(&swapped).is_err());

        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 31);
        assert!(text.starts_with("node,numeral,value\n0,0,"));
    }

    #[test]
    fn copies_under_set_information_both_look_unimportant() {
        // node1 duplicates node0, node2 is noise; xout = node0
        let rows: Vec<_> = (0..4u32)
            .map(|e| {
                let b = e & 1;
                (b | b << 1 | (e >> 1) << 2, numeral_zero(b), numeral_zero(b), 1.0)
            })
            .collect();
        let t = trace(3, &rows);
        let info = |s: NodeSet| set_information(&t, Column::Output(0), s).unwrap();
        let chain = greedy_chain(3, 0, DEFAULT_TIE_TOLERANCE, info).unwrap();
        // the first step cannot tell the copies and the noise node apart
        assert_eq!(chain.removals[0].tied_with, vec![0, 1, 2]);
        assert_abs_diff_eq!(chain.delta[chain.removals[0].node], 0.0, epsilon = 1e-12);
    }
}
