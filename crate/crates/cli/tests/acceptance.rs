//! Acceptance checks, one line per criterion.
//!
//! A failed criterion prints `[FAIL]` but only fails the target when
//! `RELAY_SCOPE_STRICT=1` is set; a panicking check always fails it.
//! MNIST is read from `$RELAY_SCOPE_DATA_DIR`, else `<workspace>/data/mnist`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relay_scope::infotheory::{conditional_mutual_information, mutual_information, set_information, Column};
use relay_scope::search::{
    essentiality_matrix, exhaustive_best_sets, greedy_ssa_with, importance_matrix, ExhaustiveOptions, ExhaustiveReport,
    DEFAULT_TIE_TOLERANCE,
};
use relay_scope::synth::{exact_truth, generate, generate_exact, random_channel};
use relay_scope::{BinnedTrace, NodeSet, RelayKernel};
use relay_scope_cli::config::{ExperimentConfig, DATA_DIR_ENV};
use relay_scope_cli::manifest::RunManifest;
use relay_scope_cli::pipeline::{ModelKind, Run};

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Result<Outcome, String>;

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome, String> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn data_dir() -> Option<PathBuf> {
    let dir = std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("t10k-labels-idx1-ubyte").exists().then_some(dir)
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn mnist_config(name: &str) -> Result<ExperimentConfig, String> {
    let dir = data_dir().ok_or_else(|| format!("MNIST files not found; set {DATA_DIR_ENV}"))?;
    let mut config = ExperimentConfig::default();
    config.data.dir = Some(dir);
    config.output_dir = scratch(name);
    Ok(config)
}

fn random_table(vars: usize, rng: &mut ChaCha8Rng) -> BinnedTrace {
    // an empirical distribution: 300 draws from a random categorical law
    let law: Vec<f64> = (0..1u32 << vars).map(|_| rng.random::<f64>().powi(2)).collect();
    let total: f64 = law.iter().sum();
    let mut counts = vec![0.0; law.len()];
    for _ in 0..300 {
        let mut u = rng.random::<f64>() * total;
        let state = law
            .iter()
            .position(|&p| {
                u -= p;
                u < 0.0
            })
            .unwrap_or(law.len() - 1);
        counts[state] += 1.0;
    }
    let (words, weights): (Vec<u32>, Vec<f64>) = (0..law.len() as u32).zip(counts).filter(|(_, c)| *c > 0.0).unzip();
    let n = words.len();
    BinnedTrace::weighted(vars, words, vec![0; n], vec![0; n], weights).unwrap()
}

fn criterion_1() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let x = [Column::Hidden(0)];
    let y = [Column::Hidden(1)];
    let z = [Column::Hidden(2), Column::Hidden(3)];
    let yz = [Column::Hidden(1), Column::Hidden(2), Column::Hidden(3)];
    let mut chain_err: f64 = 0.0;
    for _ in 0..1000 {
        let t = random_table(4, &mut rng);
        let lhs = mutual_information(&t, &x, &yz).map_err(err)?;
        let rhs = mutual_information(&t, &x, &y).map_err(err)?
            + conditional_mutual_information(&t, &x, &z, &y).map_err(err)?;
        chain_err = chain_err.max((lhs - rhs).abs());
    }

    let mut relay_err: f64 = 0.0;
    for _ in 0..1000 {
        let hidden = rng.random_range(1..=8);
        let samples = rng.random_range(50..2000);
        let labels: Vec<u8> = (0..samples).map(|_| rng.random_range(0..10)).collect();
        let predicted: Vec<u8> = labels
            .iter()
            .map(|&l| {
                if rng.random_bool(0.8) {
                    l
                } else {
                    rng.random_range(0..10)
                }
            })
            .collect();
        let words = labels
            .iter()
            .map(|&l| {
                (0..hidden).fold(0u32, |w, j| {
                    w | (rng.random_bool(if l as usize % 3 == j % 3 { 0.8 } else { 0.3 }) as u32) << j
                })
            })
            .collect();
        let t = BinnedTrace::new(hidden, words, labels, predicted).map_err(err)?;
        let kernel = RelayKernel::new(&t, rng.random_range(0..10)).map_err(err)?;
        let set = NodeSet::from_bits(rng.random_range(0..1u32 << hidden));
        let slow = kernel.relay_information(set).map_err(err)?;
        let fast = kernel.relay_information_fast(set).map_err(err)?;
        relay_err = relay_err.max((slow - fast).abs());
    }
    outcome(
        chain_err < 1e-9 && relay_err < 1e-9,
        format!("max chain-rule error {chain_err:.1e}, max relay-form disagreement {relay_err:.1e} bits"),
    )
}

fn criterion_2() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = f64::INFINITY;
    for _ in 0..500 {
        // four relay nodes plus the output bit
        let law: Vec<f64> = (0..32).map(|_| rng.random::<f64>()).collect();
        let words: Vec<u32> = (0..32u32).map(|w| w & 0xf).collect();
        let predicted: Vec<u8> = (0..32u32).map(|w| (w >> 4) as u8).collect();
        let t = BinnedTrace::weighted(4, words, vec![0; 32], predicted, law).map_err(err)?;
        let full = NodeSet::full(4);
        let info = |s: NodeSet| set_information(&t, Column::Output(0), s);
        let base = info(full).map_err(err)?;
        let loss = |removed: NodeSet| info(full.intersection(removed.complement(4))).map(|v| base - v);
        for i in 0..4 {
            for j in i + 1..4 {
                let pair = loss(NodeSet::from_nodes([i, j])).map_err(err)?;
                let single = loss(NodeSet::from_nodes([i]))
                    .map_err(err)?
                    .max(loss(NodeSet::from_nodes([j])).map_err(err)?);
                worst = worst.min(pair - single);
            }
        }
    }
    outcome(
        worst >= -1e-9,
        format!("min pair loss minus single loss {worst:.3e} bits over 3000 pairs"),
    )
}

fn criterion_3() -> Result<Outcome, String> {
    const HIDDEN: usize = 10;
    let (mut exact_ok, mut sampled_ok, mut pairs) = (0, 0, 0);
    for seed in 0..50u64 {
        let spec = random_channel(HIDDEN, seed, seed % 2 == 1, false).map_err(err)?;
        let truth = exact_truth(&spec).map_err(err)?;
        let exact = generate_exact(&spec).map_err(err)?;
        let oracle = exhaustive_best_sets(&exact, 0, &ExhaustiveOptions::default()).map_err(err)?;
        let sampled = generate(&spec, 20_000, 1000 + seed).map_err(err)?;
        let sampled_chain =
            greedy_ssa_with(&RelayKernel::new(&sampled, 0).map_err(err)?, DEFAULT_TIE_TOLERANCE).map_err(err)?;
        for size in 1..=HIDDEN {
            pairs += 1;
            exact_ok += usize::from(oracle.size(size).greedy_is_optimal(1e-9));
            let (_, best) = truth.best_of_size(size);
            sampled_ok += usize::from(truth.relay_of(sampled_chain.set_of_size(size)) >= best - 1e-9);
        }
    }

    let (mut tie_runs, mut confined, mut mismatches) = (0, true, 0);
    for seed in 0..20u64 {
        let spec = random_channel(HIDDEN, 500 + seed, seed % 2 == 1, true).map_err(err)?;
        let (original, copy) = spec.copy_pairs()[0];
        let copies = NodeSet::from_nodes([original, copy]);
        let exact = generate_exact(&spec).map_err(err)?;
        let chain = greedy_ssa_with(&RelayKernel::new(&exact, 0).map_err(err)?, DEFAULT_TIE_TOLERANCE).map_err(err)?;
        let flagged = chain
            .removals
            .iter()
            .any(|r| r.is_tie() && r.tied_with.contains(&original) && r.tied_with.contains(&copy));
        tie_runs += usize::from(flagged);
        let oracle = exhaustive_best_sets(&exact, 0, &ExhaustiveOptions::default()).map_err(err)?;
        for s in &oracle.by_size {
            if !s.greedy_is_optimal(1e-9) {
                mismatches += 1;
                let touched = s.greedy.union(s.best).intersection(copies);
                confined &= !touched.is_empty();
            }
        }
    }
    let exact_rate = exact_ok as f64 / pairs as f64;
    let sampled_rate = sampled_ok as f64 / pairs as f64;
    outcome(
        exact_ok == pairs && sampled_rate >= 0.95 && tie_runs == 20 && confined,
        format!(
            "exact {:.1}% and sampled {:.1}% of {pairs} (run, size) pairs optimal; copy pairs: ties flagged in {tie_runs}/20 runs, \
             {mismatches} mismatches, all touching the copies: {confined}",
            100.0 * exact_rate,
            100.0 * sampled_rate
        ),
    )
}

/// Default-config MNIST run shared by criteria 4, 5 and 7.
struct MnistRun {
    full_accuracy: f64,
    full_epochs: usize,
    subnet_accuracy: Vec<f64>,
    dir: PathBuf,
}

fn mnist_run() -> Result<&'static MnistRun, String> {
    static RUN: std::sync::OnceLock<Result<MnistRun, String>> = std::sync::OnceLock::new();
    RUN.get_or_init(|| {
        let mut config = mnist_config("main")?;
        config.full_training.max_epochs = 100;
        let mut run = Run::open(config).map_err(err)?;
        let full = run.train_full().map_err(err)?;
        let subnets = run.train_subnets().map_err(err)?;
        run.compose().map_err(err)?;
        run.trace(ModelKind::Composite).map_err(err)?;
        run.analyze("composite", None, false).map_err(err)?;
        run.knockout(ModelKind::Composite).map_err(err)?;
        run.regress(ModelKind::Composite).map_err(err)?;
        let last = |o: &relay_scope::network::TrainOutcome| o.history.last().map_or(0.0, |e| e.accuracy);
        Ok(MnistRun {
            full_accuracy: last(&full),
            full_epochs: full.history.len(),
            subnet_accuracy: subnets.iter().map(last).collect(),
            dir: run.dir.clone(),
        })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn criterion_4() -> Result<Outcome, String> {
    let run = mnist_run()?;
    let worst = run.subnet_accuracy.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        run.full_accuracy >= 0.95 && run.full_epochs <= 100 && worst >= 0.97,
        format!(
            "full model {:.4} after {} epochs; weakest sub-network {:.4}",
            run.full_accuracy, run.full_epochs, worst
        ),
    )
}

fn criterion_5() -> Result<Outcome, String> {
    let run = mnist_run()?;
    let chains =
        relay_scope_cli::pipeline::read_chains(&run.dir.join("analysis/composite/chains.json")).map_err(err)?;
    let importance = importance_matrix(&chains).map_err(err)?;
    let essentiality = essentiality_matrix(&chains).map_err(err)?;
    let mut recovered = Vec::new();
    let (mut in_block, mut off_block) = (Vec::new(), Vec::new());
    for c in 0..10 {
        let top: Vec<usize> = importance.ranking(c).into_iter().take(2).collect();
        if NodeSet::from_nodes(top) == NodeSet::from_nodes([2 * c, 2 * c + 1]) {
            recovered.push(c);
        }
        for n in 0..20 {
            let v = essentiality.get(n, c);
            if n / 2 == c {
                in_block.push(v)
            } else {
                off_block.push(v)
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&off_block) / mean(&in_block);
    outcome(
        recovered.len() >= 8 && ratio < 0.2,
        format!(
            "block pair is top-2 for {}/10 numerals {recovered:?}; off-block/in-block essentiality {ratio:.3}",
            recovered.len()
        ),
    )
}

fn criterion_6() -> Result<Outcome, String> {
    let mut config = mnist_config("hidden14")?;
    config.full_hidden = 14;
    config.full_training.max_epochs = 100;
    let mut run = Run::open(config).map_err(err)?;
    run.train_full().map_err(err)?;
    run.trace(ModelKind::Full).map_err(err)?;
    run.analyze("full", None, true).map_err(err)?;
    let text = std::fs::read_to_string(run.path("analysis/full/exhaustive.json")).map_err(err)?;
    let reports: Vec<ExhaustiveReport> = serde_json::from_str(&text).map_err(err)?;
    let worst = reports.iter().map(|r| r.fraction_at_least_greedy()).fold(0.0, f64::max);
    outcome(
        reports.len() == 10 && worst < 0.05,
        format!(
            "largest fraction of sets matching or beating greedy: {:.4}%",
            100.0 * worst
        ),
    )
}

fn criterion_7() -> Result<Outcome, String> {
    let run = mnist_run()?;
    let text = std::fs::read_to_string(run.dir.join("knockout/composite/regression.json")).map_err(err)?;
    let fits: Vec<relay_scope_cli::pipeline::NumeralRegression> = serde_json::from_str(&text).map_err(err)?;
    let (mut signed, mut by_magnitude) = (Vec::new(), 0);
    for fit in fits.iter().filter(|f| f.numeral.is_some()) {
        if let Some(r) = &fit.result {
            let significant = r.information.p < 0.01;
            if significant && r.information.standardized > r.set_size.standardized {
                signed.push(fit.numeral.unwrap());
            }
            by_magnitude +=
                usize::from(significant && r.information.standardized.abs() > r.set_size.standardized.abs());
        }
    }
    outcome(
        signed.len() >= 7,
        format!(
            "std beta_I > std beta_S with p < 0.01 for {}/10 numerals {signed:?} ({by_magnitude}/10 comparing magnitudes)",
            signed.len()
        ),
    )
}

fn criterion_8() -> Result<Outcome, String> {
    let data = data_dir().ok_or_else(|| format!("MNIST files not found; set {DATA_DIR_ENV}"))?;
    let config_dir = scratch("determinism");
    std::fs::create_dir_all(&config_dir).map_err(err)?;
    let config = config_dir.join("reduced.json");
    std::fs::write(
        &config,
        r#"{
  "data": {"train_limit": 10000, "test_limit": 1000},
  "full_hidden": 10,
  "full_training": {"target_accuracy": 1.0, "max_epochs": 4},
  "subnet_training": {"target_accuracy": 0.97, "max_epochs": 8},
  "random_knockout_sets": 5,
  "seed": 7
}"#,
    )
    .map_err(err)?;
    let mut manifests = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "3")] {
        let out = Command::new(env!("CARGO_BIN_EXE_relay-scope"))
            .arg("--config")
            .arg(&config)
            .arg("--data-dir")
            .arg(&data)
            .arg("--output-dir")
            .arg(config_dir.join(run))
            .args(["--threads", threads, "pipeline", "--skip-fetch", "--exhaustive"])
            .output()
            .map_err(err)?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return outcome(
                false,
                format!("pipeline run {run} exited with {}: {}", out.status, stderr.trim()),
            );
        }
        manifests.push(RunManifest::load(&config_dir.join(run).join("manifest.json")).map_err(err)?);
    }
    let digests = |m: &RunManifest| -> BTreeMap<String, String> {
        m.artifacts.iter().map(|(k, a)| (k.clone(), a.sha256.clone())).collect()
    };
    let (a, b) = (digests(&manifests[0]), digests(&manifests[1]));
    let differing: Vec<&String> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).collect();
    let counted = |prefix: &str| a.keys().filter(|k| k.starts_with(prefix)).count();

    let against = Command::new(env!("CARGO_BIN_EXE_relay-scope"))
        .arg("--config")
        .arg(&config)
        .arg("--data-dir")
        .arg(&data)
        .arg("--output-dir")
        .arg(config_dir.join("b"))
        .args(["report", "--against"])
        .arg(config_dir.join("a").join("manifest.json"))
        .output()
        .map_err(err)?;
    outcome(
        differing.is_empty()
            && counted("models/") > 0
            && counted("traces/") > 0
            && counted("report/") > 0
            && against.status.success(),
        format!(
            "{} artifacts compared ({} models, {} traces, {} report files) across 1 and 3 threads; {} differ",
            a.len(),
            counted("models/"),
            counted("traces/"),
            counted("report/"),
            differing.len()
        ),
    )
}

fn main() {
    let strict = std::env::var("RELAY_SCOPE_STRICT").is_ok_and(|v| v == "1");
    let checks: [(usize, Check); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let (mut failed, mut broken) = (0, 0);
    for (n, check) in checks {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check);
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(Ok(o)) => {
                println!(
                    "[{}] criterion {n}: {} ({secs:.1}s)",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.detail
                );
                failed += usize::from(!o.pass);
            }
            Ok(Err(e)) => {
                println!("[FAIL] criterion {n}: could not run: {e}");
                failed += 1;
            }
            Err(_) => {
                println!("[FAIL] criterion {n}: panicked");
                broken += 1;
            }
        }
    }
    println!("acceptance: {} of 8 criteria pass", 8 - failed - broken);
    if broken > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
