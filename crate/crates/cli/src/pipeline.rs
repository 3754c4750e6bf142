//! Pipeline stages. Each stage reads the artifacts of earlier stages from the
//! run directory, so any stage can be rerun on its own.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use relay_scope::dataset::{fetch_remote, sha256_file, CLASSES, PIXELS};
use relay_scope::discretize::{bin_trace, BinnedTrace};
use relay_scope::network::{build_composite, train, Targets, TrainOutcome};
use relay_scope::perturb::{
    fit_regression, random_sets, read_records_csv, write_records_csv, KnockoutProbe, KnockoutRecord, RegressionResult,
};
use relay_scope::search::{
    essentiality_matrix, exhaustive_best_sets, format_bits, greedy_all_numerals, importance_matrix,
    write_size_summary_csv, ExhaustiveOptions, ExhaustiveReport, GreedyChain,
};
use relay_scope::synth::{exact_truth, generate, random_channel, ChannelSpec};
use relay_scope::{Dataset, DenseNet, Error, KnockoutMask, RelayKernel, Result, Split};
use serde::{Deserialize, Serialize};

use crate::config::{stage_seed, ExperimentConfig, RemoteFile};
use crate::manifest::{now_unix, write_atomic, RunManifest, StageRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Full,
    Composite,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Full => "full",
            ModelKind::Composite => "composite",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn model_path(model: ModelKind) -> String {
    format!("models/{model}.json")
}

pub fn subnet_path(numeral: usize) -> String {
    format!("models/subnet_{numeral}.json")
}

pub fn binned_path(name: &str) -> String {
    format!("traces/{name}_binned.csv")
}

pub fn chains_path(name: &str) -> String {
    format!("analysis/{name}/chains.json")
}

pub fn records_path(name: &str) -> String {
    format!("knockout/{name}/records.csv")
}

/// Files written by one stage, kept so a failure can remove them.
pub struct StageOutput<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl StageOutput<'_> {
    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<()> {
        self.written.push(relative.to_string());
        write_atomic(&self.dir.join(relative), bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }
}

pub struct Run {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    manifest: RunManifest,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainingLog {
    reached_target: bool,
    target_accuracy: f64,
    history: Vec<relay_scope::network::EpochStats>,
}

impl TrainingLog {
    fn new(outcome: &TrainOutcome, target_accuracy: f64) -> Self {
        TrainingLog {
            reached_target: outcome.reached_target,
            target_accuracy,
            history: outcome.history.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NumeralRegression {
    pub numeral: Option<usize>,
    pub records: usize,
    pub result: Option<RegressionResult>,
    pub error: Option<String>,
}

impl Run {
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dir = config.output_dir.clone();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest = RunManifest::open(&dir, &config.digest())?;
        Ok(Run { config, dir, manifest })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.dir.join(relative)
    }

    fn stage<T>(
        &mut self,
        name: &str,
        body: impl FnOnce(&ExperimentConfig, &Path, &mut StageOutput) -> Result<T>,
    ) -> Result<T> {
        log::info!("stage {name}");
        let started = now_unix();
        let mut out = StageOutput {
            dir: &self.dir,
            written: Vec::new(),
        };
        let result = body(&self.config, &self.dir, &mut out);
        let written = out.written;
        let ok = result.is_ok();
        if ok {
            for rel in &written {
                self.manifest.record(&self.dir, rel, name)?;
            }
        } else {
            for rel in &written {
                let _ = fs::remove_file(self.dir.join(rel));
                self.manifest.mark_invalid(rel);
            }
        }
        self.manifest.stages.push(StageRun {
            stage: name.to_string(),
            started_unix: started,
            finished_unix: now_unix(),
            ok,
        });
        let saved = self.manifest.save(&self.dir);
        let value = result?;
        saved?;
        Ok(value)
    }

    /// Makes sure every data file is present with the configured digest,
    /// downloading missing ones.
    pub fn fetch(&mut self) -> Result<()> {
        let data_dir = self.config.data.resolved_dir();
        let files: Vec<RemoteFile> = self.config.data.files().into_iter().cloned().collect();
        self.stage("fetch", |_, _, _| {
            for f in &files {
                let dest = data_dir.join(&f.name);
                match &f.url {
                    Some(url) => {
                        fetch_remote(url, &f.sha256, &dest)?;
                    }
                    None => verify(&dest, &f.sha256)?,
                }
            }
            Ok(())
        })?;
        for f in &files {
            let key = format!("data/{}", f.name);
            self.manifest.artifacts.insert(
                key,
                crate::manifest::Artifact {
                    sha256: f.sha256.clone(),
                    bytes: fs::metadata(data_dir.join(&f.name)).map(|m| m.len()).unwrap_or(0),
                    stage: "fetch".into(),
                },
            );
        }
        self.manifest.save(&self.dir)
    }

    pub fn train_full(&mut self) -> Result<TrainOutcome> {
        self.stage("train-full", |config, _, out| {
            let data = load_split(config, Split::Train)?;
            let cfg = config.full_train_config();
            let net = DenseNet::random(PIXELS, config.full_hidden, CLASSES, cfg.seed);
            let outcome = train(net, &data, &Targets::one_hot(&data), &cfg)?;
            if !outcome.reached_target {
                log::warn!("full model stopped below the target accuracy {}", cfg.target_accuracy);
            }
            out.write(&model_path(ModelKind::Full), outcome.net.to_json()?.as_bytes())?;
            out.write_json(
                "models/full_training.json",
                &TrainingLog::new(&outcome, cfg.target_accuracy),
            )?;
            Ok(outcome)
        })
    }

    pub fn train_subnets(&mut self) -> Result<Vec<TrainOutcome>> {
        self.stage("train-subnets", |config, _, out| {
            let data = load_split(config, Split::Train)?;
            let mut outcomes = Vec::with_capacity(CLASSES);
            let mut logs = Vec::with_capacity(CLASSES);
            for c in 0..CLASSES {
                let cfg = config.subnet_train_config(c);
                let net = DenseNet::random(PIXELS, 2, 1, cfg.seed);
                let outcome = train(net, &data, &Targets::one_vs_rest(&data, c)?, &cfg)?;
                if !outcome.reached_target {
                    log::warn!(
                        "sub-network {c} stopped below the target accuracy {}",
                        cfg.target_accuracy
                    );
                }
                out.write(&subnet_path(c), outcome.net.to_json()?.as_bytes())?;
                logs.push(TrainingLog::new(&outcome, cfg.target_accuracy));
                outcomes.push(outcome);
            }
            out.write_json("models/subnet_training.json", &logs)?;
            Ok(outcomes)
        })
    }

    pub fn compose(&mut self) -> Result<DenseNet> {
        self.stage("compose", |_, dir, out| {
            let subnets = (0..CLASSES)
                .map(|c| DenseNet::load(&dir.join(subnet_path(c))))
                .collect::<Result<Vec<_>>>()?;
            let composite = build_composite(&subnets)?;
            out.write(&model_path(ModelKind::Composite), composite.to_json()?.as_bytes())?;
            Ok(composite)
        })
    }

    pub fn trace(&mut self, model: ModelKind) -> Result<BinnedTrace> {
        self.stage(&format!("trace:{model}"), |config, dir, out| {
            let net = DenseNet::load(&dir.join(model_path(model)))?;
            let data = load_split(config, config.entropy_split)?;
            let trace = net.record_trace(&data, KnockoutMask::NONE)?;
            let (binned, spec) = bin_trace(&trace, config.binning)?;
            let degenerate = spec.degenerate_nodes();
            if !degenerate.is_empty() {
                log::warn!("{model}: constant activations on nodes {degenerate}");
            }
            let mut buf = Vec::new();
            trace.write_csv(&mut buf)?;
            out.write(&format!("traces/{model}_activations.csv"), &buf)?;
            let mut buf = Vec::new();
            binned.write_csv(&mut buf)?;
            out.write(&binned_path(model.name()), &buf)?;
            out.write_json(&format!("traces/{model}_bins.json"), &spec)?;
            Ok(binned)
        })
    }

    /// Greedy chains for all numerals of a binned trace, plus the
    /// exhaustive oracle when asked.
    pub fn analyze(&mut self, name: &str, trace: Option<&Path>, exhaustive: bool) -> Result<Vec<GreedyChain>> {
        let source = trace
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.path(&binned_path(name)));
        self.stage(&format!("analyze:{name}"), |config, _, out| {
            let binned = read_binned(&source)?;
            let chains = greedy_all_numerals(&binned, config.tie_tolerance)?;
            for chain in &chains {
                let ties = chain.tie_steps();
                if !ties.is_empty() {
                    log::info!("{name}, numeral {}: ties at steps {ties:?}", chain.numeral);
                }
            }
            out.write_json(&chains_path(name), &chains)?;
            let mut buf = Vec::new();
            importance_matrix(&chains)?.write_csv(&mut buf)?;
            out.write(&format!("analysis/{name}/importance.csv"), &buf)?;
            let mut buf = Vec::new();
            essentiality_matrix(&chains)?.write_csv(&mut buf)?;
            out.write(&format!("analysis/{name}/essentiality.csv"), &buf)?;

            if exhaustive {
                let reports = (0..CLASSES)
                    .map(|c| {
                        let options = ExhaustiveOptions {
                            hard_limit: config.exhaustive.hard_limit,
                            size_cap: config.exhaustive.size_cap,
                            seed: config.derived_seed(stage_seed::EXHAUSTIVE) + c as u64,
                            tie_tolerance: config.tie_tolerance,
                        };
                        let report = exhaustive_best_sets(&binned, c, &options)?;
                        log::info!(
                            "{name}, numeral {c}: {:.4}% of sets match or beat greedy",
                            100.0 * report.fraction_at_least_greedy()
                        );
                        Ok(report)
                    })
                    .collect::<Result<Vec<ExhaustiveReport>>>()?;
                out.write_json(&format!("analysis/{name}/exhaustive.json"), &reports)?;
                let mut buf = Vec::new();
                write_size_summary_csv(&reports, &mut buf)?;
                out.write(&format!("analysis/{name}/exhaustive_sizes.csv"), &buf)?;
            }
            Ok(chains)
        })
    }

    pub fn knockout(&mut self, model: ModelKind) -> Result<Vec<KnockoutRecord>> {
        self.stage(&format!("knockout:{model}"), |config, dir, out| {
            let net = DenseNet::load(&dir.join(model_path(model)))?;
            let chains = read_chains(&dir.join(chains_path(model.name())))?;
            let data = load_split(config, config.knockout_split)?;
            let probe = KnockoutProbe::new(&net, &data)?;
            let binned = if config.random_knockout_sets > 0 {
                Some(read_binned(&dir.join(binned_path(model.name())))?)
            } else {
                None
            };
            let mut records = Vec::new();
            for chain in &chains {
                records.extend(probe.sweep(chain)?);
                if let Some(binned) = &binned {
                    let kernel = RelayKernel::new(binned, chain.numeral)?;
                    let seed = config.derived_seed(stage_seed::RANDOM_KNOCKOUTS) + chain.numeral as u64;
                    let sets = random_sets(net.hidden(), config.random_knockout_sets, seed);
                    records.extend(probe.records(&kernel, &sets)?);
                }
            }
            let mut buf = Vec::new();
            write_records_csv(&records, &mut buf)?;
            out.write(&records_path(model.name()), &buf)?;
            Ok(records)
        })
    }

    /// Per-numeral fits and one pooled fit. A degenerate numeral is reported
    /// in place rather than failing the stage.
    pub fn regress(&mut self, model: ModelKind) -> Result<Vec<NumeralRegression>> {
        self.stage(&format!("regress:{model}"), |_, dir, out| {
            let path = dir.join(records_path(model.name()));
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let records = read_records_csv(file)?;
            let mut fits: Vec<NumeralRegression> = (0..CLASSES)
                .map(|c| {
                    let subset: Vec<_> = records.iter().filter(|r| r.numeral == c).cloned().collect();
                    regression_entry(Some(c), &subset)
                })
                .collect();
            fits.push(regression_entry(None, &records));
            out.write_json(&format!("knockout/{model}/regression.json"), &fits)?;
            Ok(fits)
        })
    }

    /// Collects the figure-ready CSVs under `report/`.
    pub fn report(&mut self) -> Result<Vec<String>> {
        self.stage("report", |_, dir, out| {
            let mut written = Vec::new();
            let mut names: Vec<String> = Vec::new();
            let analysis = dir.join("analysis");
            if analysis.is_dir() {
                for entry in fs::read_dir(&analysis).map_err(|e| Error::io(&analysis, e))? {
                    let entry = entry.map_err(|e| Error::io(&analysis, e))?;
                    if entry.path().is_dir() {
                        names.push(entry.file_name().to_string_lossy().into_owned());
                    }
                }
            }
            names.sort();
            if names.is_empty() {
                return Err(Error::Data("nothing to report: run `analyze` first".into()));
            }
            for name in &names {
                for (src, dst) in [
                    (
                        format!("analysis/{name}/importance.csv"),
                        format!("report/{name}_importance.csv"),
                    ),
                    (
                        format!("analysis/{name}/essentiality.csv"),
                        format!("report/{name}_essentiality.csv"),
                    ),
                    (
                        format!("analysis/{name}/exhaustive_sizes.csv"),
                        format!("report/{name}_greedy_vs_exhaustive.csv"),
                    ),
                    (records_path(name), format!("report/{name}_knockout.csv")),
                ] {
                    let path = dir.join(&src);
                    if path.exists() {
                        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                        out.write(&dst, &bytes)?;
                        written.push(dst);
                    }
                }
                let chains = read_chains(&dir.join(chains_path(name)))?;
                let dst = format!("report/{name}_chains.csv");
                out.write(&dst, &chains_csv(&chains)?)?;
                written.push(dst);

                let reg = dir.join(format!("knockout/{name}/regression.json"));
                if reg.exists() {
                    let text = fs::read_to_string(&reg).map_err(|e| Error::io(&reg, e))?;
                    let fits: Vec<NumeralRegression> = serde_json::from_str(&text)?;
                    let dst = format!("report/{name}_regression.csv");
                    out.write(&dst, &regression_csv(&fits)?)?;
                    written.push(dst);
                }
            }
            Ok(written)
        })
    }

    pub fn synth(&mut self, request: &SynthRequest) -> Result<()> {
        self.stage("synth", |config, _, out| {
            let seed = config.derived_seed(stage_seed::SYNTH);
            let spec = match &request.spec {
                Some(path) => ChannelSpec::load(path)?,
                None => random_channel(request.hidden, seed, request.majority, request.copy_pair)?,
            };
            out.write(
                &format!("synth/{}_spec.json", request.name),
                (spec.to_json()? + "\n").as_bytes(),
            )?;
            let trace = generate(&spec, request.samples, seed)?;
            let mut buf = Vec::new();
            trace.write_csv(&mut buf)?;
            out.write(&format!("synth/{}_trace.csv", request.name), &buf)?;
            if request.exact {
                out.write_json(&format!("synth/{}_truth.json", request.name), &exact_truth(&spec)?)?;
            }
            Ok(())
        })
    }

    /// Every stage in order for both models.
    pub fn pipeline(&mut self, fetch: bool, exhaustive: bool) -> Result<()> {
        if fetch {
            self.fetch()?;
        }
        self.train_full()?;
        self.train_subnets()?;
        self.compose()?;
        for model in [ModelKind::Full, ModelKind::Composite] {
            self.trace(model)?;
            self.analyze(model.name(), None, exhaustive)?;
            self.knockout(model)?;
            self.regress(model)?;
        }
        self.report()?;
        Ok(())
    }
}

pub struct SynthRequest {
    pub name: String,
    pub spec: Option<PathBuf>,
    pub hidden: usize,
    pub samples: usize,
    pub majority: bool,
    pub copy_pair: bool,
    pub exact: bool,
}

fn regression_entry(numeral: Option<usize>, records: &[KnockoutRecord]) -> NumeralRegression {
    match fit_regression(records) {
        Ok(result) => NumeralRegression {
            numeral,
            records: records.len(),
            result: Some(result),
            error: None,
        },
        Err(e) => {
            log::warn!("regression for numeral {numeral:?}: {e}");
            NumeralRegression {
                numeral,
                records: records.len(),
                result: None,
                error: Some(e.to_string()),
            }
        }
    }
}

fn chains_csv(chains: &[GreedyChain]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["numeral", "step", "node", "info_before", "info_after", "delta", "tie"])?;
    for chain in chains {
        for (step, r) in chain.removals.iter().enumerate() {
            w.write_record([
                chain.numeral.to_string(),
                step.to_string(),
                r.node.to_string(),
                format_bits(r.before),
                format_bits(r.after),
                format_bits(r.delta),
                (r.is_tie() as u8).to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

fn regression_csv(fits: &[NumeralRegression]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "numeral",
        "records",
        "beta_s",
        "beta_i",
        "std_beta_s",
        "std_beta_i",
        "t_s",
        "t_i",
        "p_s",
        "p_i",
        "r_squared",
        "error",
    ])?;
    for fit in fits {
        let numeral = fit.numeral.map_or("all".to_string(), |c| c.to_string());
        let mut row = vec![numeral, fit.records.to_string()];
        match &fit.result {
            Some(r) => {
                row.extend(
                    [
                        r.set_size.estimate,
                        r.information.estimate,
                        r.set_size.standardized,
                        r.information.standardized,
                        r.set_size.t,
                        r.information.t,
                        r.set_size.p,
                        r.information.p,
                        r.r_squared,
                    ]
                    .map(format_bits),
                );
                row.push(String::new());
            }
            None => {
                row.extend(std::iter::repeat_n(String::new(), 9));
                row.push(fit.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

fn verify(path: &Path, sha256: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Data(format!(
            "{} is missing and no URL is configured; set data.dir or {}",
            path.display(),
            crate::config::DATA_DIR_ENV
        )));
    }
    let actual = sha256_file(path)?;
    if actual != sha256.to_ascii_lowercase() {
        return Err(Error::Integrity {
            path: path.to_path_buf(),
            expected: sha256.to_string(),
            actual,
        });
    }
    Ok(())
}

/// Loads and verifies one split, truncated to the configured limit.
pub fn load_split(config: &ExperimentConfig, split: Split) -> Result<Dataset> {
    let dir = config.data.resolved_dir();
    let (images, labels) = config.data.split_files(split);
    let (images_path, labels_path) = (dir.join(&images.name), dir.join(&labels.name));
    verify(&images_path, &images.sha256)?;
    verify(&labels_path, &labels.sha256)?;
    let data = Dataset::load_idx(&images_path, &labels_path, split)?;
    Ok(match config.data.limit(split) {
        Some(n) if n < data.len() => data.truncated(n),
        _ => data,
    })
}

pub fn read_binned(path: &Path) -> Result<BinnedTrace> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BinnedTrace::read_csv(std::io::BufReader::new(file))
}

pub fn read_chains(path: &Path) -> Result<Vec<GreedyChain>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Compares the current report files with the digests in a saved manifest.
/// Returns `(file, status)` lines; any status other than `identical` is a
/// difference.
pub fn compare_reports(run: &Run, saved: &RunManifest) -> Result<Vec<(String, &'static str)>> {
    let mut lines = Vec::new();
    let current = &run.manifest().artifacts;
    let keys: std::collections::BTreeSet<&String> = saved
        .artifacts
        .keys()
        .chain(current.keys())
        .filter(|k| k.starts_with("report/"))
        .collect();
    for key in keys {
        let status = match (saved.artifacts.get(key), current.get(key)) {
            (Some(a), Some(_)) => {
                let path = run.path(key);
                if path.exists() && sha256_file(&path)? == a.sha256 {
                    "identical"
                } else {
                    "differs"
                }
            }
            (Some(_), None) => "missing",
            (None, _) => "new",
        };
        lines.push((key.clone(), status));
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_stage_removes_its_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            output_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let mut run = Run::open(config).unwrap();
        run.stage("good", |_, _, out| out.write("a/kept.txt", b"1")).unwrap();
        let failed: Result<()> = run.stage("bad", |_, _, out| {
            out.write("a/partial.txt", b"2")?;
            Err(Error::Data("boom".into()))
        });
        assert!(failed.is_err());
        assert!(dir.path().join("a/kept.txt").exists());
        assert!(!dir.path().join("a/partial.txt").exists());

        let manifest = RunManifest::load(&dir.path().join(crate::manifest::MANIFEST_FILE)).unwrap();
        assert!(manifest.artifacts.contains_key("a/kept.txt"));
        assert_eq!(manifest.invalid, vec!["a/partial.txt".to_string()]);
        let oks: Vec<bool> = manifest.stages.iter().map(|s| s.ok).collect();
        assert_eq!(oks, vec![true, false]);
    }
}
