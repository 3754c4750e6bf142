use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use relay_scope::{Error, ErrorCategory, Result};

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::pipeline::{compare_reports, ModelKind, Run, SynthRequest};

#[derive(Debug, Parser)]
#[command(
    name = "relay-scope",
    version,
    about = "Relay-information analysis of small neural networks"
)]
pub struct Cli {
    /// JSON experiment config; unset fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory, overriding the config.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Directory holding the MNIST files, overriding the config.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download or verify the MNIST files.
    Fetch,
    /// Train the fully connected classifier.
    TrainFull,
    /// Train the ten one-vs-rest detectors.
    TrainSubnets,
    /// Stack the detectors into one block-structured network.
    Compose,
    /// Record and binarize hidden activations.
    Trace(ModelArg),
    /// Greedy relay chains, importance and essentiality.
    Analyze(AnalyzeArgs),
    /// Knock out the chain's node sets and measure accuracy loss.
    Knockout(ModelArg),
    /// Regress knockout effect on set size and relay information.
    Regress(ModelArg),
    /// Collect report CSVs, optionally comparing them with an earlier run.
    Report(ReportArgs),
    /// Sample a synthetic channel with known relay structure.
    Synth(SynthArgs),
    /// Every stage for both models.
    Pipeline(PipelineArgs),
    /// Print the effective config.
    ShowConfig,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    #[arg(long, value_enum)]
    pub model: ModelKind,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum, conflicts_with = "trace", required_unless_present = "trace")]
    pub model: Option<ModelKind>,
    /// A binned trace CSV from anywhere, e.g. `synth` output.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Name of the analysis directory for `--trace`; defaults to the file stem.
    #[arg(long, requires = "trace")]
    pub name: Option<String>,
    /// Also enumerate every subset (at most 20 hidden nodes by default).
    #[arg(long)]
    pub exhaustive: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Manifest of an earlier run; exits nonzero if any report file differs.
    #[arg(long)]
    pub against: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Channel spec JSON; without it a random channel is drawn.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long)]
    pub majority: bool,
    #[arg(long)]
    pub copy_pair: bool,
    /// Also write the exact ground truth.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value = "channel")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub exhaustive: bool,
    /// Use the data directory as is, without downloading.
    #[arg(long)]
    pub skip_fetch: bool,
}

pub fn exit_code(error: &Error) -> i32 {
    match error.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numerical => 4,
    }
}

pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(dir) = &cli.data_dir {
        config.data.dir = Some(dir.clone());
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::Argument("--threads must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let config = effective_config(cli)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }
    let mut run = Run::open(config)?;
    match &cli.command {
        Command::Fetch => run.fetch()?,
        Command::TrainFull => {
            let outcome = run.train_full()?;
            let last = outcome.history.last().map_or(0.0, |e| e.accuracy);
            println!(
                "full model: {} epochs, training accuracy {last:.4}",
                outcome.history.len()
            );
        }
        Command::TrainSubnets => {
            for (c, outcome) in run.train_subnets()?.iter().enumerate() {
                let last = outcome.history.last().map_or(0.0, |e| e.accuracy);
                println!(
                    "sub-network {c}: {} epochs, training accuracy {last:.4}",
                    outcome.history.len()
                );
            }
        }
        Command::Compose => {
            run.compose()?;
        }
        Command::Trace(m) => {
            let binned = run.trace(m.model)?;
            println!(
                "{}: {} samples, {} hidden nodes",
                m.model,
                binned.len(),
                binned.hidden()
            );
        }
        Command::Analyze(a) => {
            let name = match (&a.model, &a.trace) {
                (Some(model), _) => model.name().to_string(),
                (None, Some(path)) => a.name.clone().unwrap_or_else(|| {
                    path.file_stem()
                        .map_or("trace".into(), |s| s.to_string_lossy().into_owned())
                }),
                (None, None) => return Err(Error::Argument("give --model or --trace".into())),
            };
            for chain in run.analyze(&name, a.trace.as_deref(), a.exhaustive)? {
                let order: Vec<String> = chain.removal_order().iter().map(|n| n.to_string()).collect();
                println!(
                    "numeral {}: I_R = {:.6} bits, removal order {}",
                    chain.numeral,
                    chain.full_information,
                    order.join(" ")
                );
            }
        }
        Command::Knockout(m) => {
            let records = run.knockout(m.model)?;
            println!("{}: {} knockout records", m.model, records.len());
        }
        Command::Regress(m) => {
            for fit in run.regress(m.model)? {
                let label = fit.numeral.map_or("all".to_string(), |c| c.to_string());
                match (&fit.result, &fit.error) {
                    (Some(r), _) => println!(
                        "numeral {label}: std beta size {:.4} (p {:.2e}), std beta info {:.4} (p {:.2e}), R^2 {:.4}",
                        r.set_size.standardized, r.set_size.p, r.information.standardized, r.information.p, r.r_squared
                    ),
                    (None, Some(e)) => println!("numeral {label}: {e}"),
                    (None, None) => {}
                }
            }
        }
        Command::Report(r) => {
            let written = run.report()?;
            println!("wrote {} report files", written.len());
            if let Some(path) = &r.against {
                let saved = RunManifest::load(path)?;
                let lines = compare_reports(&run, &saved)?;
                let mut differing = 0;
                for (file, status) in &lines {
                    println!("{status:>9}  {file}");
                    differing += usize::from(*status != "identical");
                }
                if differing > 0 {
                    return Err(Error::Consistency(format!(
                        "{differing} of {} report files differ from {}",
                        lines.len(),
                        path.display()
                    )));
                }
            }
        }
        Command::Synth(s) => run.synth(&SynthRequest {
            name: s.name.clone(),
            spec: s.spec.clone(),
            hidden: s.hidden,
            samples: s.samples,
            majority: s.majority,
            copy_pair: s.copy_pair,
            exact: s.exact,
        })?,
        Command::Pipeline(p) => run.pipeline(!p.skip_fetch, p.exhaustive)?,
        Command::ShowConfig => unreachable!(),
    }
    Ok(())
}
