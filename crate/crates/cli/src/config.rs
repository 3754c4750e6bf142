use std::path::{Path, PathBuf};

use relay_scope::dataset::sha256_hex;
use relay_scope::discretize::BinningStrategy;
use relay_scope::network::TrainConfig;
use relay_scope::search::{DEFAULT_TIE_TOLERANCE, EXHAUSTIVE_HARD_LIMIT};
use relay_scope::{Error, Result, Split};
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "RELAY_SCOPE_DATA_DIR";
const DEFAULT_DATA_DIR: &str = "data/mnist";

/// Fixed offsets added to the master seed, one per randomized stage.
pub mod stage_seed {
    pub const TRAIN_FULL: u64 = 1;
    pub const EXHAUSTIVE: u64 = 2;
    pub const RANDOM_KNOCKOUTS: u64 = 3;
    pub const SYNTH: u64 = 4;
    /// Sub-network `c` uses `SUBNET_BASE + c`.
    pub const SUBNET_BASE: u64 = 10;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteFile {
    /// File name inside the data directory.
    pub name: String,
    pub url: Option<String>,
    /// sha256 of the stored (uncompressed) file.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Falls back to `$RELAY_SCOPE_DATA_DIR`, then `data/mnist`.
    pub dir: Option<PathBuf>,
    pub train_images: RemoteFile,
    pub train_labels: RemoteFile,
    pub test_images: RemoteFile,
    pub test_labels: RemoteFile,
    /// Use only the first samples of each split; for quick runs.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

fn mnist_file(name: &str, sha256: &str) -> RemoteFile {
    RemoteFile {
        name: name.to_string(),
        url: Some(format!("https://ossci-datasets.s3.amazonaws.com/mnist/{name}.gz")),
        sha256: sha256.to_string(),
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            train_images: mnist_file(
                "train-images-idx3-ubyte",
                "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
            ),
            train_labels: mnist_file(
                "train-labels-idx1-ubyte",
                "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
            ),
            test_images: mnist_file(
                "t10k-images-idx3-ubyte",
                "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
            ),
            test_labels: mnist_file(
                "t10k-labels-idx1-ubyte",
                "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
            ),
            train_limit: None,
            test_limit: None,
        }
    }
}

impl DataConfig {
    pub fn resolved_dir(&self) -> PathBuf {
        self.dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    pub fn files(&self) -> [&RemoteFile; 4] {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
    }

    pub fn split_files(&self, split: Split) -> (&RemoteFile, &RemoteFile) {
        match split {
            Split::Train => (&self.train_images, &self.train_labels),
            Split::Test => (&self.test_images, &self.test_labels),
        }
    }

    pub fn limit(&self, split: Split) -> Option<usize> {
        match split {
            Split::Train => self.train_limit,
            Split::Test => self.test_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExhaustiveConfig {
    pub hard_limit: usize,
    pub size_cap: usize,
}

impl Default for ExhaustiveConfig {
    fn default() -> Self {
        ExhaustiveConfig {
            hard_limit: EXHAUSTIVE_HARD_LIMIT,
            size_cap: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub full_hidden: usize,
    /// Training of the full model; its `seed` is replaced by the derived seed.
    pub full_training: TrainConfig,
    pub subnet_training: TrainConfig,
    /// Split whose activations feed the entropy estimates.
    pub entropy_split: Split,
    pub knockout_split: Split,
    pub binning: BinningStrategy,
    pub tie_tolerance: f64,
    pub exhaustive: ExhaustiveConfig,
    /// Extra random knockout sets per numeral, on top of the chain's sets.
    pub random_knockout_sets: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            full_hidden: 20,
            full_training: TrainConfig {
                target_accuracy: 0.95,
                ..TrainConfig::default()
            },
            subnet_training: TrainConfig {
                target_accuracy: 0.98,
                ..TrainConfig::default()
            },
            entropy_split: Split::Test,
            knockout_split: Split::Test,
            binning: BinningStrategy::Kmeans,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
            exhaustive: ExhaustiveConfig::default(),
            random_knockout_sets: 0,
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.full_training.validate()?;
        self.subnet_training.validate()?;
        if self.full_hidden == 0 || self.full_hidden > 30 {
            return Err(Error::Validation(format!(
                "full_hidden must be in 1..=30, got {}",
                self.full_hidden
            )));
        }
        if self.tie_tolerance.is_nan() || self.tie_tolerance < 0.0 {
            return Err(Error::Validation("tie_tolerance must be nonnegative".into()));
        }
        for f in self.data.files() {
            if f.sha256.len() != 64 || !f.sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Error::Validation(format!("{}: sha256 must be 64 hex digits", f.name)));
            }
            if f.name.is_empty() || f.name.contains('/') {
                return Err(Error::Validation(format!("invalid data file name {:?}", f.name)));
            }
        }
        if self.data.train_limit == Some(0) || self.data.test_limit == Some(0) {
            return Err(Error::Validation("sample limits must be positive".into()));
        }
        Ok(())
    }

    pub fn derived_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn full_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.derived_seed(stage_seed::TRAIN_FULL),
            ..self.full_training.clone()
        }
    }

    pub fn subnet_train_config(&self, numeral: usize) -> TrainConfig {
        TrainConfig {
            seed: self.derived_seed(stage_seed::SUBNET_BASE + numeral as u64),
            ..self.subnet_training.clone()
        }
    }

    /// Digest over the fields that affect results. Locations (data and
    /// output directories) are left out; the data checksums stand in for
    /// the data itself.
    pub fn digest(&self) -> String {
        let mut semantic = self.clone();
        semantic.data.dir = None;
        semantic.output_dir = PathBuf::new();
        // serde_json writes struct fields in declaration order, so this is canonical
        sha256_hex(&serde_json::to_vec(&semantic).expect("config serializes"))
    }
}
