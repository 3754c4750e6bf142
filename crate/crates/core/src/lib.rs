//! Information-theoretic analysis of hidden-layer relays in small dense
//! classifiers trained on MNIST.

pub mod dataset;
pub mod discretize;
pub mod error;
pub mod infotheory;
pub mod network;
pub mod nodeset;
pub mod perturb;
pub mod search;
pub mod synth;

pub use dataset::{Dataset, LabeledSample, Split};
pub use discretize::{BinSpec, BinnedTrace, BinningStrategy};
pub use error::{Error, ErrorCategory, Result};
pub use infotheory::{Bits, Column, RelayKernel};
pub use network::{ActivationTrace, DenseNet, KnockoutMask, TrainConfig};
pub use nodeset::NodeSet;
