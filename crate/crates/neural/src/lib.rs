//! Convolutional recurrent hologram reconstruction at desk scale.
//!
//! A small tape-based autodiff engine ([`graph`]) carries a four-level
//! encoder/decoder whose skip connections pass through convolutional GRU
//! blocks ([`model`]), trained adversarially ([`loss`], [`train`]) and
//! fine-tuned with the recurrent blocks frozen ([`train::transfer`]).

pub mod checkpoint;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Tensor, Var};
pub use model::ModelConfig;
pub use params::{count_parameters, BlockTag, ParamCounts, ParameterSet};
pub use train::{train, transfer, Network, TrainConfig, TrainLog, TrainSample};
