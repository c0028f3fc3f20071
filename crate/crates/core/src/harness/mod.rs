//! Synthetic data, tensor files, optimizer and a tiny training loop.

pub mod adam;
pub mod io;
pub mod synthetic;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use io::{decode_params, decode_tensor, encode_params, encode_tensor, read_params, read_tensor, write_params, write_tensor};
pub use synthetic::{majority, SyntheticData, SyntheticTask};
pub use train::{train, TinyModel, TrainConfig, TrainReport, Variant};
