//! Positional encoding, small dense networks and the pose-conditioned field
//! built from them, with hand-written reverse-mode gradients.

mod adam;
mod archive;
mod encoder;
mod field;
mod mlp;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use archive::{read_tensors, write_tensors, TensorArchive, TensorEntry};
pub use encoder::PositionalEncoder;
pub use field::{
    FieldConfig, FieldGrads, FieldInputGrads, FieldInputs, FieldNets, FieldOutputs, FieldSwitches,
    FieldTape,
};
pub use mlp::{sigmoid, softplus, Activation, Dense, Mlp, MlpGrads, MlpTrace};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("{what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("backward called without a recorded forward pass")]
    NoForwardPass,
    #[error("view direction must be unit length, got norm {0}")]
    NonUnitDirection(f64),
    #[error("tensor archive: {0}")]
    Archive(String),
    #[error("tensor archive version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("tensor {0} missing from archive")]
    MissingTensor(String),
}
