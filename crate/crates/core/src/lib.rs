pub mod error;
pub mod hog;
pub mod imageio;
pub mod matrix;
pub mod pipeline;
pub mod rpca;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
pub use hog::{HogConfig, HogDescriptor};
pub use imageio::GrayImage;
pub use matrix::{DenseMatrix, SvdFactors};
pub use pipeline::{CorpusManifest, EvalReport, Model, PipelineConfig};
pub use rpca::{RpcaConfig, RpcaResult};
pub use sparse::{Dictionary, SolverStatus, SparseCode};
pub use synth::{NoiseSpec, SynthSpec};
