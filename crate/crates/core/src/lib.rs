pub mod baseline;
pub mod config;
pub mod directed;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod linalg;
#[cfg(feature = "plot")]
pub mod plot;
pub mod rng;
pub mod sem;
pub mod spectral;
pub mod undirected;

pub use error::{CovMatchError, Result};
pub use graph::{GraphKind, Gso, WeightRange};
pub use sem::{CovSource, CovSpec, DataMatrix, SemModel};
pub use spectral::{EigenPair, OrthoPoint};
