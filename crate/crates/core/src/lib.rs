pub mod datum;
pub mod error;
pub mod experiments;
pub mod config;
pub mod fem;
pub mod levelset;
pub mod mesh;
pub mod noise;
pub mod output;
pub mod scheme;
pub mod sparse;

pub use datum::InitialDatum;
pub use error::{Error, Result};
pub use fem::{AssembledOperators, NodalField, Norms};
pub use levelset::{zero_level_set, LevelSet};
pub use mesh::{Bounds, Mesh, MeshSize};
pub use noise::{IncrementVariance, NoiseStream};
pub use scheme::{Diffusion, DiffusionTable, Observer, PathSummary, SchemeParams, StepResult, Stepper};
