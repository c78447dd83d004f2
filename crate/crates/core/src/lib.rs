//! Multi-range transformer for multi-person 3D motion prediction.
//!
//! A local-range encoder reads each person's own motion, a global-range
//! encoder reads every person in the scene, and a decoder queried by a single
//! pose predicts the next chunk of motion as joint offsets.

pub mod attention;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;
pub mod transforms;

pub use data::{MotionSequence, Pose, Scene};
pub use error::{MrtError, Result};
pub use model::{DiscriminatorParams, ModelConfig, MrtParams, PredictionChunk};
pub use numerics::{Graph, ParamStore, Tensor, Var};
pub use training::{TrainConfig, Trainer};
