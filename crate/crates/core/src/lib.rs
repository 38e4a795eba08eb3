//! Electrophysiological source imaging at desk scale.
//!
//! * [`geometry`]: synthetic spherical source spaces and lead fields.
//! * [`sim`]: Jansen-Rit sources, forward projection, noise, datasets.
//! * [`dataset`]: fragment normalisation and patch grids.
//! * [`nn`]: differentiable primitives with hand-written gradients.
//! * [`model`]: the FAIR-ESI network, loss and trainer.
//! * [`eval`]: localization metrics and the sLORETA baseline.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod model;
pub mod nn;
pub mod sim;
pub mod tensor;

pub use error::{EsiError, Result};
pub use exec::Exec;
pub use tensor::Tensor;
