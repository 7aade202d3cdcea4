//! Multi-fidelity neural surrogates for scalar fields on 2-D node sets.
//!
//! A low-fidelity network learns the cheap field from abundant samples; a
//! linear and a nonlinear correction network map `(x, y_low)` to the
//! expensive field, blended by a trainable weight `alpha`:
//!
//! ```text
//! y_high = alpha * F_lin(x, y_low) + (1 - alpha) * F_nonlin(x, y_low)
//! ```
//!
//! The crate is organised bottom-up:
//!
//! - [`diffmath`]: dense networks and exact reverse-mode gradients.
//! - [`fieldio`]: field datasets, CSV I/O and z-score normalization.
//! - [`gridalign`]: k-d tree and nearest / inverse-distance resampling.
//! - [`mpinn`]: the three-network model, composition rules, persistence.
//! - [`train`]: loss assembly, Adam training, metrics, baseline.
//! - [`bench`]: closed-form multi-fidelity problems and paired comparisons.

pub mod bench;
pub mod diffmath;
pub mod error;
pub mod fieldio;
pub mod gridalign;
pub mod mpinn;
pub mod train;

pub use error::{Error, Result};
pub use fieldio::{FidelityPair, FieldDataset, Node, NormalizationMeta};
pub use gridalign::InterpMethod;
pub use mpinn::{CompositionMode, MpinnConfig, MpinnModel};
pub use train::{Metrics, TrainConfig, TrainReport};
