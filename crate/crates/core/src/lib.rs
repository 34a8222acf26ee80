//! Test-time canonicalization by energy minimization.
//!
//! Given an image and a transform search space, [`pipeline::canonicalize`]
//! generates transformed candidates, scores each with an energy derived from
//! foundation-model backends, and returns the lowest-energy candidate
//! together with the full evaluation trace and call counts.

pub mod bridge;
pub mod energy;
pub mod error;
pub mod image;
pub mod optimize;
pub mod pipeline;
pub mod synthetic;
pub mod transforms;

pub use crate::energy::{EnergyBackend, EnergySpec, Logits, NoiseSchedule};
pub use crate::error::{BackendError, Error, Result};
pub use crate::image::Image;
pub use crate::optimize::{BoConfig, GpHyper, OptTrace};
pub use crate::pipeline::{canonicalize, CanonResult, CostCounter, SearchConfig};
pub use crate::transforms::{TransformDomain, TransformKind, TransformPoint};
