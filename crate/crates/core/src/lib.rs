//! Differentiable rigid-body and constrained-particle dynamics with
//! physically plausible parameter identification and episodic policy search.
//!
//! Layers, bottom to top:
//! - [`scalar`]: the [`Real`] scalar contract and forward-mode [`Dual`] numbers.
//! - [`se3`]: spatial algebra in `[angular; linear]` ordering.
//! - [`virtual_params`]: unconstrained parameters realizing plausible inertias.
//! - [`dynamics`]: kinematic trees, RNEA and ABA.
//! - [`string`]: ball-on-string model with an inequality constraint.
//! - [`sysid`]: identification losses, optimizers and gradient checks.
//! - [`policy`]: movement primitives, dipole reward and eREPS.

pub mod dynamics;
pub mod error;
pub mod par;
pub mod policy;
pub mod scalar;
pub mod se3;
pub mod string;
pub mod sysid;
pub mod virtual_params;

pub use error::{Error, Result};
pub use par::Execution;
pub use scalar::{Dual, Real};
