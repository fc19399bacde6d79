//! Sum-product networks with Gaussian-process leaves.
//!
//! An [`SpnGp`](spn::SpnGp) is a rooted DAG whose sum nodes mix over
//! alternative sub-models, whose split nodes cut the input space into
//! axis-aligned boxes, whose product nodes factorize over output variables,
//! and whose leaves are exact GP experts conditioned on the training rows
//! inside their box. The whole network is an exponentially large mixture of
//! local GPs that still admits exact posterior inference, exact marginal
//! likelihood and closed-form predictive moments in a single pass.
//!
//! Typical pipeline:
//!
//! 1. [`structure::build_region_graph`] recursively splits the input space.
//! 2. [`structure::build_spn`] equips the regions with sum, split and leaf nodes.
//! 3. optionally [`structure::assign_overlap`] lets boundary points flow across faces.
//! 4. [`SpnGp::fit_leaves`](spn::SpnGp::fit_leaves) or [`hyperopt::optimize_model`].
//! 5. [`SpnGp::posterior_update`](spn::SpnGp::posterior_update), then
//!    [`SpnGp::predict`](spn::SpnGp::predict).

pub mod data;
pub mod error;
pub mod gp;
pub mod hyperopt;
pub mod kernel;
pub mod math;
pub mod spn;
pub mod structure;

pub use error::{Error, Result};
pub use gp::{GpLeaf, PredictiveMoments};
pub use kernel::{KernelFamily, KernelSpec, MaternNu};
pub use spn::{NodeId, Region, SpnGp};

/// Library version embedded in every file this crate writes.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
