//! Labor-market network analysis: latent worker types and job markets from
//! matched worker–job data, plus an equilibrium model of sorting across
//! markets.
//!
//! The crate has two halves that meet in the middle:
//!
//! * **Network side** ([`graph`], [`blockmodel`]): load a bipartite
//!   worker–job match network, infer a joint partition of workers into types
//!   and jobs into markets with a degree-corrected bipartite block model,
//!   selecting the number of groups by minimum description length.
//! * **Structural side** (`roy`, `mle`, `shock`, `metrics`): a discrete-choice
//!   labor supply model over the inferred markets, general-equilibrium wage
//!   and price determination, maximum-likelihood estimation of the supply
//!   parameters from worker panels, and counterfactual demand-shock
//!   experiments with a battery of reduced-form diagnostics.
//!
//! All randomness flows from a single root seed through named streams
//! ([`rng`]), so every pipeline is reproducible and thread-count invariant.

pub mod blockmodel;
pub mod error;
pub mod graph;
pub mod guide;
pub mod metrics;
pub mod mle;
pub mod panel;
pub mod rng;
pub mod roy;
pub mod shock;

pub use error::{Error, Result};
