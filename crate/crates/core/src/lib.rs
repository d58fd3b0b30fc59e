//! Single-unit selectivity analysis for neural-network hidden units.
//!
//! Activations are ingested from files ([`store`]), scored per unit with
//! exact threshold sweeps ([`metrics`]), aligned to concept masks
//! ([`dissection`]), and summarized or plotted ([`report`]). [`synthetic`]
//! builds the pathological scenarios used to stress the measures.

pub mod dissection;
pub mod error;
pub mod metrics;
pub mod report;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
pub use metrics::{analyze_unit, MetricsConfig, TieMode, UnitMetrics};
pub use store::{ActivationDataset, ClassIndex, UnitActivations};
