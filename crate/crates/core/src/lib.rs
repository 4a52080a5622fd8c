//! Fair and stable node representations on attributed graphs.
//!
//! The crate covers the whole pipeline: building a similarity graph from a
//! tabular dataset ([`ingest`]), the immutable CSR graph model ([`graph`]),
//! augmented views with attribute noise, edge dropping and counterfactual
//! sensitive flips ([`augment`]), a small reverse-mode differentiation tape
//! over dense matrices ([`autodiff`]), the Lipschitz-normalized encoder with
//! Siamese stop-gradient training ([`model`]), evaluation ([`metrics`]) and
//! the experiment runner behind the `fairgraph` binary ([`experiment`]).

pub mod augment;
pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
pub use graph::{Csr, Graph, Mask, Masks};
pub use metrics::MetricsReport;
pub use model::{Ablation, NiftyModel, TrainConfig};
