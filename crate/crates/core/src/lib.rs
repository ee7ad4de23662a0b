//! Cost, quality and latency aware routing of query streams across a
//! changing set of LLM candidates.
//!
//! * [`catalog`]: domain types and the candidate catalog.
//! * [`embed`]: routing-space projection trained with domain losses.
//! * [`predict`]: per-candidate quality / length regressors and pricing.
//! * [`router`], [`uncertainty`], [`feedback`]: the decision maker.
//! * [`sim`]: discrete-event stream simulator.
//! * [`data`]: dataset IO and splitting.
//! * [`bench`]: experiment harness behind the CLI.
//! * [`synth`]: seeded synthetic datasets.

pub mod bench;
pub mod catalog;
pub mod data;
pub mod embed;
pub mod error;
pub mod feedback;
pub mod predict;
pub mod router;
pub mod sim;
pub mod synth;
pub mod uncertainty;

pub use catalog::{Catalog, GroundTruth, LlmCandidate, Query};
pub use error::{Error, Result};
pub use router::{Router, RouterConfig, RoutingDecision};
pub use sim::{run_stream, FeedbackMode, Policy, SimConfig, SimResult};
