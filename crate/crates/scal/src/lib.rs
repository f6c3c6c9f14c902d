//! Payload-based network intrusion detection via divide-and-conquer:
//! per-class compression models fingerprint packets, fingerprint
//! correlations group confusable classes into subproblems, a distributor
//! tree routes each instance, and small local trees finish the job.
//! Includes a black-box/grey-box adversarial attack harness and a
//! Monte-Carlo lab for the excess-risk analysis motivating the design.

pub mod adversarial;
pub mod cart;
pub mod cli;
pub mod compressor;
pub mod dataset;
pub mod decomposition;
pub mod error;
pub mod metrics;
pub mod persist;
pub mod risk_lab;
pub mod scal;

pub use error::{Error, Result};
