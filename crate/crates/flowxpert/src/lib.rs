//! FlowXpert: network flow feature extraction and traffic detection.
//!
//! The crate is organized as a pipeline:
//!
//! 1. [`pcap`] reads classic capture files into per-packet records.
//! 2. [`flow`] aggregates packets into bidirectional flows and computes
//!    per-flow features, including per-source-host context counters.
//! 3. [`preprocess`] turns raw flow features into fixed-width numeric
//!    vectors (protocol one-hot + min-max scaled continuous features),
//!    joins labels, and provides fold/downsample index helpers.
//! 4. [`cluster`] produces density-based pseudo-labels for unlabeled data.
//! 5. [`nn`] holds the from-scratch neural building blocks: matrices,
//!    dense/batch-norm layers, losses, optimizers, and gradient checking.
//! 6. [`train`] wires clustering and the networks into the two-phase
//!    training procedure and exposes single-record prediction.
//! 7. [`bundle`] serializes trained models to a single binary file.
//! 8. [`eval`] scores predictions, reports activation sparsity, probes
//!    gradient-norm scaling, and micro-benchmarks inference.
//!
//! The `flowxpert` binary (see [`cli`]) exposes all stages as subcommands.

pub mod bundle;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod eval;
pub mod flow;
pub mod nn;
pub mod pcap;
pub mod preprocess;
pub mod train;
pub mod util;
