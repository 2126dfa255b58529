//! Canonical 3D tactile graphs and force-based masked graph autoencoder
//! pretraining.
//!
//! The pipeline: a [`hand::Hand`] turns joint angles into sensor and taxel
//! poses; [`graph::build_graph`] turns a [`graph::TactileFrame`] into a
//! 4-neighbourhood graph with `[P^s, T, F]` node features; [`synth`]
//! generates play-data episodes from a penalty-contact model; and
//! [`pretrain`] trains a graph-attention masked autoencoder on masked local
//! force reconstruction plus net force prediction through a shared encoder.

pub mod error;
pub mod geometry;
pub mod graph;
pub mod hand;
pub mod nn;
pub mod par;
pub mod pretrain;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{Representation, TactileFrame, TactileGraph};
pub use hand::Hand;
pub use par::Exec;
