//! Structure-prototype guided graph pooling.
//!
//! The crate covers the whole pipeline: graph containers and parsers,
//! extraction of biconnected-component and clique prototypes, a small dense
//! reverse-mode autodiff engine, the GCN / contextual / pooling layers, the
//! full classifier with its training loop, and synthetic experiments.

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod pooling;
pub mod structure;
pub mod synth;

pub use error::{Error, Result};
