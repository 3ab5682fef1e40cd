//! Dense reverse-mode automatic differentiation over 2-D `f64` matrices.
//!
//! Every value is a matrix; vectors are single rows or columns and scalars
//! are 1 x 1. A [`Tape`] records one forward computation, [`Tape::backward`]
//! produces [`Gradients`], and [`Gradients::accumulate`] adds the parameter
//! part into a [`Params`] store consumed by [`Adam`].

pub mod gradcheck;
mod optim;
mod params;
mod tape;

pub use optim::{Adam, StepLr};
pub use params::{ParamId, Params};
pub use tape::{concat, Gradients, Matrix, Tape, Var, LEAKY_SLOPE};
