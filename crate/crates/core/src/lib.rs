//! Physics-guided recurrent lake temperature modelling.
//!
//! An LSTM predicts water temperature at every depth of a lake from daily
//! meteorology. It is trained on sparse observations with an additional
//! penalty whenever the predicted change in lake heat content disagrees with
//! the surface heat fluxes, and can be pretrained on output from the built-in
//! 1D simulator.

pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod model;
pub mod physics;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
