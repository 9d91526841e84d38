//! Null-control toolkit for a parabolic-ODE system obtained by splitting a
//! viscoelastic wave equation, with a control region transported by a flow.

pub mod carleman;
pub mod config;
pub mod control;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod region;
pub mod solvers;
pub mod weights;

pub use error::{Error, Result};
