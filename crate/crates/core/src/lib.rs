//! Upscaling of nonlinear Forchheimer flow in heterogeneous porous media.

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod forchheimer;
pub mod grid;
pub mod io;
pub mod layered;
pub mod linalg;
pub mod solver;
pub mod upscaling;

pub use error::{Error, Result};
