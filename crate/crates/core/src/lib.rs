//! Wave-field simulation of quantum-classical spin-boson dynamics.

pub mod adiabatic;
pub mod bath;
pub mod bracketlab;
pub mod cli;
pub mod dynamics;
pub mod ensemble;
pub mod error;

pub use error::{Error, Result};
