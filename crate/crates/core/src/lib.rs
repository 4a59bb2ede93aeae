//! Finite-element simulation of rate-independent, unidirectional partial damage
//! in thermo-viscoelastic solids with inertia.
//!
//! Each time step first minimizes the damage variable against the frozen
//! displacement, then solves the coupled momentum balance and heat equation.
//! Every accepted step is certified against the discrete energetic
//! formulation: unidirectionality, semistability, the mechanical and total
//! energy inequalities, and the temperature comparison floor.

pub mod assembly;
pub mod config;
pub mod damage_step;
pub mod error;
pub mod io;
pub mod material;
pub mod mesh;
pub mod optimize;
pub mod rescaling;
pub mod sparse;
pub mod thermomech_step;
pub mod time_loop;

pub use error::{Error, Result};
