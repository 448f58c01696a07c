//! Heterogeneous-susceptibility SEIR epidemics with contact-reduction forcing:
//! simulation, synthetic Poisson incidence, maximum-likelihood fitting and
//! identifiability diagnostics.

pub mod error;
pub mod integrator;
pub mod likelihood;
pub mod model;
pub mod prediction;
pub mod optim;
pub mod profile;
pub mod rng;
pub mod sensitivity;
pub mod study;
pub mod synthesis;

pub use error::{Error, Result};
