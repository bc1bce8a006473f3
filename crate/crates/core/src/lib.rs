pub mod cli;
pub mod error;
pub mod linalg;
pub mod material_law;
pub mod spectral_solver;
pub mod specs;
pub mod viscoelastic;
pub mod volterra_oracle;
pub mod kernel_lab;
pub mod weighted_time;

pub use error::{Error, Result};
