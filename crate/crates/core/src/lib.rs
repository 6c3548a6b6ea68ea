pub mod error;
pub mod gp;
pub mod kernel;
mod linalg;
pub mod optim;
pub mod drift;
pub mod inducing;
pub mod model;
pub mod datagen;
pub mod harness;
