//! Grid search, experiments, artifact I/O and the command-line front end.

pub mod cli;
pub mod experiment;
pub mod grid;
pub mod io;

pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport};
pub use grid::{fold_of, parse_grid, run_grid_search, GridSearch};
pub use io::{ModelFile, RunRecord};
