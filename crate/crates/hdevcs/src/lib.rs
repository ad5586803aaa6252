//! Scenario generation, file formats, threaded execution and the command-line
//! front end for `hdevcs-core`.

pub mod cli;
pub mod generate;
pub mod io;
pub mod parallel;
pub mod runner;
