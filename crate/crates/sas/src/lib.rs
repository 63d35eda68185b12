//! File formats, parallel experiment runners and the `sas` command line on top
//! of `sas-core`.

pub mod artifacts;
pub mod cli;
pub mod dataio;
pub mod linqs;
pub mod runner;
