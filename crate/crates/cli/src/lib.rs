//! File formats, report documents, and the timing harness behind the
//! `tppi` binary, importable so tests and other tools can read and
//! write the same artifacts.

pub mod bench;
pub mod error;
pub mod netfile;
pub mod raster;
pub mod report;
