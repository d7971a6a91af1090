//! On-disk formats: binary feature matrices, network files and CSV training
//! logs.

pub mod csvlog;
pub mod fmat;
pub mod netfile;
