//! Oracles shared by the integration tests and the acceptance report.

#![allow(dead_code)]

pub mod fd;
pub mod oracles;
