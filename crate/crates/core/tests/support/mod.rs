//! Independent reference implementations and the checks built on them.
//! Shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod criteria;
pub mod oracles;
