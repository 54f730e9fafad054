//! Generators and checks shared by the property tests and the acceptance
//! harness.
#![allow(dead_code)]

pub mod policies;
pub mod pruning;
pub mod systems;
