//! Synthesis and repair of interpretable action-selection policies from
//! demonstrations, with dimensional typing of the feature language.

pub mod dimensions;
pub mod dsl;
pub mod enumerate;
pub mod interp;
pub mod paramsolve;
pub mod simkit;
pub mod synth;
pub mod worldio;
