//! Pipeline, correlation and chart output behind the `repstat` binary.

pub mod correlation;
pub mod pipeline;
pub mod svg;
