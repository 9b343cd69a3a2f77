//! Paper-to-poster pipeline: section filtering, joint sentence and graph
//! extraction with reference-biased self-attention, and template-based
//! poster composition.

pub mod baselines;
pub mod composer;
pub mod corpus;
pub mod encoder;
pub mod evaluation;
pub mod extraction;
pub mod pipeline;
pub mod rouge;
pub mod section_filter;
pub mod text;
