//! Information-potential estimation for text collections.
//!
//! The pipeline chunks a corpus, has a language model write four-option
//! questions about each chunk, filters them for grounding and distractor
//! plausibility, then asks an evaluator model every question with and
//! without the source chunk. The normalized gain from adding context is the
//! collection's information potential.

pub mod artifact;
pub mod baseline_synth;
pub mod corpus;
pub mod evaluator;
pub mod llm_gateway;
pub mod mcq;
pub mod pipeline;
pub mod prompts;
pub mod quality_filter;
pub mod scoring;
