//! Knowledge-graph question answering by relation-path planning and matching.
//!
//! An LLM drafts relation paths for a question, the drafts are refined against
//! the graph's own relation vocabulary, matched to concrete paths from the
//! topic entities, and the matched paths are handed back to the LLM to read
//! off the answer.

pub mod config;
pub mod digest;
pub mod embedding;
pub mod eval;
pub mod kg;
pub mod llm;
pub mod matcher;
pub mod pipeline;
pub mod planner;
pub mod prompt;
pub mod reasoner;
pub mod retry;
