//! Talking-point discovery: theme-wise clustering, LLM summarization and
//! generation, redundancy merging and threshold assignment, iterated over the
//! instances that remain unassigned.

pub mod analysis;
pub mod argumentation;
pub mod assignment;
pub mod clustering;
pub mod config;
pub mod consolidation;
pub mod corpus;
pub mod evaluation;
mod par;
pub mod pipeline;
pub mod retry;
pub mod review;
pub mod state;
pub mod vectorspace;
