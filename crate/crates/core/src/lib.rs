//! Engine for autonomous penetration testing runs.
//!
//! The crate is organized around a perception-action loop: a planner
//! ([`reasoner`]) decomposes a mission into phased goals anchored to nodes of
//! a branching memory tree ([`memory`]), an instruction generator
//! ([`assistant`]) turns the active goal plus activated memory into concrete
//! shell commands, and an [`executor`] runs them against the target and
//! captures evidence. Raw terminal output is folded into three granularities
//! by [`compress`] so each role sees only the detail level it needs. All
//! model traffic goes through the [`gateway`], which meters tokens and cost
//! exactly and can replay recorded transcripts for deterministic runs.
//! [`arsenal`] maintains a library of exploit descriptors distilled from
//! proof-of-concept repositories, and [`orchestrate`] ties everything into
//! single trials and multi-attempt benchmark campaigns.

pub mod arsenal;
pub mod assistant;
pub mod compress;
pub mod events;
pub mod executor;
pub mod gateway;
pub mod memory;
pub mod orchestrate;
pub mod prompts;
pub mod reasoner;
pub mod store;
