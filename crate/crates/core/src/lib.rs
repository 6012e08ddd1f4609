//! Automated cognitive walkthroughs over screenshot graphs.
//!
//! An app is described by a manifest of screens, transitions and tasks
//! ([`graph`]). The [`engine`] plays the facilitator, sending screens to an
//! evaluator ([`backend`]) and resolving its replies ([`protocol`]) into
//! moves. Traces and ratings are stored by [`store`] and summarized by
//! [`metrics`]; [`rater`] produces failure-point ratings.

pub mod backend;
pub mod engine;
pub mod graph;
pub mod metrics;
pub mod protocol;
pub mod rater;
pub mod store;
