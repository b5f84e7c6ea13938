//! Audit a language model for inconsistent answers.
//!
//! A generator model rewrites each source question into a group of probes
//! using a versioned template. Two annotators rate the probes until their
//! agreement and the template's quality clear configured gates. The audited
//! model then answers every probe, and the answers are scored for similarity
//! to the ground truth and for truthfulness.

pub mod annotation;
pub mod cli;
pub mod answering;
pub mod domain;
pub mod generation;
pub mod metrics;
pub mod project;
pub mod provider;
pub mod report;
pub mod server;
