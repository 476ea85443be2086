//! Metadata-complete Text-to-SQL pipeline.
//!
//! The crate is organized around the five phases of the workflow:
//! database profiling into natural-language metadata contexts
//! ([`profiler`]), SQL-driven schema linking ([`linking`]),
//! execution-corrected SQL generation ([`generation`]), rule-guided
//! alignment ([`alignment`]), and multi-granular majority voting
//! ([`selection`]). [`dbcore`] wraps read-only SQLite access and the
//! execution-accuracy metric, [`gateway`] provides provider-agnostic
//! chat access with record/replay, and [`harness`] runs whole benchmark
//! datasets.

pub mod alignment;
pub mod config;
pub mod dbcore;
pub mod gateway;
pub mod generation;
pub mod harness;
pub mod linking;
pub mod pipeline;
pub mod profiler;
pub mod prompts;
pub mod selection;
pub(crate) mod util;
