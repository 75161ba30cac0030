//! Two-stage logistic-normal small area estimation for binary survey
//! outcomes. The guide in `book/` walks through each stage.

// `!(x > bound)` is the NaN-rejecting form of every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod graph;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod stage1;
pub mod stage2;
pub mod summaries;
pub mod survey;
pub mod synthetic;
