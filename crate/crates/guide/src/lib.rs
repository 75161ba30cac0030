//! The book's chapters as doc comments, so `cargo test` runs every snippet.
//! One module per chapter keeps failures traceable to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/direct-estimation.md")]
pub mod direct_estimation {}
#[doc = include_str!("../../../book/src/stage-one.md")]
pub mod stage_one {}
#[doc = include_str!("../../../book/src/stage-two.md")]
pub mod stage_two {}
#[doc = include_str!("../../../book/src/benchmarking.md")]
pub mod benchmarking {}
#[doc = include_str!("../../../book/src/summaries.md")]
pub mod summaries {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
