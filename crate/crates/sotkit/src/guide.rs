//! Compiles the book chapters' code snippets as doc-tests, so the guide in
//! `book/` can never drift from the library. mdbook itself cannot run
//! snippets against the crate; `cargo test --doc` can.

#[doc = include_str!("../../../book/src/groups_and_manifests.md")]
pub mod groups_and_manifests {}

#[doc = include_str!("../../../book/src/label_codec.md")]
pub mod label_codec {}

#[doc = include_str!("../../../book/src/segmentation.md")]
pub mod segmentation {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/scoring.md")]
pub mod scoring {}

#[doc = include_str!("../../../book/src/toy_model.md")]
pub mod toy_model {}
