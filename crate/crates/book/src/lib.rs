//! The guide in `book/` is plain mdbook, which cannot run listings that
//! depend on this workspace. Each chapter is included here as a module doc so
//! `cargo test` runs its listings as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/forward.md")]
pub mod forward {}
#[doc = include_str!("../../../book/src/kl.md")]
pub mod kl {}
#[doc = include_str!("../../../book/src/conditioning.md")]
pub mod conditioning {}
#[doc = include_str!("../../../book/src/surrogate.md")]
pub mod surrogate {}
#[doc = include_str!("../../../book/src/placement.md")]
pub mod placement {}
#[doc = include_str!("../../../book/src/inference.md")]
pub mod inference {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
