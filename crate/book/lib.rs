//! Compiles the guide's chapters as rustdoc so `cargo test` runs every
//! code listing.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/tasks.md")]
pub mod tasks {}
#[doc = include_str!("src/surrogate.md")]
pub mod surrogate {}
#[doc = include_str!("src/preferences.md")]
pub mod preferences {}
#[doc = include_str!("src/acquisition.md")]
pub mod acquisition {}
#[doc = include_str!("src/explanations.md")]
pub mod explanations {}
#[doc = include_str!("src/sessions.md")]
pub mod sessions {}
#[doc = include_str!("src/benchmarks.md")]
pub mod benchmarks {}
