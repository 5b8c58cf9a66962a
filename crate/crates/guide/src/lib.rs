//! The guide under `book/` has no way to run its listings with the
//! workspace crates in scope, so each chapter is pulled in here as a module
//! doc and checked by `cargo test --doc`.  A failing doc-test names the
//! module, which names the chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/jets.md")]
pub mod jets {}
#[doc = include_str!("../../../book/src/extrinsic.md")]
pub mod extrinsic {}
#[doc = include_str!("../../../book/src/principal.md")]
pub mod principal {}
#[doc = include_str!("../../../book/src/conformal.md")]
pub mod conformal {}
#[doc = include_str!("../../../book/src/lightcone.md")]
pub mod lightcone {}
#[doc = include_str!("../../../book/src/ribaucour.md")]
pub mod ribaucour {}
#[doc = include_str!("../../../book/src/catalog.md")]
pub mod catalog {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
