//! Compiles and runs the code samples of the book in `book/src` as
//! doc-tests, so the chapters cannot drift from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/rendering.md")]
pub mod rendering {}

#[doc = include_str!("../../../book/src/rigging.md")]
pub mod rigging {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/editing.md")]
pub mod editing {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
