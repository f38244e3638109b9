//! Guide chapters, compiled as doc-tests so the listings in `book/` keep up
//! with the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/flow-matching.md")]
pub mod flow_matching {}

#[doc = include_str!("../../../book/src/velocity-network.md")]
pub mod velocity_network {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/flow-map.md")]
pub mod flow_map {}

#[doc = include_str!("../../../book/src/editing.md")]
pub mod editing {}

#[doc = include_str!("../../../book/src/classification.md")]
pub mod classification {}

#[doc = include_str!("../../../book/src/directions.md")]
pub mod directions {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
