//! Shape-aware multimodal retrieval.
//!
//! Given scenes whose target object is hidden under a key-colored mask, and a
//! catalog of candidate objects, this crate ranks the catalog for every scene
//! from a text description and the mask's silhouette, then scores the rankings
//! with Recall@k and MRR.
//!
//! * [`dataset`] discovers the on-disk `scenes/` + `objects/` layout.
//! * [`mask`] turns a masked scene image into a padded crop and silhouette.
//! * [`embedding`] loads encoder output and provides the cosine kernel.
//! * [`retrieval`] implements the text, shape, hybrid and voting strategies.
//! * [`metrics`] computes Recall@k and MRR.
//! * [`synth`] generates datasets with planted ground truth.
//! * [`cli`] wires it all into the `samurai` binary.
//!
//! The guide in `book/` walks through each stage; its code samples are
//! compiled and run as doctests of this crate.

pub mod cli;
pub mod dataset;
pub mod embedding;
mod error;
pub mod mask;
pub mod metrics;
pub mod results;
pub mod retrieval;
pub mod synth;

pub use error::{exit, Error};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/voting.md")]
    mod voting {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
