//! Training-free visual token compression for multimodal LLM prefill.
//!
//! Visual tokens arrive as a `frames x patches x dim` grid ([`TokenTensor`]).
//! The [`temporal`] stage merges tokens that barely change between adjacent
//! frames at the same patch position; the [`spatial`] stage keeps, per
//! surviving frame, the tokens most relevant to the text prompt or to the
//! frame's [CLS] token. [`pipeline::joint_compress`] runs both and records
//! where every output token came from. [`cost`] estimates what the shorter
//! prefix saves in a roofline model of the LLM prefill.

pub mod cost;
pub mod error;
pub mod format;
pub mod pipeline;
pub mod spatial;
pub mod synthetic;
pub mod temporal;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use pipeline::{
    build_index_map, joint_compress, resolve_ratios, CompressedResult, IndexMap, ReductionConfig,
};
pub use tensor::{ClsPolicy, TextTokens, TokenIndex, TokenTensor};
