//! Few-shot BIOES sequence labeling under distribution shift.
//!
//! The crate bundles a small reverse-mode engine ([`numcore`]), a BIOES codec
//! ([`tagging`]), a recurrent token encoder ([`encoder`]), a linear-chain CRF
//! head ([`crf`]), time-partitioned episode sampling ([`episodes`]), corpus
//! I/O and a synthetic corpus generator ([`data`]), first-order MAML
//! meta-training with knowledge-inheritance adaptation ([`meta`]) and the
//! evaluation protocols ([`metrics`]).

pub mod crf;
pub mod data;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod meta;
pub mod metrics;
pub mod numcore;
pub mod tagging;

pub use error::{Error, ErrorClass, Result};
pub use numcore::{ParamSet, Tensor};
