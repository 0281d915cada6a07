//! Supervised spherical multi-codebook quantization for approximate maximum
//! inner product search.
//!
//! The library learns a linear embedding onto the unit hypersphere jointly
//! with `m` additive codebooks of `h` codewords each, supervised by a
//! four-term loss (softmax, quantization, center, discriminative). Encoded
//! databases are searched asymmetrically through query-specific lookup
//! tables in `O(m)` operations per point.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example end_to_end
//! cargo run --release --example loss_ablation
//! cargo run --release --example sparse_codebooks
//! cargo run --release --example cross_domain
//! cargo run --release --example file_formats
//! ```
//!
//! The same workflows are scriptable through the `sphq` binary
//! (`synth`, `train`, `encode`, `search`, `eval`).

pub mod cli;
pub mod codebooks;
pub mod config;
pub mod data;
pub mod embedder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod lasso;
pub mod search;
pub mod synth;
pub mod trainer;

pub use config::{HyperParams, SgdSettings};
pub use data::{CenterTable, CodeMatrix, Codebooks, FeatureMatrix, LabelVector};
pub use error::{Error, Result};
