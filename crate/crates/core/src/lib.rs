//! Block-wise mixed-format 4-bit quantization (FB4).
//!
//! Each block of 16 or 32 values shares a power-of-two scale and picks one of
//! 32 integer-magnitude dialects. Selection and per-element quantization go
//! through small per-dialect lookup tables. On top of that sit activation
//! decomposition (re-quantizing the residual) and semantic-aware dialect
//! assignment, which makes attention-correlated tokens share one dialect per
//! dynamic range.

pub mod analytics;
pub mod attention;
pub mod baselines;
pub mod decomp;
pub mod error;
pub mod formatbook;
pub mod lut;
pub mod pipeline;
pub mod quant;
pub mod seda;
pub mod tensor;

pub use error::{Error, Result};
pub use formatbook::{Dialect, Formatbook, SubFormatbook, Violation};
pub use lut::LutSet;
pub use quant::{
    BlockLayout, Container, DialectPolicy, QuantizedBlock, QuantizedTensor, ResidualSection,
    Selection,
};
pub use tensor::Tensor;
