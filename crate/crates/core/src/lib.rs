//! Source printer identification for scanned text documents.
//!
//! The pipeline has four stages: connected component extraction
//! ([`segmentation`]), local texture descriptor extraction per letter
//! ([`psltd`]), spatial pooling of descriptors by page block ([`pooling`]),
//! and correlation-based prediction against a per-block reference bank
//! ([`predict`]). The [`synth`] module generates deterministic synthetic
//! corpora with per-printer texture signatures, and [`eval`] runs train/test
//! experiments and the analysis reports.

pub mod eval;
pub mod imageio;
pub mod pipeline;
pub mod pooling;
pub mod predict;
pub mod psltd;
pub mod segmentation;
pub mod synth;

mod wire;

pub use imageio::{BitDepth, DocumentImage};
pub use pooling::{
    BlockId, ColumnLayout, GridLayout, Layout, LayoutSpec, PoolSize, PooledFeature, TextExtent,
};
pub use predict::{DocumentPrediction, Predictor, ReferenceBank};
pub use psltd::{Descriptor, DescriptorParams, DescriptorVariant};
pub use segmentation::{BinaryImage, ConnectedComponent, FilterPolicy};
pub use synth::{CorpusManifest, GlyphFamily, PageParams, PrinterProfile};
