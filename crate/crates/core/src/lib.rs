//! Turns raw figure/caption records into aligned subfigure/subcaption pairs
//! and scores image-text retrieval runs over the result.
//!
//! The crate is split along the stages of the alignment pipeline:
//!
//! - [`corpus`]: shared record/pair types and the canonical JSONL manifest.
//! - [`caption`]: subcaption label grammar and caption segmentation.
//! - [`splitter`]: subfigure regions, from detector output or the built-in
//!   whitespace-gutter splitter.
//! - [`matcher`]: OCR label normalization and the subfigure/subcaption
//!   matching rule.
//! - [`pipeline`]: filter, split, parse and match a whole corpus; statistics.
//! - [`retrieval`]: recall@k for image-to-text and text-to-image retrieval.

pub mod caption;
pub mod corpus;
mod jsonl;
pub mod matcher;
pub mod pipeline;
pub mod retrieval;
pub mod splitter;

pub use caption::{segment_caption, CaptionParse, LabelMarker, SubcaptionSegment};
pub use corpus::{AlignedPair, BoundingBox, CorpusManifest, FigureRecord, PairStatus};
pub use matcher::{OcrToken, RegionLabelSet};
pub use pipeline::{PipelineConfig, PipelineStats};
pub use retrieval::{EmbeddingSet, RetrievalReport};
pub use splitter::{GrayImage, SplitterParams, SubfigureRegion};
