//! Template-based invariant image verification.
//!
//! A three-layer hierarchy of HW-modules (template tuning followed by
//! pooling) maps an image to a signature; two signatures are compared by
//! cosine against a fitted threshold. Window scoring can be pruned with
//! consensus-of-collisions hashing and accelerated with a PCA projection.

pub mod bench;
pub mod bundle;
pub mod coc;
pub mod config;
pub mod error;
pub mod features;
pub mod hw;
pub mod image;
pub mod lowrank;
pub mod matrix;
pub mod pipeline;
pub mod windows;

pub use coc::{
    build_index, coc_responses, collect_candidates, exhaustive_responses, select_consensus, simhash, vote,
    ConsensusSet, ExactScorer, HashFamily, HashIndex, OpCounters, OpCounts, Scorer,
};
pub use error::{Error, Result};
pub use features::{extract, fuse, hog, hog_window, lbp, Descriptor, DescriptorConfig, DescriptorKind, GradientField};
pub use hw::{check_transfer_condition, dot, hw_response, ndot, normalize, PoolKind, Template};
pub use image::{
    affine_jitter, build_pyramid, decode_raster, geometric_ratios, load_raster, sample_jitter, save_pgm,
    JitterParams, JitterRanges, Pyramid, Raster,
};
pub use lowrank::{approx_ndot, fit_pca, LowRankScorer, Projected, ProjectionBasis};
pub use matrix::{Matrix, Rows};
pub use windows::{extract_windows, WindowBank, WindowRef};
pub use pipeline::{
    cross_validate, derive_seed, fit_threshold, mean_std, signature_score, train_layer2, train_layer3, Engine,
    EngineConfig, HashSpace, Layer3, Scoring,
    Signature, System, TemplateBook, VerifierModel,
};
