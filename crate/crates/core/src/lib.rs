//! Binaural direction-of-arrival estimation.
//!
//! The crate implements a two-stage localization pipeline for a pair of
//! microphones on a head: each analysis frame is first classified as
//! direct speech or not ([`classify`]), and accepted frames are turned into
//! an azimuth by estimating the interaural time difference with generalized
//! cross-correlation ([`tde`]) and inverting a spherical-head model
//! ([`head`]). The pipeline's six parameters can be tuned against annotated
//! recordings with exhaustive grid search or a Tree-structured Parzen
//! Estimator ([`opt`]). Synthetic binaural scenes with known ground truth
//! ([`scene`]) stand in for recorded data.
//!
//! Units are seconds and radians throughout.

pub mod annotation;
pub mod classify;
pub mod cli;
pub mod dataset;
pub mod head;
pub mod opt;
pub mod pipeline;
pub mod scene;
pub mod signal;
pub mod tde;
pub mod wav;

/// Book chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/conventions.md")]
    mod conventions {}
    #[doc = include_str!("../../../book/src/time-delay.md")]
    mod time_delay {}
    #[doc = include_str!("../../../book/src/head-model.md")]
    mod head_model {}
    #[doc = include_str!("../../../book/src/classifiers.md")]
    mod classifiers {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
