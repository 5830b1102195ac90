//! Multi-modal S2VT video captioning.
//!
//! The crate covers the whole pipeline after feature extraction: the FVEC
//! feature container and fusion ([`featio`]), caption text handling
//! ([`textkit`]), the two-layer LSTM encoder-decoder with attention
//! ([`model`]), training ([`train`]), decoding ([`infer`]), corpus metrics
//! ([`metrics`]) and the command-line front end ([`cli`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod numkit;
pub mod featio;
pub mod textkit;
pub mod model;
pub mod train;
pub mod infer;
pub mod metrics;
pub mod cli;
