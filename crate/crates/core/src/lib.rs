//! Multilingual kNN retrieval for translation.
//!
//! The crate provides:
//!
//! * [`vecstore`]: key–value datastores of decoder context vectors with
//!   exact and cell-probe nearest-neighbour search and language provenance;
//! * [`decode`]: kNN distributions, interpolation with a base model, greedy
//!   and beam decoding, plus a deterministic count-based toy model;
//! * [`align`]: least-squares linear maps between representation spaces;
//! * [`transfer`]: cross-lingual similarity (xsim), representational
//!   transfer potential (RTP), the similarity-loss value and Spearman's ρ;
//! * [`features`]: dataset features for language pairs and leave-one-out
//!   regression with permutation importance;
//! * [`mteval`]: corpus BLEU.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pick a concrete precision.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod decode;
pub mod error;
pub mod features;
pub mod linalg;
pub mod mteval;
pub mod scalar;
pub mod text;
pub mod transfer;
pub mod vecstore;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use vecstore::{Datastore, IndexSpec, LanguageTag, Neighbor, ReprRecord, TokenId};

pub type MatrixF32 = linalg::Matrix<f32>;
pub type MatrixF64 = linalg::Matrix<f64>;
pub type LinearMapF32 = align::LinearMap<f32>;
pub type LinearMapF64 = align::LinearMap<f64>;
pub type PairedContextsF32 = align::PairedContexts<f32>;
pub type PairedContextsF64 = align::PairedContexts<f64>;
pub type LinearRegressionF64 = features::LinearRegression<f64>;
