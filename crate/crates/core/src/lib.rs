//! Type-1 and interval type-2 Takagi–Sugeno–Kang fuzzy logic systems.
//!
//! Interval type-2 outputs are type-reduced by enumerating every binary
//! switching vector ([`inference_it2::reduce_enum`]), with an iterative
//! Karnik–Mendel implementation ([`inference_it2::reduce_km`]) as reference.
//! Parameters are trained end to end by mini-batch Adam through a small
//! reverse-mode tape ([`autodiff`]).

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod error;
pub mod inference_it2;
pub mod inference_t1;
pub mod membership;
pub mod model;
pub mod params;
pub mod training;

pub use error::{FlsError, Result};
pub use model::{predict, Model};
pub use params::{ModelConfig, ModelKind, RawParams, Reducer};
pub use training::{train, TrainConfig, TrainReport};
