//! Geometric pre-training for molecular pair encoders.
//!
//! The crate builds virtual interaction geometries from conformer pairs
//! ([`geometry`]), encodes molecule pairs with a 2D interaction encoder and
//! the assembled environment with a distance-based 3D encoder
//! ([`encoders`]), pre-trains the 2D encoders with a contrastive and a force
//! prediction objective ([`pretrain`]) and fine-tunes them on pairwise
//! property tasks ([`finetune`]).

pub mod checkpoint;
pub mod chem;
pub mod data;
pub mod encoders;
pub mod finetune;
mod error;
pub mod geometry;
pub mod nn;
pub mod par;
pub mod pretrain;
pub mod seeding;
pub mod selfcheck;
pub mod tape;
pub mod task;
pub mod tensor;

pub use error::{Error, Result};
pub use par::Exec;
pub use tensor::Mat;
