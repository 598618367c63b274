//! A desk-scale lab for bootstrapping a world model from a dynamics model.
//!
//! A synthetic grid world supplies `(source, action, target)` triplets. A
//! small transformer is trained as a dynamics model (predict the action)
//! and as a world model (predict the next board); the dynamics model then
//! labels unlabelled rollouts to grow the world model's training set and
//! reranks the world model's samples at inference time.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod gridworld;
pub mod pipeline;
pub mod probes;
pub mod seed;
pub mod seqmodel;
pub mod tokencodec;
pub mod verify;

pub use error::{Error, Result};
