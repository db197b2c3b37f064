//! Differentiable execution of first-order logic programs over learned
//! concept modules.
//!
//! Programs (see [`lang`]) are executed by [`exec::Executor`] on a
//! recording [`tensor::Tape`], so answers are differentiable with respect
//! to the parameters of the concept modules in a
//! [`grounding::ConceptRegistry`]. [`train`] fits those modules from
//! question-answer pairs, [`datagen`] produces synthetic scenes and
//! questions, and [`interp`] turns natural-language queries into programs
//! through a chat-completion model.

pub mod datagen;
pub mod exec;
pub mod grounding;
pub mod interp;
pub mod lang;
pub mod tensor;
pub mod train;

pub use exec::{execute, ComparisonParams, ExecError, Executor, GroundingContext, Readout, Value};
pub use grounding::{ConceptModule, ConceptRegistry, FeatureDims, FeatureProvider, GroundingError};
pub use lang::{parse, pretty_print, validate, Categories, Expression, LangError};
pub use tensor::{Tape, Tensor, TensorError};
pub use train::{Answer, AnswerType, Dataset, TrainConfig, TrainError, TrainExample};
