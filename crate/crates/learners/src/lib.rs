//! Supervised learners behind a single `train` / `predict` interface.
//!
//! Eight model families are available, each usable as a regression or a
//! classification learner where the family supports it:
//!
//! | family                   | regression | classification |
//! |--------------------------|:----------:|:--------------:|
//! | multinomial logistic     |            |       x        |
//! | k-nearest neighbours     |     x      |       x        |
//! | decision tree (CART)     |     x      |       x        |
//! | random forest            |     x      |       x        |
//! | gradient boosted trees   |     x      |       x        |
//! | multilayer perceptron    |     x      |       x        |
//! | linear SVM               |     x      |       x        |
//! | Gaussian naive Bayes     |            |       x        |
//!
//! Every fitted model carries the [`FeatureSchema`] it was trained with, so
//! prediction standardizes and one-hot encodes raw columns on its own.
//! Iterative learners record a [`LossPoint`] per epoch or boosting round,
//! measured on an internal 90/10 split of the data handed to `train`.
//!
//! Models persist as versioned JSON ([`serialize_model`] /
//! [`deserialize_model`]); predictions of a round-tripped model are
//! bit-identical to the original.

mod artifact;
mod bayes;
mod boosting;
mod error;
mod forest;
mod gradcheck;
mod hyper;
mod knn;
mod logistic;
mod matrix;
pub mod mlp;
mod model;
mod rng;
mod schema;
mod svm;
mod tree;

pub use artifact::{deserialize_model, serialize_model, ARTIFACT_SCHEMA_VERSION};
pub use error::LearnerError;
pub use gradcheck::{check_gradient, check_gradient_with};
pub use hyper::Hyper;
pub use matrix::FeatureMatrix;
pub use model::{
    predict, predict_members, train, Family, FittedModel, LearnerKind, LossPoint, Prediction,
    Task, TrainMeta,
};
pub use rng::sub_seed;
pub use schema::{ColumnKind, ColumnSpec, EncodedColumn, FeatureSchema};

pub type Result<T> = std::result::Result<T, LearnerError>;
