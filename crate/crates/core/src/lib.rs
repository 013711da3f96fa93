//! Resilient feature extraction: composition of classifiers whose stages are
//! provably free of adversarial examples, with exhaustive verifiers, margin
//! certificates and a road-sign demo.
//!
//! The core is generic over the scalar type. The aliases below fix it to
//! `f64` for images and to exact rationals for small verification spaces.

pub mod augment;
pub mod composition;
pub mod error;
pub mod extractors;
pub mod model;
pub mod scalar;
pub mod signs;
pub mod verifier;

pub use error::{Error, Result};
pub use model::{Classifier, LabelId, LabelSet, NormKind, Oracle, Truth};
pub use scalar::{Real, Scalar};

use num_rational::Rational64;

pub type Input = model::Input<f64>;
pub type InputSpace = model::InputSpace<f64>;
pub type Distortion = model::Distortion<f64>;
pub type DistortionBudget = model::DistortionBudget<f64>;
pub type ImageInput = extractors::ImageInput<f64>;
pub type QuantizedSpace = verifier::QuantizedSpace<f64>;

pub type ExactInput = model::Input<Rational64>;
pub type ExactDistortionBudget = model::DistortionBudget<Rational64>;
pub type ExactSpace = verifier::QuantizedSpace<Rational64>;
