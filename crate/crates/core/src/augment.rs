//! Augmenting a scored base classifier with a robust candidate vector.
//!
//! The base classifier's softmax is multiplied by the candidate vector and
//! renormalized, so the prediction can only ever be a label consistent with
//! the robustly extracted features.

use std::fmt;

use serde::Serialize;

use crate::composition::CandidateVector;
use crate::error::{Error, Result};
use crate::model::{Classifier, Input, LabelId, LabelSet};

/// Tolerance on the sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Below this mass on the candidate labels the masked vector falls back to uniform.
pub const ZERO_MASS: f64 = 1e-12;

/// Non-negative probabilities summing to one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SoftmaxVector(Vec<f64>);

impl SoftmaxVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidSoftmax("empty vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidSoftmax(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidSoftmax(format!("entries sum to {sum}")));
        }
        Ok(SoftmaxVector(probs))
    }

    /// Numerically stable softmax of raw scores.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidSoftmax("logits must be finite".into()));
        }
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        Self::new(exp.into_iter().map(|e| e / sum).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Highest probability, lowest index on ties.
    pub fn argmax(&self) -> LabelId {
        argmax(&self.0, |_| true).expect("non-empty")
    }
}

fn argmax(p: &[f64], allowed: impl Fn(usize) -> bool) -> Option<LabelId> {
    let mut best: Option<usize> = None;
    for (i, v) in p.iter().enumerate() {
        if allowed(i) && best.is_none_or(|b| *v > p[b]) {
            best = Some(i);
        }
    }
    best.map(LabelId)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AugmentedPrediction {
    pub probabilities: SoftmaxVector,
    pub predicted: LabelId,
    /// The base put (numerically) no mass on any candidate, so the result is
    /// uniform over the candidates.
    pub fallback: bool,
}

/// Masks non-negative scores by the candidate bits and renormalizes.
///
/// Scaling `scores` by a positive constant does not change the result.
pub fn mask_scores(scores: &[f64], c: &CandidateVector) -> Result<AugmentedPrediction> {
    if scores.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            found: scores.len(),
        });
    }
    if c.count() == 0 {
        return Err(Error::EmptyCandidates);
    }
    let masked: Vec<f64> = scores
        .iter()
        .zip(c.bits())
        .map(|(p, b)| if *b { *p } else { 0.0 })
        .collect();
    let sum: f64 = masked.iter().sum();
    let (probs, fallback) = if sum < ZERO_MASS || !sum.is_finite() {
        let k = c.count() as f64;
        (c.bits().iter().map(|b| if *b { 1.0 / k } else { 0.0 }).collect(), true)
    } else {
        (masked.into_iter().map(|p| p / sum).collect::<Vec<f64>>(), false)
    };
    let predicted = argmax(&probs, |i| c.bits()[i]).expect("at least one candidate");
    Ok(AugmentedPrediction {
        probabilities: SoftmaxVector::new(probs)?,
        predicted,
        fallback,
    })
}

/// Elementwise product of a softmax with the candidate vector, renormalized;
/// uniform over the candidates when the product is numerically zero.
pub fn mask_and_renormalize(s: &SoftmaxVector, c: &CandidateVector) -> Result<AugmentedPrediction> {
    mask_scores(s.probs(), c)
}

/// A classifier that also reports a softmax over its labels.
pub trait ScoredClassifier<X: ?Sized>: Send + Sync {
    fn labels(&self) -> &LabelSet;

    fn softmax(&self, x: &X) -> SoftmaxVector;
}

/// Result of the augmented classifier on one input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum AugmentedOutcome {
    Predicted(AugmentedPrediction),
    /// The robust features matched no catalogued tuple.
    Abstain,
}

pub fn augmented_predict<X, V, R>(base: &V, robust: &R, x: &X) -> Result<AugmentedOutcome>
where
    X: ?Sized,
    V: ScoredClassifier<X> + ?Sized,
    R: Classifier<X, Output = CandidateVector> + ?Sized,
{
    check_labels(base, robust)?;
    let c = robust.classify(x);
    if c.is_unknown() || c.count() == 0 {
        return Ok(AugmentedOutcome::Abstain);
    }
    Ok(AugmentedOutcome::Predicted(mask_and_renormalize(&base.softmax(x), &c)?))
}

fn check_labels<X: ?Sized, V, R>(base: &V, robust: &R) -> Result<()>
where
    V: ScoredClassifier<X> + ?Sized,
    R: Classifier<X, Output = CandidateVector> + ?Sized,
{
    if let Some(out) = robust.output_labels() {
        if !out.same_labels(base.labels()) {
            return Err(Error::Config(
                "base classifier and robust classifier disagree on the output labels".into(),
            ));
        }
    }
    Ok(())
}

/// Label chosen by the augmented classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum AugmentedLabel {
    Label(LabelId),
    Abstain,
}

impl fmt::Display for AugmentedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentedLabel::Label(l) => write!(f, "{l}"),
            AugmentedLabel::Abstain => f.write_str("abstain"),
        }
    }
}

/// The augmented classifier as a plain classifier, for attacks and composition.
pub struct Augmented<V, R> {
    pub base: V,
    pub robust: R,
}

impl<V, R> Augmented<V, R> {
    pub fn new<X: ?Sized>(base: V, robust: R) -> Result<Self>
    where
        V: ScoredClassifier<X>,
        R: Classifier<X, Output = CandidateVector>,
    {
        check_labels(&base, &robust)?;
        Ok(Augmented { base, robust })
    }

    pub fn predict<X: ?Sized>(&self, x: &X) -> Result<AugmentedOutcome>
    where
        V: ScoredClassifier<X>,
        R: Classifier<X, Output = CandidateVector>,
    {
        augmented_predict(&self.base, &self.robust, x)
    }
}

impl<X: ?Sized, V, R> Classifier<X> for Augmented<V, R>
where
    V: ScoredClassifier<X>,
    R: Classifier<X, Output = CandidateVector>,
{
    type Output = AugmentedLabel;

    fn classify(&self, x: &X) -> AugmentedLabel {
        match self.predict(x) {
            Ok(AugmentedOutcome::Predicted(p)) => AugmentedLabel::Label(p.predicted),
            _ => AugmentedLabel::Abstain,
        }
    }

    /// Masked probability of the current label minus the best other label.
    fn score_margin(&self, x: &X, current: &AugmentedLabel) -> Option<f64> {
        let AugmentedLabel::Label(l) = current else { return None };
        let Ok(AugmentedOutcome::Predicted(p)) = self.predict(x) else {
            return None;
        };
        let probs = p.probabilities.probs();
        let other = probs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != l.0)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        Some(probs[l.0] - other)
    }
}

/// Prototype model: `softmax(-beta * |x - P_z|^2)`, computed through the
/// equivalent logits `2 beta P_z . x - beta |P_z|^2`.
#[derive(Clone, Debug)]
pub struct PrototypeSoftmax {
    labels: LabelSet,
    prototypes: Vec<Vec<f64>>,
    beta: f64,
}

impl PrototypeSoftmax {
    pub fn new(labels: LabelSet, prototypes: Vec<Vec<f64>>, beta: f64) -> Result<Self> {
        if prototypes.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                found: prototypes.len(),
            });
        }
        if let Some(d) = prototypes.first().map(Vec::len) {
            if prototypes.iter().any(|p| p.len() != d) {
                return Err(Error::Config("prototypes differ in dimension".into()));
            }
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config("beta must be positive".into()));
        }
        Ok(PrototypeSoftmax {
            labels,
            prototypes,
            beta,
        })
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.prototypes
            .iter()
            .map(|p| {
                let dot: f64 = p.iter().zip(x).map(|(a, b)| a * b).sum();
                let norm: f64 = p.iter().map(|a| a * a).sum();
                self.beta * (2.0 * dot - norm)
            })
            .collect()
    }
}

impl ScoredClassifier<Input<f64>> for PrototypeSoftmax {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn softmax(&self, x: &Input<f64>) -> SoftmaxVector {
        SoftmaxVector::from_logits(&self.logits(x.values())).expect("finite logits")
    }
}

/// A deliberately fragile base: it splits its confidence between two labels
/// according to the sign of `w . x - t`, scaled by a steep gain, and puts
/// almost nothing elsewhere. Used to show that attacks on the augmented
/// classifier can move a prediction within a shared feature tuple.
#[derive(Clone, Debug)]
pub struct HairTrigger {
    labels: LabelSet,
    direction: Vec<f64>,
    threshold: f64,
    above: LabelId,
    below: LabelId,
    gain: f64,
}

impl HairTrigger {
    pub fn new(labels: LabelSet, direction: Vec<f64>, threshold: f64, above: LabelId, below: LabelId, gain: f64) -> Result<Self> {
        if !labels.contains(above) || !labels.contains(below) || above == below {
            return Err(Error::Config("hair-trigger labels must be two distinct members".into()));
        }
        Ok(HairTrigger {
            labels,
            direction,
            threshold,
            above,
            below,
            gain,
        })
    }

    pub fn activation(&self, x: &[f64]) -> f64 {
        self.direction.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.threshold
    }
}

impl ScoredClassifier<Input<f64>> for HairTrigger {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn softmax(&self, x: &Input<f64>) -> SoftmaxVector {
        let a = (self.gain * self.activation(x.values())).clamp(-50.0, 50.0);
        let mut logits = vec![-60.0; self.labels.len()];
        logits[self.above.0] = a;
        logits[self.below.0] = -a;
        SoftmaxVector::from_logits(&logits).expect("finite logits")
    }
}
