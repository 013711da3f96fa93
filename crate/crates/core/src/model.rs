//! Classifiers, oracles, inputs and distortion.
//!
//! A classifier is any deterministic total function from an input to an
//! output label. An oracle gives the ground truth for an input, which is
//! either a label or [`Truth::Nonsense`] when no label applies. Inputs live
//! in a box-bounded space; adding a distortion clamps back into that box so a
//! perturbed input is always a legal input.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;
use std::sync::Arc;

use num_traits::{Float, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelId(pub usize);

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Label {
    pub id: LabelId,
    pub name: String,
}

/// Ordered, duplicate-free set of label names.
///
/// The namespace keeps label sets of different pipeline stages apart, so a
/// feature label can never be confused with an output label of the same name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    namespace: String,
    names: Vec<String>,
    index: HashMap<String, LabelId>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(
        namespace: impl Into<String>,
        names: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let mut set = LabelSet {
            namespace: namespace.into(),
            names: Vec::new(),
            index: HashMap::new(),
        };
        for name in names {
            set.push(name.into())?;
        }
        Ok(set)
    }

    /// Label set `{0, 1, .., n-1}` named by index.
    pub fn numbered(namespace: impl Into<String>, n: usize) -> Self {
        Self::new(namespace, (0..n).map(|i| i.to_string())).expect("numbered labels are unique")
    }

    pub(crate) fn push(&mut self, name: String) -> Result<LabelId> {
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateLabel(name));
        }
        let id = LabelId(self.names.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<LabelId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        self.names.get(id.0).map(String::as_str)
    }

    pub fn label(&self, id: LabelId) -> Option<Label> {
        self.name(id).map(|name| Label {
            id,
            name: name.to_string(),
        })
    }

    pub fn contains(&self, id: LabelId) -> bool {
        id.0 < self.names.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> + '_ {
        (0..self.names.len()).map(LabelId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Same names in the same order, ignoring namespace.
    pub fn same_labels(&self, other: &LabelSet) -> bool {
        self.names == other.names
    }
}

/// Oracle output: a true label, or the marker for inputs no label fits.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Truth<L> {
    Natural(L),
    Nonsense,
}

impl<L> Truth<L> {
    pub fn natural(&self) -> Option<&L> {
        match self {
            Truth::Natural(l) => Some(l),
            Truth::Nonsense => None,
        }
    }

    pub fn is_natural(&self) -> bool {
        matches!(self, Truth::Natural(_))
    }

    pub fn map<M>(self, f: impl FnOnce(L) -> M) -> Truth<M> {
        match self {
            Truth::Natural(l) => Truth::Natural(f(l)),
            Truth::Nonsense => Truth::Nonsense,
        }
    }
}

/// A deterministic, total classifier from `X` to `Self::Output`.
pub trait Classifier<X: ?Sized>: Send + Sync {
    type Output: Clone + Eq + Hash + fmt::Debug + Send + Sync;

    fn classify(&self, x: &X) -> Self::Output;

    /// How strongly `current` wins on `x` over its best alternative.
    ///
    /// Positive while `current` is the output, larger meaning harder to
    /// dislodge. Attacks use it as a hill-climbing objective; classifiers
    /// without a useful score return `None`.
    fn score_margin(&self, _x: &X, _current: &Self::Output) -> Option<f64> {
        None
    }

    /// Declared output label set, if the classifier has one.
    fn output_labels(&self) -> Option<&LabelSet> {
        None
    }

    /// Declared input label sets, one per tuple position, for classifiers
    /// whose inputs are labels of an earlier stage.
    fn input_labels(&self) -> Option<&[LabelSet]> {
        None
    }
}

/// Ground truth labelling for inputs of type `X`.
pub trait Oracle<X: ?Sized>: Send + Sync {
    type Label: Clone + Eq + Hash + fmt::Debug + Send + Sync;

    fn truth(&self, x: &X) -> Truth<Self::Label>;
}

macro_rules! forward_classifier {
    ($($wrapper:ty),*) => {$(
        impl<X: ?Sized, C: Classifier<X> + ?Sized> Classifier<X> for $wrapper {
            type Output = C::Output;

            fn classify(&self, x: &X) -> Self::Output {
                (**self).classify(x)
            }

            fn score_margin(&self, x: &X, current: &Self::Output) -> Option<f64> {
                (**self).score_margin(x, current)
            }

            fn output_labels(&self) -> Option<&LabelSet> {
                (**self).output_labels()
            }

            fn input_labels(&self) -> Option<&[LabelSet]> {
                (**self).input_labels()
            }
        }

        impl<X: ?Sized, C: Oracle<X> + ?Sized> Oracle<X> for $wrapper {
            type Label = C::Label;

            fn truth(&self, x: &X) -> Truth<Self::Label> {
                (**self).truth(x)
            }
        }
    )*};
}

forward_classifier!(&C, Box<C>, Arc<C>);

/// Classifier backed by a closure.
pub struct FnClassifier<F>(pub F);

impl<X: ?Sized, O, F> Classifier<X> for FnClassifier<F>
where
    F: Fn(&X) -> O + Send + Sync,
    O: Clone + Eq + Hash + fmt::Debug + Send + Sync,
{
    type Output = O;

    fn classify(&self, x: &X) -> O {
        (self.0)(x)
    }
}

/// Oracle backed by a closure.
pub struct FnOracle<F>(pub F);

impl<X: ?Sized, L, F> Oracle<X> for FnOracle<F>
where
    F: Fn(&X) -> Truth<L> + Send + Sync,
    L: Clone + Eq + Hash + fmt::Debug + Send + Sync,
{
    type Label = L;

    fn truth(&self, x: &X) -> Truth<L> {
        (self.0)(x)
    }
}

/// Per-dimension closed bounds of an input space.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSpace<T> {
    bounds: Vec<(T, T)>,
}

impl<T: Scalar> InputSpace<T> {
    pub fn new(bounds: Vec<(T, T)>) -> Result<Arc<Self>> {
        if bounds.is_empty() {
            return Err(Error::Config("input space needs at least one dimension".into()));
        }
        for (dim, (lo, hi)) in bounds.iter().enumerate() {
            if lo > hi {
                return Err(Error::Config(format!(
                    "dimension {dim}: lower bound {lo:?} above upper bound {hi:?}"
                )));
            }
        }
        Ok(Arc::new(InputSpace { bounds }))
    }

    pub fn uniform(dims: usize, lo: T, hi: T) -> Result<Arc<Self>> {
        Self::new(vec![(lo, hi); dims])
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    fn clamp(&self, dim: usize, v: T) -> T {
        let (lo, hi) = &self.bounds[dim];
        if v < *lo {
            lo.clone()
        } else if v > *hi {
            hi.clone()
        } else {
            v
        }
    }
}

/// A point of an [`InputSpace`].
#[derive(Clone, Debug)]
pub struct Input<T> {
    space: Arc<InputSpace<T>>,
    values: Vec<T>,
}

impl<T: Scalar> Input<T> {
    pub fn new(space: Arc<InputSpace<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != space.dims() {
            return Err(Error::DimensionMismatch {
                expected: space.dims(),
                found: values.len(),
            });
        }
        for (dim, (v, (lo, hi))) in values.iter().zip(space.bounds()).enumerate() {
            if v < lo || v > hi {
                return Err(Error::OutOfBounds {
                    dim,
                    value: v.as_f64(),
                    lo: lo.as_f64(),
                    hi: hi.as_f64(),
                });
            }
        }
        Ok(Input { space, values })
    }

    /// Builds an input whose values are already known to be in bounds.
    pub(crate) fn new_unchecked(space: Arc<InputSpace<T>>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), space.dims());
        Input { space, values }
    }

    pub fn space(&self) -> &Arc<InputSpace<T>> {
        &self.space
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

impl<T: PartialEq> PartialEq for Input<T> {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.space.bounds == other.space.bounds
    }
}

/// Additive perturbation of an input.
#[derive(Clone, Debug, PartialEq)]
pub struct Distortion<T> {
    pub delta: Vec<T>,
}

impl<T: Scalar> Distortion<T> {
    pub fn new(delta: Vec<T>) -> Self {
        Distortion { delta }
    }

    pub fn zero(dims: usize) -> Self {
        Distortion {
            delta: vec![T::zero(); dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.delta.len()
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(Zero::is_zero)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
            NormKind::Linf => "linf",
        })
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            "linf" | "l_inf" | "inf" => Ok(NormKind::Linf),
            other => Err(Error::Config(format!("unknown norm `{other}` (expected l1, l2 or linf)"))),
        }
    }
}

/// Norm of a distortion vector.
pub fn norm_of<T: Scalar + Float>(gamma: &Distortion<T>, norm: NormKind) -> T {
    match norm {
        NormKind::L2 => norm_key(&gamma.delta, norm).sqrt(),
        _ => norm_key(&gamma.delta, norm),
    }
}

/// Exact comparison key for a norm: the norm itself for L1 and Linf, the
/// squared norm for L2. Monotone in the norm and free of square roots, so it
/// stays exact for rational scalars.
pub fn norm_key<T: Scalar>(delta: &[T], norm: NormKind) -> T {
    match norm {
        NormKind::L1 => delta.iter().fold(T::zero(), |acc, v| acc + v.abs()),
        NormKind::L2 => delta
            .iter()
            .fold(T::zero(), |acc, v| acc + v.clone() * v.clone()),
        NormKind::Linf => delta
            .iter()
            .fold(T::zero(), |acc, v| T::max_of(acc, v.abs())),
    }
}

/// Converts a norm key back into a norm value as `f64`.
pub fn key_to_norm<T: Scalar>(key: &T, norm: NormKind) -> f64 {
    match norm {
        NormKind::L2 => key.as_f64().sqrt(),
        _ => key.as_f64(),
    }
}

/// Admissible perturbation ball: a norm and an upper bound `lambda`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistortionBudget<T> {
    pub norm: NormKind,
    pub lambda: T,
}

impl<T: Scalar> DistortionBudget<T> {
    pub fn new(norm: NormKind, lambda: T) -> Result<Self> {
        if lambda < T::zero() {
            return Err(Error::Config(format!("lambda must be non-negative, got {lambda:?}")));
        }
        Ok(DistortionBudget { norm, lambda })
    }

    /// `lambda` in the units of [`norm_key`], widened by the scalar tolerance.
    pub fn key_limit(&self) -> T {
        let lim = self.lambda.clone() + T::budget_tolerance();
        match self.norm {
            NormKind::L2 => lim.clone() * lim,
            _ => lim,
        }
    }

    /// Whether `|gamma| <= lambda` under this budget's norm.
    pub fn admits(&self, gamma: &Distortion<T>) -> bool {
        self.admits_delta(&gamma.delta)
    }

    pub fn admits_delta(&self, delta: &[T]) -> bool {
        norm_key(delta, self.norm) <= self.key_limit()
    }
}

/// `x + gamma`, clamped per dimension to the input's bounds.
pub fn apply_distortion<T: Scalar>(x: &Input<T>, gamma: &Distortion<T>) -> Result<Input<T>> {
    if gamma.dims() != x.dims() {
        return Err(Error::DimensionMismatch {
            expected: x.dims(),
            found: gamma.dims(),
        });
    }
    let values = x
        .values
        .iter()
        .zip(&gamma.delta)
        .enumerate()
        .map(|(dim, (v, d))| x.space.clamp(dim, v.clone() + d.clone()))
        .collect();
    Ok(Input::new_unchecked(x.space.clone(), values))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Correctness {
    Correct,
    Incorrect,
    Nonsense,
}

pub fn correctness_of<X, F, O>(f: &F, o: &O, x: &X) -> Correctness
where
    X: ?Sized,
    F: Classifier<X> + ?Sized,
    O: Oracle<X, Label = F::Output> + ?Sized,
{
    match o.truth(x) {
        Truth::Nonsense => Correctness::Nonsense,
        Truth::Natural(label) if f.classify(x) == label => Correctness::Correct,
        Truth::Natural(_) => Correctness::Incorrect,
    }
}

/// Whether `x` is λ-adversarial for `f`, witnessed by `gamma`.
///
/// Holds iff `f` misclassifies the natural input `x`, `gamma` is within
/// budget, and `x + gamma` is correctly classified with the same true label
/// as `x`. The adversarial point is the misclassified `x`, reachable from a
/// correctly classified neighbour.
pub fn is_lambda_adversarial<T, F, O>(
    f: &F,
    o: &O,
    x: &Input<T>,
    gamma: &Distortion<T>,
    budget: &DistortionBudget<T>,
) -> Result<bool>
where
    T: Scalar,
    F: Classifier<Input<T>> + ?Sized,
    O: Oracle<Input<T>, Label = F::Output> + ?Sized,
{
    let moved = apply_distortion(x, gamma)?;
    let truth = match o.truth(x) {
        Truth::Natural(label) => label,
        Truth::Nonsense => return Ok(false),
    };
    if f.classify(x) == truth || !budget.admits(gamma) {
        return Ok(false);
    }
    let moved_truth = match o.truth(&moved) {
        Truth::Natural(label) => label,
        Truth::Nonsense => return Ok(false),
    };
    Ok(moved_truth == truth && f.classify(&moved) == moved_truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn line(values: &[f64], lo: f64, hi: f64) -> Input<f64> {
        let space = InputSpace::uniform(values.len(), lo, hi).unwrap();
        Input::new(space, values.to_vec()).unwrap()
    }

    #[test]
    fn norms_of_small_vectors() {
        assert_eq!(norm_of(&Distortion::new(vec![0.0, 0.0, 0.0]), NormKind::L2), 0.0);
        assert_eq!(norm_of(&Distortion::new(vec![3.0, -4.0]), NormKind::L2), 5.0);
        assert_eq!(norm_of(&Distortion::new(vec![1.0, -2.0, 3.0]), NormKind::Linf), 3.0);
        assert_eq!(norm_of(&Distortion::new(vec![1.0, -2.0, 3.0]), NormKind::L1), 6.0);
    }

    #[test]
    fn distortion_adds_and_clamps() {
        let x = line(&[1.0, 2.0], 0.0, 3.0);
        let same = apply_distortion(&x, &Distortion::zero(2)).unwrap();
        assert_eq!(same.values(), &[1.0, 2.0]);
        let moved = apply_distortion(&x, &Distortion::new(vec![1.0, -1.0])).unwrap();
        assert_eq!(moved.values(), &[2.0, 1.0]);
        let x = line(&[3.0, 0.0], 0.0, 3.0);
        let clamped = apply_distortion(&x, &Distortion::new(vec![2.0, -2.0])).unwrap();
        assert_eq!(clamped.values(), &[3.0, 0.0]);
    }

    #[test]
    fn distortion_dimension_mismatch_is_an_error() {
        let x = line(&[1.0, 2.0], 0.0, 3.0);
        let err = apply_distortion(&x, &Distortion::zero(3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, found: 3 }));
    }

    #[test]
    fn input_rejects_out_of_bounds_values() {
        let space = InputSpace::uniform(2, 0.0, 1.0).unwrap();
        assert!(matches!(
            Input::new(space.clone(), vec![0.5, 1.5]),
            Err(Error::OutOfBounds { dim: 1, .. })
        ));
        assert!(Input::new(space, vec![0.5]).is_err());
    }

    #[test]
    fn label_sets_reject_duplicates() {
        assert!(matches!(
            LabelSet::new("y", ["a", "b", "a"]),
            Err(Error::DuplicateLabel(name)) if name == "a"
        ));
        let set = LabelSet::new("y", ["a", "b"]).unwrap();
        assert_eq!(set.id("b"), Some(LabelId(1)));
        assert_eq!(set.label(LabelId(0)).unwrap().name, "a");
        assert!(!set.contains(LabelId(2)));
    }

    /// The 3-point space {0, 1, 2}: the oracle says `a` everywhere and the
    /// classifier is wrong only at 1.
    fn three_point() -> (Arc<InputSpace<f64>>, impl Classifier<Input<f64>, Output = u8>, impl Oracle<Input<f64>, Label = u8>) {
        let space = InputSpace::uniform(1, 0.0, 2.0).unwrap();
        let f = FnClassifier(|x: &Input<f64>| if x.values()[0] == 1.0 { 1u8 } else { 0u8 });
        let o = FnOracle(|_: &Input<f64>| Truth::Natural(0u8));
        (space, f, o)
    }

    #[test]
    fn correctness_partitions() {
        let (space, f, o) = three_point();
        let at = |v: f64| Input::new(space.clone(), vec![v]).unwrap();
        assert_eq!(correctness_of(&f, &o, &at(0.0)), Correctness::Correct);
        assert_eq!(correctness_of(&f, &o, &at(1.0)), Correctness::Incorrect);
        let nonsense = FnOracle(|_: &Input<f64>| Truth::<u8>::Nonsense);
        assert_eq!(correctness_of(&f, &nonsense, &at(1.0)), Correctness::Nonsense);
    }

    #[test]
    fn adversarial_predicate_on_three_points() {
        let (space, f, o) = three_point();
        let at = |v: f64| Input::new(space.clone(), vec![v]).unwrap();
        let one = DistortionBudget::new(NormKind::L2, 1.0).unwrap();
        let up = Distortion::new(vec![1.0]);
        let down = Distortion::new(vec![-1.0]);
        // f(2) = o(2) = o(1): x = 1 is adversarial through gamma = +1, and
        // symmetrically through -1.
        assert!(is_lambda_adversarial(&f, &o, &at(1.0), &up, &one).unwrap());
        assert!(is_lambda_adversarial(&f, &o, &at(1.0), &down, &one).unwrap());
        // Correctly classified points never are.
        assert!(!is_lambda_adversarial(&f, &o, &at(0.0), &up, &one).unwrap());
        // Zero budget.
        let zero = DistortionBudget::new(NormKind::L2, 0.0).unwrap();
        assert!(!is_lambda_adversarial(&f, &o, &at(1.0), &up, &zero).unwrap());
        assert!(!is_lambda_adversarial(&f, &o, &at(1.0), &Distortion::zero(1), &zero).unwrap());
    }

    #[test]
    fn budget_boundary_uses_tolerance() {
        let b = DistortionBudget::new(NormKind::L2, 5.0).unwrap();
        assert!(b.admits(&Distortion::new(vec![3.0, 4.0])));
        assert!(b.admits(&Distortion::new(vec![3.0, 4.0 + 1e-13])));
        assert!(!b.admits(&Distortion::new(vec![3.0, 4.0 + 1e-9])));
        assert!(DistortionBudget::new(NormKind::L1, -1.0).is_err());
    }

    #[test]
    fn rational_budget_is_exact() {
        let b = DistortionBudget::new(NormKind::L2, Ratio::new(5i64, 4)).unwrap();
        assert!(b.admits(&Distortion::new(vec![Ratio::new(3, 4), Ratio::new(1, 1)])));
        assert!(!b.admits(&Distortion::new(vec![Ratio::new(3, 4), Ratio::new(1001, 1000)])));
    }

    #[test]
    fn norm_parsing() {
        assert_eq!("LINF".parse::<NormKind>().unwrap(), NormKind::Linf);
        assert_eq!("l1".parse::<NormKind>().unwrap(), NormKind::L1);
        assert!("l3".parse::<NormKind>().is_err());
    }

    proptest! {
        #[test]
        fn zero_distortion_is_identity(values in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
            let x = line(&values, -5.0, 5.0);
            let y = apply_distortion(&x, &Distortion::zero(values.len())).unwrap();
            prop_assert_eq!(y, x);
        }

        #[test]
        fn adversarial_is_monotone_in_lambda(
            table in proptest::collection::vec(0u8..3, 6),
            truth in proptest::collection::vec(0u8..3, 6),
            x in 0usize..6,
            step in -3i32..=3,
            l1 in 0.0f64..4.0,
            extra in 0.0f64..4.0,
        ) {
            let space = InputSpace::uniform(1, 0.0, 5.0).unwrap();
            let t = table.clone();
            let f = FnClassifier(move |p: &Input<f64>| t[p.values()[0] as usize]);
            let tr = truth.clone();
            let o = FnOracle(move |p: &Input<f64>| Truth::Natural(tr[p.values()[0] as usize]));
            let point = Input::new(space, vec![x as f64]).unwrap();
            let gamma = Distortion::new(vec![step as f64]);
            for norm in [NormKind::L1, NormKind::L2, NormKind::Linf] {
                let small = DistortionBudget::new(norm, l1).unwrap();
                let big = DistortionBudget::new(norm, l1 + extra).unwrap();
                if is_lambda_adversarial(&f, &o, &point, &gamma, &small).unwrap() {
                    prop_assert!(is_lambda_adversarial(&f, &o, &point, &gamma, &big).unwrap());
                }
            }
        }
    }
}
