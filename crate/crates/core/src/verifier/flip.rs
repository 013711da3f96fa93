use std::collections::HashMap;
use std::fmt::Debug;
use std::hash::Hash;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{key_to_norm, norm_key, Classifier, Input, NormKind};
use crate::scalar::Scalar;

use super::enumerate::VerifierConfig;
use super::space::QuantizedSpace;

/// Smallest output-changing distortion of one input, located on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipWitness<T> {
    /// Offset in grid steps per axis.
    pub offset: Vec<i64>,
    pub gamma: Vec<T>,
    /// Norm in the units of [`norm_key`] (squared for L2).
    pub key: T,
    pub norm: NormKind,
}

impl<T: Scalar> FlipWitness<T> {
    pub fn distance(&self) -> f64 {
        key_to_norm(&self.key, self.norm)
    }

    /// Whether this flip is at least `radius` away, compared exactly in norm-key units.
    pub fn at_least(&self, radius: &T) -> bool {
        let limit = match self.norm {
            NormKind::L2 => radius.clone() * radius.clone(),
            _ => radius.clone(),
        };
        self.key >= limit
    }
}

/// Smallest grid-representable `|gamma|` with `f(x + gamma) != f(x)`, by
/// evaluating `f` on every point of `space`.
///
/// Every clamped `x + gamma` is itself a grid point `y`, reached at least as
/// cheaply by `gamma = y - x`, so scanning grid points is exhaustive. Ties go
/// to the lexicographically smallest point. `x` must lie on the grid; it is
/// identified with its grid point and distances are whole steps.
pub fn minimal_flip_distortion<T, F>(
    f: &F,
    x: &Input<T>,
    space: &QuantizedSpace<T>,
    norm: NormKind,
    cfg: &VerifierConfig,
) -> Result<Option<FlipWitness<T>>>
where
    T: Scalar,
    F: Classifier<Input<T>> + ?Sized,
{
    cfg.check(space.len() as u128)?;
    let origin = space
        .coords_of(x.values())
        .ok_or_else(|| Error::Config("input does not lie on the quantized grid".into()))?;
    let current = f.classify(x);
    let best = cfg.run(|| {
        (0..space.len())
            .into_par_iter()
            .filter_map(|flat| {
                let y = space.point(flat);
                if f.classify(&y) == current {
                    return None;
                }
                let offset: Vec<i64> = space
                    .coords(flat)
                    .iter()
                    .zip(&origin)
                    .map(|(c, o)| *c as i64 - *o as i64)
                    .collect();
                Some((norm_key(&space.offset_values(&offset), norm), flat))
            })
            .reduce_with(|a, b| match b.0.partial_cmp(&a.0) {
                Some(std::cmp::Ordering::Less) => b,
                Some(std::cmp::Ordering::Equal) if b.1 < a.1 => b,
                _ => a,
            })
    });
    Ok(best.map(|(key, flat)| {
        let offset: Vec<i64> = space
            .coords(flat)
            .iter()
            .zip(&origin)
            .map(|(c, o)| *c as i64 - *o as i64)
            .collect();
        FlipWitness {
            gamma: space.offset_values(&offset),
            offset,
            key,
            norm,
        }
    }))
}

/// A classifier whose output depends on its input only through a discrete
/// state computed independently for each pixel.
///
/// Inputs are flat sequences of pixels of [`Pixelwise::channels`] values.
/// Implementations must satisfy
/// `classify(x) == output_from_states(&[pixel_state(p) for p in x])`.
pub trait Pixelwise<T>: Classifier<Input<T>> {
    type State: Clone + Eq + Hash + Debug + Send + Sync;

    fn channels(&self) -> usize {
        3
    }

    fn pixel_state(&self, pixel: &[T]) -> Self::State;

    fn output_from_states(&self, states: &[Self::State]) -> Self::Output;

    /// An assignment drawing each pixel's state from `reachable[p]` whose
    /// output differs from `current`, if any exists. Must be exact: `None`
    /// only when no such assignment exists.
    fn changing_assignment(&self, current: &Self::Output, reachable: &[Vec<Self::State>]) -> Option<Vec<Self::State>>;
}

struct Reach<T, S> {
    state: S,
    key: T,
    offset: Vec<i64>,
}

/// Per pixel, every state reachable on the channel grid with the cheapest
/// Linf offset reaching it. Offsets are scanned in lexicographic order so the
/// first cheapest one is kept.
fn reachable_states<T, F>(f: &F, x: &Input<T>, space: &QuantizedSpace<T>, pixel: usize) -> Vec<Reach<T, F::State>>
where
    T: Scalar,
    F: Pixelwise<T> + ?Sized,
{
    let c = f.channels();
    let base = pixel * c;
    let axes = &space.axes()[base..base + c];
    let sizes = &space.sizes()[base..base + c];
    let origin: Vec<usize> = (0..c)
        .map(|k| axes[k].nearest(&x.values()[base + k], sizes[k]))
        .collect();
    let mut best: HashMap<F::State, Reach<T, F::State>> = HashMap::new();
    let mut order = Vec::new();
    let total: usize = sizes.iter().product();
    let mut idx = vec![0usize; c];
    for _ in 0..total {
        let values: Vec<T> = idx.iter().zip(axes).map(|(i, a)| a.value(*i)).collect();
        let offset: Vec<i64> = idx.iter().zip(&origin).map(|(i, o)| *i as i64 - *o as i64).collect();
        let delta: Vec<T> = offset
            .iter()
            .zip(axes)
            .map(|(k, a)| a.step.clone() * T::from_i64(*k).expect("offset fits scalar"))
            .collect();
        let key = norm_key(&delta, NormKind::Linf);
        let state = f.pixel_state(&values);
        match best.get_mut(&state) {
            Some(r) if key < r.key => {
                r.key = key;
                r.offset = offset;
            }
            Some(_) => {}
            None => {
                order.push(state.clone());
                best.insert(state.clone(), Reach { state, key, offset });
            }
        }
        for k in (0..c).rev() {
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    order.into_iter().map(|s| best.remove(&s).expect("state recorded")).collect()
}

/// Exact minimal Linf flip distortion for a [`Pixelwise`] classifier.
///
/// Under Linf each pixel moves independently, so the reachable state set of
/// every pixel at a given radius is computed per pixel, and the smallest
/// radius at which [`Pixelwise::changing_assignment`] succeeds is the answer.
/// Agrees with [`minimal_flip_distortion`] under Linf while costing
/// `pixels × levels^channels` instead of `levels^(pixels × channels)`.
pub fn minimal_flip_distortion_pixelwise<T, F>(
    f: &F,
    x: &Input<T>,
    space: &QuantizedSpace<T>,
    cfg: &VerifierConfig,
) -> Result<Option<FlipWitness<T>>>
where
    T: Scalar,
    F: Pixelwise<T> + ?Sized,
{
    let c = f.channels();
    if space.dims() != x.dims() || x.dims() % c != 0 {
        return Err(Error::DimensionMismatch {
            expected: space.dims(),
            found: x.dims(),
        });
    }
    let origin = space
        .coords_of(x.values())
        .ok_or_else(|| Error::Config("input does not lie on the quantized grid".into()))?;
    let pixels = x.dims() / c;
    let per_pixel: u128 = space.sizes()[..c].iter().map(|s| *s as u128).product();
    cfg.check(per_pixel * pixels as u128)?;

    let reach: Vec<Vec<Reach<T, F::State>>> =
        cfg.run(|| (0..pixels).into_par_iter().map(|p| reachable_states(f, x, space, p)).collect());
    let current = f.classify(x);

    let mut radii: Vec<T> = reach.iter().flatten().map(|r| r.key.clone()).collect();
    radii.sort_by(|a, b| a.partial_cmp(b).expect("comparable radii"));
    radii.dedup();

    for radius in radii {
        let reachable: Vec<Vec<F::State>> = reach
            .iter()
            .map(|rs| rs.iter().filter(|r| r.key <= radius).map(|r| r.state.clone()).collect())
            .collect();
        let Some(assignment) = f.changing_assignment(&current, &reachable) else {
            continue;
        };
        let mut offset = Vec::with_capacity(x.dims());
        for (p, state) in assignment.iter().enumerate() {
            let r = reach[p]
                .iter()
                .find(|r| &r.state == state && r.key <= radius)
                .ok_or_else(|| Error::Config("assignment uses an unreachable pixel state".into()))?;
            offset.extend_from_slice(&r.offset);
        }
        let gamma = space.offset_values(&offset);
        let target: Vec<usize> = origin
            .iter()
            .zip(&offset)
            .map(|(o, k)| (*o as i64 + k) as usize)
            .collect();
        let moved = Input::new_unchecked(x.space().clone(), space.values_at(&target));
        if f.classify(&moved) == current {
            return Err(Error::Config(
                "pixelwise decomposition disagrees with the classifier".into(),
            ));
        }
        return Ok(Some(FlipWitness {
            key: norm_key(&gamma, NormKind::Linf),
            gamma,
            offset,
            norm: NormKind::Linf,
        }));
    }
    Ok(None)
}
