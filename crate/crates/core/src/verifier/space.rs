use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Classifier, Input, InputSpace, LabelId, LabelSet, Oracle, Truth};
use crate::scalar::Scalar;

/// One axis of a quantized grid: `lo, lo + step, ..., hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis<T> {
    pub lo: T,
    pub hi: T,
    pub step: T,
}

impl<T: Scalar> Axis<T> {
    pub fn new(lo: T, hi: T, step: T) -> Result<Self> {
        let axis = Axis { lo, hi, step };
        axis.levels()?;
        Ok(axis)
    }

    /// Number of grid values, validating that `step` divides `hi - lo`.
    pub fn levels(&self) -> Result<usize> {
        if self.step <= T::zero() {
            return Err(Error::Config(format!("grid step must be positive, got {:?}", self.step)));
        }
        if self.hi < self.lo {
            return Err(Error::Config("grid upper bound below lower bound".into()));
        }
        let span = (self.hi.clone() - self.lo.clone()) / self.step.clone();
        let n = span.as_f64().round();
        if !(0.0..=1e12).contains(&n) {
            return Err(Error::Config("grid too large".into()));
        }
        let back = self.lo.clone() + self.step.clone() * T::from_f64_lossy(n);
        let exact = if T::budget_tolerance().is_zero() {
            back == self.hi
        } else {
            (back - self.hi.clone()).abs().as_f64() <= 1e-9 * self.hi.as_f64().abs().max(1.0)
        };
        if !exact {
            return Err(Error::Config(format!(
                "step {:?} does not divide the range [{:?}, {:?}]",
                self.step, self.lo, self.hi
            )));
        }
        Ok(n as usize + 1)
    }

    pub fn value(&self, i: usize) -> T {
        self.lo.clone() + self.step.clone() * T::from_usize(i).expect("grid index fits scalar")
    }

    /// Nearest grid index to `v`, clamped to the axis.
    pub fn nearest(&self, v: &T, levels: usize) -> usize {
        let q = ((v.clone() - self.lo.clone()) / self.step.clone()).as_f64().round();
        q.clamp(0.0, (levels - 1) as f64) as usize
    }

    /// Grid index of `v` if it lies exactly on the grid.
    pub fn index_of(&self, v: &T, levels: usize) -> Option<usize> {
        let i = self.nearest(v, levels);
        let back = self.value(i);
        let on_grid = if T::budget_tolerance().is_zero() {
            &back == v
        } else {
            (back - v.clone()).abs().as_f64() <= 1e-9
        };
        on_grid.then_some(i)
    }
}

/// Finite grid of inputs, enumerated in row-major order (last axis fastest),
/// which is also lexicographic order of the grid coordinates.
#[derive(Debug)]
pub struct QuantizedSpace<T> {
    axes: Vec<Axis<T>>,
    sizes: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
    input_space: Arc<InputSpace<T>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DomainRecord {
    pub dims: usize,
    pub sizes: Vec<usize>,
    pub points: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub step: Vec<f64>,
}

impl<T: Scalar> QuantizedSpace<T> {
    pub fn new(axes: Vec<Axis<T>>) -> Result<Arc<Self>> {
        if axes.is_empty() {
            return Err(Error::Config("quantized space needs at least one axis".into()));
        }
        let sizes = axes.iter().map(Axis::levels).collect::<Result<Vec<_>>>()?;
        // Grids too large to index still serve per-pixel searches; their
        // size saturates and every enumeration refuses them on the cap.
        let mut strides = vec![1usize; sizes.len()];
        for i in (0..sizes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1].saturating_mul(sizes[i + 1]);
        }
        let total = strides[0].saturating_mul(sizes[0]);
        let input_space =
            InputSpace::new(axes.iter().map(|a| (a.lo.clone(), a.hi.clone())).collect())?;
        Ok(Arc::new(QuantizedSpace {
            axes,
            sizes,
            strides,
            total,
            input_space,
        }))
    }

    /// Same grid along every axis.
    pub fn uniform(dims: usize, lo: T, hi: T, step: T) -> Result<Arc<Self>> {
        Self::new(vec![Axis::new(lo, hi, step)?; dims])
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis<T>] {
        &self.axes
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of grid points, saturating at `usize::MAX`.
    pub fn len(&self) -> usize {
        self.total
    }

    /// Whether every point has a distinct flat index.
    pub fn is_indexable(&self) -> bool {
        self.total < usize::MAX
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn input_space(&self) -> &Arc<InputSpace<T>> {
        &self.input_space
    }

    pub fn coords(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims()];
        for (i, stride) in self.strides.iter().enumerate() {
            out[i] = flat / stride;
            flat %= stride;
        }
        out
    }

    pub fn flat(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Flat index of `coords + offset`, clamped to the grid.
    pub fn shifted(&self, coords: &[usize], offset: &[i64]) -> usize {
        let mut flat = 0;
        for (i, (c, o)) in coords.iter().zip(offset).enumerate() {
            let v = (*c as i64 + o).clamp(0, self.sizes[i] as i64 - 1) as usize;
            flat += v * self.strides[i];
        }
        flat
    }

    pub fn values_at(&self, coords: &[usize]) -> Vec<T> {
        coords
            .iter()
            .zip(&self.axes)
            .map(|(c, a)| a.value(*c))
            .collect()
    }

    pub fn point(&self, flat: usize) -> Input<T> {
        Input::new_unchecked(self.input_space.clone(), self.values_at(&self.coords(flat)))
    }

    pub fn offset_values(&self, offset: &[i64]) -> Vec<T> {
        offset
            .iter()
            .zip(&self.axes)
            .map(|(k, a)| a.step.clone() * T::from_i64(*k).expect("offset fits scalar"))
            .collect()
    }

    /// Nearest grid point, used by table classifiers so they stay total.
    pub fn nearest_flat(&self, values: &[T]) -> usize {
        let coords: Vec<usize> = values
            .iter()
            .zip(self.axes.iter().zip(&self.sizes))
            .map(|(v, (a, n))| a.nearest(v, *n))
            .collect();
        self.flat(&coords)
    }

    /// Grid coordinates of an input, if it lies on the grid.
    pub fn coords_of(&self, values: &[T]) -> Option<Vec<usize>> {
        if values.len() != self.dims() {
            return None;
        }
        values
            .iter()
            .zip(self.axes.iter().zip(&self.sizes))
            .map(|(v, (a, n))| a.index_of(v, *n))
            .collect()
    }

    pub fn record(&self) -> DomainRecord {
        DomainRecord {
            dims: self.dims(),
            sizes: self.sizes.clone(),
            points: self.total,
            lo: self.axes.iter().map(|a| a.lo.as_f64()).collect(),
            hi: self.axes.iter().map(|a| a.hi.as_f64()).collect(),
            step: self.axes.iter().map(|a| a.step.as_f64()).collect(),
        }
    }
}

/// Classifier given by a label per grid point.
#[derive(Clone, Debug)]
pub struct GridTable<T> {
    space: Arc<QuantizedSpace<T>>,
    labels: Vec<LabelId>,
    label_set: LabelSet,
}

impl<T: Scalar> GridTable<T> {
    pub fn new(space: Arc<QuantizedSpace<T>>, labels: Vec<LabelId>, label_set: LabelSet) -> Result<Self> {
        if labels.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                found: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|l| !label_set.contains(**l)) {
            return Err(Error::Config(format!("label {bad} outside label set")));
        }
        Ok(GridTable {
            space,
            labels,
            label_set,
        })
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn set(&mut self, flat: usize, label: LabelId) {
        self.labels[flat] = label;
    }
}

impl<T: Scalar> Classifier<Input<T>> for GridTable<T> {
    type Output = LabelId;

    fn classify(&self, x: &Input<T>) -> LabelId {
        self.labels[self.space.nearest_flat(x.values())]
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        Some(&self.label_set)
    }
}

/// Oracle given by a truth value per grid point.
#[derive(Clone, Debug)]
pub struct GridOracle<T> {
    space: Arc<QuantizedSpace<T>>,
    truths: Vec<Truth<LabelId>>,
}

impl<T: Scalar> GridOracle<T> {
    pub fn new(space: Arc<QuantizedSpace<T>>, truths: Vec<Truth<LabelId>>) -> Result<Self> {
        if truths.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                found: truths.len(),
            });
        }
        Ok(GridOracle { space, truths })
    }

    pub fn truths(&self) -> &[Truth<LabelId>] {
        &self.truths
    }
}

impl<T: Scalar> Oracle<Input<T>> for GridOracle<T> {
    type Label = LabelId;

    fn truth(&self, x: &Input<T>) -> Truth<LabelId> {
        self.truths[self.space.nearest_flat(x.values())].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn huge_grids_saturate_instead_of_failing() {
        let space = QuantizedSpace::uniform(27, 0.0, 1.0, 0.1).unwrap();
        assert!(!space.is_indexable());
        assert_eq!(space.len(), usize::MAX);
        assert!(QuantizedSpace::uniform(3, 0.0, 1.0, 0.1).unwrap().is_indexable());
    }

    #[test]
    fn axis_levels_and_divisibility() {
        assert_eq!(Axis::new(0.0, 1.0, 0.25).unwrap().levels().unwrap(), 5);
        assert!(Axis::new(0.0, 1.0, 0.3).is_err());
        assert!(Axis::new(0.0, 1.0, 0.0).is_err());
        let third = Ratio::new(1i64, 3);
        assert_eq!(
            Axis::new(Ratio::from_integer(0), Ratio::from_integer(1), third).unwrap().levels().unwrap(),
            4
        );
        assert!(Axis::new(Ratio::from_integer(0), Ratio::from_integer(1), Ratio::new(2i64, 3)).is_err());
    }

    #[test]
    fn flat_indices_follow_lexicographic_order() {
        let space = QuantizedSpace::new(vec![
            Axis::new(0.0, 2.0, 1.0).unwrap(),
            Axis::new(0.0, 1.0, 0.5).unwrap(),
        ])
        .unwrap();
        assert_eq!(space.len(), 9);
        let all: Vec<_> = (0..space.len()).map(|i| space.coords(i)).collect();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
        assert_eq!(space.flat(&[2, 1]), 7);
        assert_eq!(space.point(7).values(), &[2.0, 0.5]);
        assert_eq!(space.shifted(&[2, 1], &[5, -3]), space.flat(&[2, 0]));
        assert_eq!(space.coords_of(&[1.0, 0.5]), Some(vec![1, 1]));
        assert_eq!(space.coords_of(&[1.0, 0.3]), None);
    }
}
