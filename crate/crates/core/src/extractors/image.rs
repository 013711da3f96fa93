use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Input, InputSpace};
use crate::scalar::Scalar;
use crate::verifier::QuantizedSpace;

/// RGB image with channels in `[0, 1]`, stored row-major as a flat input of
/// `3 * width * height` values so the generic verifier applies unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageInput<T> {
    width: usize,
    height: usize,
    input: Input<T>,
}

impl<T: Scalar> ImageInput<T> {
    pub fn new(width: usize, height: usize, pixels: Vec<[T; 3]>) -> Result<Self> {
        Self::from_flat(width, height, pixels.into_iter().flatten().collect())
    }

    pub fn from_flat(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if values.len() != 3 * width * height {
            return Err(Error::DimensionMismatch {
                expected: 3 * width * height,
                found: values.len(),
            });
        }
        let input = Input::new(Self::space(width, height)?, values)?;
        Ok(ImageInput { width, height, input })
    }

    /// Wraps a flat input of the right length.
    pub fn from_input(width: usize, height: usize, input: Input<T>) -> Result<Self> {
        Self::from_flat(width, height, input.into_values())
    }

    /// The `[0, 1]^(3wh)` space of images of this size.
    pub fn space(width: usize, height: usize) -> Result<Arc<InputSpace<T>>> {
        InputSpace::uniform(3 * width * height, T::zero(), T::one())
    }

    /// Every channel on the grid `0, step, ..., 1`.
    pub fn grid(width: usize, height: usize, step: T) -> Result<Arc<QuantizedSpace<T>>> {
        QuantizedSpace::uniform(3 * width * height, T::zero(), T::one(), step)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self) -> &Input<T> {
        &self.input
    }

    pub fn into_input(self) -> Input<T> {
        self.input
    }

    pub fn pixel(&self, i: usize) -> &[T] {
        &self.input.values()[3 * i..3 * i + 3]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[T]> {
        self.input.values().chunks(3)
    }

    /// Snaps every channel to the nearest multiple of `step`.
    pub fn quantized(&self, step: T) -> Result<Self> {
        let grid = Self::grid(self.width, self.height, step)?;
        let values = grid.values_at(&grid.coords(grid.nearest_flat(self.input.values())));
        Self::from_flat(self.width, self.height, values)
    }
}

impl<T> AsRef<Input<T>> for ImageInput<T> {
    fn as_ref(&self) -> &Input<T> {
        &self.input
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_shape_and_range() {
        assert!(ImageInput::new(2, 1, vec![[0.0, 0.5, 1.0], [1.0, 1.0, 1.0]]).is_ok());
        assert!(ImageInput::new(2, 2, vec![[0.0, 0.5, 1.0]]).is_err());
        assert!(ImageInput::new(1, 1, vec![[0.0, 1.5, 1.0]]).is_err());
        assert!(ImageInput::<f64>::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn quantization_snaps_to_grid() {
        let img = ImageInput::new(1, 1, vec![[0.12, 0.49, 0.99]]).unwrap();
        let q = img.quantized(0.25).unwrap();
        assert_eq!(q.pixel(0), &[0.0, 0.5, 1.0]);
    }
}
