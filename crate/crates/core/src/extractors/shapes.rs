//! Shape templates rasterized on a pixel grid.
//!
//! Shapes are defined in normalized coordinates `u, v` in `(-1, 1)` with `v`
//! pointing down the image, and sampled at pixel centres.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Octagon,
    Diamond,
    Square,
    Triangle,
    Circle,
    Rectangle,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Octagon,
        Shape::Diamond,
        Shape::Square,
        Shape::Triangle,
        Shape::Circle,
        Shape::Rectangle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Octagon => "Octagon",
            Shape::Diamond => "Diamond",
            Shape::Square => "Square",
            Shape::Triangle => "Triangle",
            Shape::Circle => "Circle",
            Shape::Rectangle => "Rectangle",
        }
    }

    pub fn from_name(name: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Whether the normalized point lies inside the shape.
    pub fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Octagon => {
                let a = 0.85;
                u.abs() <= a && v.abs() <= a && u.abs() + v.abs() <= a * std::f64::consts::SQRT_2
            }
            Shape::Diamond => u.abs() + v.abs() <= 0.95,
            Shape::Square => u.abs() <= 0.75 && v.abs() <= 0.75,
            // Point-down triangle, as on a yield sign.
            Shape::Triangle => {
                let (a, b, c) = ((-0.9, -0.75), (0.9, -0.75), (0.0, 0.85));
                let side = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (v - p.1) - (q.1 - p.1) * (u - p.0);
                let (s1, s2, s3) = (side(a, b), side(b, c), side(c, a));
                (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
            }
            Shape::Circle => u * u + v * v <= 0.81,
            Shape::Rectangle => u.abs() <= 0.55 && v.abs() <= 0.9,
        }
    }

    /// Row-major mask at the given size.
    pub fn rasterize(self, width: usize, height: usize) -> Vec<bool> {
        let mut mask = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = normalized(x, y, width, height);
                mask.push(self.contains(u, v));
            }
        }
        mask
    }
}

/// Pixel centre in normalized coordinates.
pub fn normalized(x: usize, y: usize, width: usize, height: usize) -> (f64, f64) {
    (
        2.0 * (x as f64 + 0.5) / width as f64 - 1.0,
        2.0 * (y as f64 + 0.5) / height as f64 - 1.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_are_distinct_at_sign_sizes() {
        for size in [8, 16, 32] {
            let masks: Vec<Vec<bool>> = Shape::ALL.iter().map(|s| s.rasterize(size, size)).collect();
            for i in 0..masks.len() {
                assert!(masks[i].iter().any(|b| *b), "{:?} empty at {size}", Shape::ALL[i]);
                for j in 0..i {
                    assert_ne!(masks[i], masks[j], "{:?} = {:?} at {size}", Shape::ALL[i], Shape::ALL[j]);
                }
            }
        }
    }

    #[test]
    fn triangle_points_down() {
        assert!(Shape::Triangle.contains(0.0, 0.8));
        assert!(!Shape::Triangle.contains(0.0, -0.8));
        assert!(Shape::Triangle.contains(0.8, -0.7));
    }

    #[test]
    fn names_round_trip() {
        for s in Shape::ALL {
            assert_eq!(Shape::from_name(s.name()), Some(s));
        }
        assert_eq!(Shape::from_name("Hexagon"), None);
    }
}
