//! Small fixed-capacity vectors for points, gradients and Brownian increments.
//!
//! Paths are stepped millions of times per solve, so points live on the stack
//! and are `Copy`. Only dimensions 1 to [`MAX_DIM`] are supported.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: usize,
}

impl Point {
    /// The origin of `R^dim`.
    ///
    /// Panics if `dim` is zero or exceeds [`MAX_DIM`].
    pub fn zeros(dim: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&dim),
            "dimension {dim} outside 1..={MAX_DIM}"
        );
        Self {
            coords: [0.0; MAX_DIM],
            dim,
        }
    }

    pub fn scalar(x: f64) -> Self {
        let mut p = Self::zeros(1);
        p.coords[0] = x;
        p
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut p = Self::zeros(values.len());
        p.coords[..values.len()].copy_from_slice(values);
        p
    }

    /// The `i`-th standard basis vector of `R^dim`.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut p = Self::zeros(dim);
        p.coords[i] = 1.0;
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    /// First coordinate; the whole point in one dimension.
    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn dot(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coords[..self.dim][i]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(mut self, rhs: Point) -> Point {
        self += rhs;
        self
    }
}

impl AddAssign for Point {
    fn add_assign(&mut self, rhs: Point) {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim {
            self.coords[i] += rhs.coords[i];
        }
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(mut self, rhs: Point) -> Point {
        self -= rhs;
        self
    }
}

impl SubAssign for Point {
    fn sub_assign(&mut self, rhs: Point) {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim {
            self.coords[i] -= rhs.coords[i];
        }
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(mut self, s: f64) -> Point {
        for v in &mut self.coords[..self.dim] {
            *v *= s;
        }
        self
    }
}

impl Mul<Point> for f64 {
    type Output = Point;
    fn mul(self, p: Point) -> Point {
        p * self
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        self * -1.0
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!(
                "point must have 1..={MAX_DIM} coordinates, got {}",
                v.len()
            )));
        }
        Ok(Point::from_slice(&v))
    }
}
