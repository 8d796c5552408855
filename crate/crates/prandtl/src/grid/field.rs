use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use super::{Grid, GridError};

/// Real samples on an `nx x ny` grid, stored x-major: `values[i * ny + j]`.
#[derive(Debug, Clone)]
pub struct Field2D {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.nx() * grid.ny();
        Field2D {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_vec(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.nx() * grid.ny(), "field size does not match grid");
        Field2D { grid, values }
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: Arc<Grid>, f: F) -> Self {
        let mut values = Vec::with_capacity(grid.nx() * grid.ny());
        for &x in grid.x() {
            for &y in grid.y() {
                values.push(f(x, y));
            }
        }
        Field2D { grid, values }
    }

    /// x-independent field from a y-profile.
    pub fn from_profile(grid: Arc<Grid>, profile: &[f64]) -> Self {
        assert_eq!(profile.len(), grid.ny());
        let values = (0..grid.nx()).flat_map(|_| profile.iter().copied()).collect();
        Field2D { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.ny() + j]
    }

    /// The y-line at x-index `i`.
    pub fn line(&self, i: usize) -> &[f64] {
        let ny = self.grid.ny();
        &self.values[i * ny..(i + 1) * ny]
    }

    /// The x-line at y-index `j`.
    pub fn row(&self, j: usize) -> Vec<f64> {
        let ny = self.grid.ny();
        (0..self.grid.nx()).map(|i| self.values[i * ny + j]).collect()
    }

    pub fn same_grid(&self, other: &Field2D) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.spec() == other.grid.spec()
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field2D {
        Field2D {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn try_zip<F: Fn(f64, f64) -> f64>(&self, other: &Field2D, f: F) -> Result<Field2D, GridError> {
        if !self.same_grid(other) {
            return Err(GridError::Mismatch);
        }
        Ok(Field2D {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Pointwise combination; panics on a grid mismatch.
    pub fn zip<F: Fn(f64, f64) -> f64>(&self, other: &Field2D, f: F) -> Field2D {
        self.try_zip(other, f).expect("fields live on different grids")
    }

    /// Multiply every y-line by the same profile.
    pub fn mul_profile(&self, profile: &[f64]) -> Field2D {
        let ny = self.grid.ny();
        assert_eq!(profile.len(), ny);
        let mut values = self.values.clone();
        for line in values.chunks_mut(ny) {
            for (v, p) in line.iter_mut().zip(profile) {
                *v *= p;
            }
        }
        Field2D {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn add_profile(&self, profile: &[f64]) -> Field2D {
        let ny = self.grid.ny();
        assert_eq!(profile.len(), ny);
        let mut values = self.values.clone();
        for line in values.chunks_mut(ny) {
            for (v, p) in line.iter_mut().zip(profile) {
                *v += p;
            }
        }
        Field2D {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn scale(&self, c: f64) -> Field2D {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Add for &Field2D {
    type Output = Field2D;
    fn add(self, rhs: &Field2D) -> Field2D {
        self.zip(rhs, |a, b| a + b)
    }
}

impl Sub for &Field2D {
    type Output = Field2D;
    fn sub(self, rhs: &Field2D) -> Field2D {
        self.zip(rhs, |a, b| a - b)
    }
}

impl Mul for &Field2D {
    type Output = Field2D;
    fn mul(self, rhs: &Field2D) -> Field2D {
        self.zip(rhs, |a, b| a * b)
    }
}

impl Mul<&Field2D> for f64 {
    type Output = Field2D;
    fn mul(self, rhs: &Field2D) -> Field2D {
        rhs.scale(self)
    }
}

impl Neg for &Field2D {
    type Output = Field2D;
    fn neg(self) -> Field2D {
        self.scale(-1.0)
    }
}
