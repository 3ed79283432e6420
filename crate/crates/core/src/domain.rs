//! Finite sets of points in R^d.

use crate::error::{Error, Result};

/// An indexed, finite collection of `dim`-dimensional points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    dim: usize,
    coords: Vec<f64>,
}

impl Domain {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("domain dimension must be positive".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: coords.len() % dim,
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("domain coordinates must be finite".into()));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(1);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    /// Regular grid with `shape[k]` evenly spaced values on `[lower[k], upper[k]]`
    /// per axis. Points are ordered lexicographically (first axis slowest).
    pub fn grid(shape: &[usize], lower: &[f64], upper: &[f64]) -> Result<Self> {
        let dim = shape.len();
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: lower.len().min(upper.len()),
            });
        }
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::Config("grid shape entries must be positive".into()));
        }
        let axes: Vec<Vec<f64>> = (0..dim)
            .map(|k| {
                let n = shape[k];
                if n == 1 {
                    vec![lower[k]]
                } else {
                    let step = (upper[k] - lower[k]) / (n - 1) as f64;
                    (0..n).map(|j| lower[k] + step * j as f64).collect()
                }
            })
            .collect();
        let total: usize = shape.iter().product();
        let mut coords = Vec::with_capacity(total * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            for k in 0..dim {
                coords.push(axes[k][idx[k]]);
            }
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self::new(dim, coords)
    }

    /// `n` points per axis on `[0, 1]^dim`.
    pub fn unit_grid(n: usize, dim: usize) -> Result<Self> {
        Self::grid(&vec![n; dim], &vec![0.0; dim], &vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Per-axis (min, max) over all points.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.iter() {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Sub-domain made of the given point indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            coords,
        }
    }

    pub(crate) fn check_index(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                index,
                size: self.len(),
            })
        }
    }
}
