//! Uniform 2D grids.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A dense `nx × ny` array stored with `x` as the fast index.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<V> {
    nx: usize,
    ny: usize,
    data: Vec<V>,
}

impl<V: Clone> Grid2<V> {
    pub fn filled(nx: usize, ny: usize, value: V) -> Self {
        Self {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }
}

impl<V> Grid2<V> {
    pub fn from_vec(nx: usize, ny: usize, data: Vec<V>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::Shape {
                expected: (nx, ny),
                found: (data.len(), 1),
            });
        }
        Ok(Self { nx, ny, data })
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> V) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                data.push(f(ix, iy));
            }
        }
        Self { nx, ny, data }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    /// Inverse of [`Grid2::offset`].
    #[inline]
    pub fn coords(&self, offset: usize) -> (usize, usize) {
        (offset % self.nx, offset / self.nx)
    }

    pub fn as_slice(&self) -> &[V] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [V] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<V> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, V> {
        self.data.iter()
    }

    pub fn map<W>(&self, f: impl FnMut(&V) -> W) -> Grid2<W> {
        Grid2 {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() == shape {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: shape,
                found: self.shape(),
            })
        }
    }
}

impl<V> Index<(usize, usize)> for Grid2<V> {
    type Output = V;

    #[inline]
    fn index(&self, (ix, iy): (usize, usize)) -> &V {
        &self.data[iy * self.nx + ix]
    }
}

impl<V> IndexMut<(usize, usize)> for Grid2<V> {
    #[inline]
    fn index_mut(&mut self, (ix, iy): (usize, usize)) -> &mut V {
        &mut self.data[iy * self.nx + ix]
    }
}

/// Placement of a grid in the plane: spacing and the coordinates of point (0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame<T> {
    pub dx: T,
    pub dy: T,
    pub x0: T,
    pub y0: T,
}

impl<T: Real> GridFrame<T> {
    #[inline]
    pub fn x(&self, ix: usize) -> T {
        self.x0 + T::from_usize_lossy(ix) * self.dx
    }

    #[inline]
    pub fn y(&self, iy: usize) -> T {
        self.y0 + T::from_usize_lossy(iy) * self.dy
    }

    #[inline]
    pub fn cell_area(&self) -> T {
        self.dx * self.dy
    }
}
