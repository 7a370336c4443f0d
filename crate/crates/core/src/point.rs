use std::fmt;
use std::ops::{Index, IndexMut};

/// Largest state dimension supported without heap allocation.
pub const MAX_DIM: usize = 4;

/// A state in `E ⊂ ℝⁿ` (or on its boundary), stored inline.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        assert!(
            !coords.is_empty() && coords.len() <= MAX_DIM,
            "point dimension {} outside 1..={MAX_DIM}",
            coords.len()
        );
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Self {
            coords: c,
            dim: coords.len() as u8,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self::new(&[x])
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(&vec![0.0; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords[..self.dim as usize]
    }

    /// First coordinate; convenient for one-dimensional models.
    #[inline]
    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn axpy(&self, a: f64, other: &Point) -> Point {
        let mut out = *self;
        for (o, v) in out.coords_mut().iter_mut().zip(other.coords()) {
            *o += a * v;
        }
        out
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|v| v.is_finite())
    }

    /// Bit pattern of the coordinates, usable as a hash key.
    pub fn key(&self) -> [u64; MAX_DIM] {
        let mut k = [0u64; MAX_DIM];
        for (slot, v) in k.iter_mut().zip(self.coords()) {
            *slot = v.to_bits();
        }
        k
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords()[i]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coords_mut()[i]
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

impl From<f64> for Point {
    fn from(x: f64) -> Self {
        Point::scalar(x)
    }
}

impl serde::Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.coords())
    }
}
