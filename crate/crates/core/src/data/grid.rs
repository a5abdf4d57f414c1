use std::ops::Deref;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Row-major 2-D array of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    h: usize,
    w: usize,
    data: Vec<Real>,
}

impl Grid {
    pub fn new(h: usize, w: usize, fill: Real) -> Self {
        Grid {
            h,
            w,
            data: vec![fill; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!(
                "grid data length {} does not match {h}x{w}",
                data.len()
            )));
        }
        Ok(Grid { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Real> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Real {
        self.data[r * self.w + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Real) {
        self.data[r * self.w + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.w..(r + 1) * self.w]
    }

    /// Copies the `h×w` window whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, h: usize, w: usize) -> Result<Grid> {
        if r0 + h > self.h || c0 + w > self.w {
            return Err(Error::input(format!(
                "crop {h}x{w} at ({r0},{c0}) exceeds {}x{}",
                self.h, self.w
            )));
        }
        let mut data = Vec::with_capacity(h * w);
        for r in r0..r0 + h {
            data.extend_from_slice(&self.data[r * self.w + c0..r * self.w + c0 + w]);
        }
        Ok(Grid { h, w, data })
    }

    /// Writes `src` with its top-left corner at `(r0, c0)`.
    pub fn paste(&mut self, src: &Grid, r0: usize, c0: usize) -> Result<()> {
        if r0 + src.h > self.h || c0 + src.w > self.w {
            return Err(Error::input(format!(
                "paste {}x{} at ({r0},{c0}) exceeds {}x{}",
                src.h, src.w, self.h, self.w
            )));
        }
        for r in 0..src.h {
            let dst = (r0 + r) * self.w + c0;
            self.data[dst..dst + src.w].copy_from_slice(src.row(r));
        }
        Ok(())
    }

    /// Extends bottom and right edges by repeating the last row/column.
    pub fn pad_replicate(&self, extra_rows: usize, extra_cols: usize) -> Grid {
        let (h, w) = (self.h + extra_rows, self.w + extra_cols);
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            let src = self.row(r.min(self.h - 1));
            data.extend_from_slice(src);
            let last = src[self.w - 1];
            data.extend(std::iter::repeat(last).take(extra_cols));
        }
        Grid { h, w, data }
    }

    pub fn max_value(&self) -> Real {
        self.data.iter().cloned().fold(Real::NEG_INFINITY, Real::max)
    }

    pub fn min_value(&self) -> Real {
        self.data.iter().cloned().fold(Real::INFINITY, Real::min)
    }
}

/// Grayscale image with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage(Grid);

impl GrayImage {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some(v) = grid.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(GrayImage(grid))
    }

    pub fn filled(h: usize, w: usize, v: Real) -> Result<Self> {
        Self::new(Grid::new(h, w, v))
    }

    /// From 8-bit samples, scaled by 1/255.
    pub fn from_u8(h: usize, w: usize, pixels: &[u8]) -> Result<Self> {
        let data = pixels.iter().map(|&p| p as Real / 255.0).collect();
        Ok(GrayImage(Grid::from_vec(h, w, data)?))
    }

    /// Rounds to 8-bit samples.
    pub fn to_u8(&self) -> Vec<u8> {
        self.0
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl Deref for GrayImage {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}
