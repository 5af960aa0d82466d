//! Gridded observations: the `T x H x W` sequence type, positional codes,
//! low-pass preprocessing, splits and the on-disk dataset format.
//!
//! Axis convention used throughout the crate: `x` runs along rows (index
//! `i`, spacing `dx`), `y` along columns (index `j`, spacing `dy`).

mod encoding;
mod filter;
mod io;
mod splits;

use std::collections::BTreeMap;

pub use encoding::{positional_code, positional_codes, PositionalCode};
pub use filter::{butterworth_lowpass, filter_sequence, Biquad, Butterworth};
pub use io::{
    import_csv, read_corpus, read_sequence, sequence_dir_name, write_corpus, write_sequence,
    DataType, SequenceManifest,
};
pub use splits::{make_splits, SplitSpec, SplitTag, Window, WindowSet};

use crate::error::{Error, Result};

/// One `H x W` frame. Reads outside the grid return 0.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GridField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} field from {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    /// Zero outside the grid.
    pub fn get(&self, i: isize, j: isize) -> f64 {
        if i < 0 || j < 0 || i as usize >= self.height || j as usize >= self.width {
            0.0
        } else {
            self.data[i as usize * self.width + j as usize]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_same_dims(&self, other: &GridField) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "field {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// `T x H x W` observations with a validity mask.
///
/// Masked-out cells always hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSequence {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
    dt: f64,
    pub meta: BTreeMap<String, String>,
}

impl GridSequence {
    /// Full mask.
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        dt: f64,
    ) -> Result<Self> {
        Self::with_mask(frames, height, width, data, vec![true; height * width], dt)
    }

    /// Values under masked-out cells are zeroed.
    pub fn with_mask(
        frames: usize,
        height: usize,
        width: usize,
        mut data: Vec<f64>,
        mask: Vec<bool>,
        dt: f64,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::shape("sequence needs at least one frame"));
        }
        if data.len() != frames * height * width || mask.len() != height * width {
            return Err(Error::shape(format!(
                "{frames}x{height}x{width} sequence from {} values and {} mask cells",
                data.len(),
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::shape("mask has no active cell"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {dt}")));
        }
        for frame in data.chunks_mut(height * width) {
            for (v, &m) in frame.iter_mut().zip(&mask) {
                if !m {
                    *v = 0.0;
                }
            }
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
            mask,
            dt,
            meta: BTreeMap::new(),
        })
    }

    pub fn from_fields(fields: &[GridField], dt: f64) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::shape("no fields"))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(fields.len() * h * w);
        for f in fields {
            first.check_same_dims(f)?;
            data.extend_from_slice(f.data());
        }
        Self::new(fields.len(), h, w, data, dt)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn active_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn field(&self, t: usize) -> GridField {
        GridField {
            height: self.height,
            width: self.width,
            data: self.frame(t).to_vec(),
        }
    }

    pub fn at(&self, t: usize, i: usize, j: usize) -> f64 {
        self.data[(t * self.height + i) * self.width + j]
    }

    /// Time series of one cell.
    pub fn series(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.at(t, i, j)).collect()
    }

    /// Frames `start..end`, same mask and dt.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::shape(format!(
                "frames {start}..{end} of {}",
                self.frames
            )));
        }
        let n = self.frame_len();
        let mut s = Self::with_mask(
            end - start,
            self.height,
            self.width,
            self.data[start * n..end * n].to_vec(),
            self.mask.clone(),
            self.dt,
        )?;
        s.meta = self.meta.clone();
        Ok(s)
    }

    /// Keep every `factor`-th frame; `dt` scales by `factor`.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config("subsample factor must be >= 1"));
        }
        let n = self.frame_len();
        let keep: Vec<usize> = (0..self.frames).step_by(factor).collect();
        let mut data = Vec::with_capacity(keep.len() * n);
        for &t in &keep {
            data.extend_from_slice(self.frame(t));
        }
        let mut s = Self::with_mask(
            keep.len(),
            self.height,
            self.width,
            data,
            self.mask.clone(),
            self.dt * factor as f64,
        )?;
        s.meta = self.meta.clone();
        Ok(s)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Re-zero masked-out cells after an in-place transformation.
    pub(crate) fn apply_mask(&mut self) {
        let n = self.frame_len();
        for frame in self.data.chunks_mut(n) {
            for (v, &m) in frame.iter_mut().zip(&self.mask) {
                if !m {
                    *v = 0.0;
                }
            }
        }
    }
}
