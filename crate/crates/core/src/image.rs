//! Image containers, subband stacks and overlapping patch decomposition.
//!
//! All spatial indexing is circular: a patch that runs past the right or
//! bottom edge wraps to the opposite side.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// A 2-D real image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid!(
                "image dimensions must be positive, got {height}x{width}"
            ));
        }
        if data.len() != height * width {
            return Err(invalid!(
                "image data length {} does not match {height}x{width}",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(invalid!("image value at index {i} is not finite"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        let mut img = Self::zeros(height, width);
        img.data.iter_mut().for_each(|x| *x = value);
        img
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                img.data[r * width + c] = f(r, c);
            }
        }
        img
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.width + c] = value;
    }

    /// Value at `(r, c)` with circular wrap-around for any integer offset.
    #[inline]
    pub fn get_wrapped(&self, r: isize, c: isize) -> f64 {
        let rr = r.rem_euclid(self.height as isize) as usize;
        let cc = c.rem_euclid(self.width as isize) as usize;
        self.data[rr * self.width + cc]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Circular shift: output `(r, c)` takes input `(r - dr, c - dc)`.
    pub fn shifted(&self, dr: isize, dc: isize) -> Self {
        Self::from_fn(self.height, self.width, |r, c| {
            self.get_wrapped(r as isize - dr, c as isize - dc)
        })
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| {
            self.get(r, self.width - 1 - c)
        })
    }

    /// Mirror top-bottom.
    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| {
            self.get(self.height - 1 - r, c)
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|x| alpha * x)
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(invalid!(
                "image dimensions differ: {}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ));
        }
        Ok(())
    }
}

/// An ordered list of same-sized bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandStack {
    bands: Vec<Image>,
}

impl SubbandStack {
    pub fn new(bands: Vec<Image>) -> Result<Self> {
        let Some(first) = bands.first() else {
            return Err(invalid!("a subband stack needs at least one band"));
        };
        let dims = first.dims();
        if let Some(k) = bands.iter().position(|b| b.dims() != dims) {
            return Err(invalid!("band {k} has dimensions different from band 0"));
        }
        Ok(Self { bands })
    }

    pub fn zeros(band_count: usize, height: usize, width: usize) -> Self {
        assert!(band_count > 0);
        Self {
            bands: (0..band_count)
                .map(|_| Image::zeros(height, width))
                .collect(),
        }
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.bands[0].dims()
    }

    pub fn bands(&self) -> &[Image] {
        &self.bands
    }

    pub fn band(&self, k: usize) -> &Image {
        &self.bands[k]
    }

    pub fn band_mut(&mut self, k: usize) -> &mut Image {
        &mut self.bands[k]
    }

    pub fn into_bands(self) -> Vec<Image> {
        self.bands
    }

    /// All bands concatenated, band-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.bands
            .iter()
            .flat_map(|b| b.data().iter().copied())
            .collect()
    }

    pub fn from_flat(band_count: usize, height: usize, width: usize, data: &[f64]) -> Result<Self> {
        let plane = height * width;
        if band_count == 0 || data.len() != band_count * plane {
            return Err(invalid!(
                "flat stack length {} does not match {band_count}x{height}x{width}",
                data.len()
            ));
        }
        let bands = data
            .chunks_exact(plane)
            .map(|chunk| Image::new(height, width, chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(bands)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.band_count() != other.band_count() {
            return Err(invalid!(
                "band counts differ: {} vs {}",
                self.band_count(),
                other.band_count()
            ));
        }
        let bands = self
            .bands
            .iter()
            .zip(&other.bands)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bands })
    }
}

/// One patch: its top-left grid location and per-band values (band-major,
/// then row-major inside each band).
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    patch_size: (usize, usize),
    stride: usize,
    source_dims: (usize, usize),
    band_count: usize,
    patches: Vec<Patch>,
}

impl PatchSet {
    pub fn patch_size(&self) -> (usize, usize) {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn source_dims(&self) -> (usize, usize) {
        self.source_dims
    }

    pub fn band_count(&self) -> usize {
        self.band_count
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn patches_mut(&mut self) -> &mut [Patch] {
        &mut self.patches
    }

    /// Number of values in one patch (all bands).
    pub fn patch_len(&self) -> usize {
        self.band_count * self.patch_size.0 * self.patch_size.1
    }

    /// Replaces patch values, keeping locations. Used to feed processed
    /// patches back into `average_patches`.
    pub fn with_values(&self, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != self.patches.len() {
            return Err(invalid!(
                "expected {} patches, got {}",
                self.patches.len(),
                values.len()
            ));
        }
        let len = self.patch_len();
        if let Some(k) = values.iter().position(|v| v.len() != len) {
            return Err(invalid!("patch {k} has wrong length"));
        }
        let patches = self
            .patches
            .iter()
            .zip(values)
            .map(|(p, values)| Patch {
                row: p.row,
                col: p.col,
                values,
            })
            .collect();
        Ok(Self {
            patches,
            ..self.clone()
        })
    }
}

/// Grid locations used for one axis: `0, stride, 2·stride, …` below `extent`.
pub fn grid_positions(extent: usize, stride: usize) -> Vec<usize> {
    (0..extent).step_by(stride).collect()
}

/// Cuts every band at the same grid locations.
pub fn extract_patches(
    stack: &SubbandStack,
    patch_size: (usize, usize),
    stride: usize,
) -> Result<PatchSet> {
    let (ph, pw) = patch_size;
    if ph == 0 || pw == 0 {
        return Err(invalid!("patch size must be positive, got {ph}x{pw}"));
    }
    if stride == 0 {
        return Err(invalid!("stride must be at least 1"));
    }
    let (h, w) = stack.dims();
    let band_count = stack.band_count();
    let rows = grid_positions(h, stride);
    let cols = grid_positions(w, stride);
    let mut patches = Vec::with_capacity(rows.len() * cols.len());
    for &row in &rows {
        for &col in &cols {
            let mut values = Vec::with_capacity(band_count * ph * pw);
            for band in stack.bands() {
                for y in 0..ph {
                    let src_r = (row + y) % h;
                    for x in 0..pw {
                        values.push(band.get(src_r, (col + x) % w));
                    }
                }
            }
            patches.push(Patch { row, col, values });
        }
    }
    Ok(PatchSet {
        patch_size,
        stride,
        source_dims: (h, w),
        band_count,
        patches,
    })
}

/// Number of patch footprints covering each pixel.
pub fn coverage_counts(set: &PatchSet) -> Vec<usize> {
    let (h, w) = set.source_dims;
    let (ph, pw) = set.patch_size;
    let mut counts = vec![0usize; h * w];
    for p in &set.patches {
        for y in 0..ph {
            let r = (p.row + y) % h;
            for x in 0..pw {
                counts[r * w + (p.col + x) % w] += 1;
            }
        }
    }
    counts
}

/// Recomposes a stack where each pixel is the mean of all patch values that
/// cover it. Accumulation follows patch order, so the result is deterministic.
pub fn average_patches(set: &PatchSet) -> Result<SubbandStack> {
    if set.patches.is_empty() {
        return Err(invalid!("cannot average an empty patch set"));
    }
    let (h, w) = set.source_dims;
    let (ph, pw) = set.patch_size;
    let plane = ph * pw;
    let mut sums = vec![0.0; set.band_count * h * w];
    for p in &set.patches {
        if p.values.len() != set.band_count * plane {
            return Err(invalid!("patch at ({}, {}) has wrong length", p.row, p.col));
        }
        for b in 0..set.band_count {
            let src = &p.values[b * plane..(b + 1) * plane];
            let dst = &mut sums[b * h * w..(b + 1) * h * w];
            for y in 0..ph {
                let r = (p.row + y) % h;
                for x in 0..pw {
                    dst[r * w + (p.col + x) % w] += src[y * pw + x];
                }
            }
        }
    }
    let counts = coverage_counts(set);
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(invalid!(
            "pixel ({}, {}) is not covered by any patch",
            i / w,
            i % w
        ));
    }
    let bands = (0..set.band_count)
        .map(|b| {
            let data: Vec<f64> = sums[b * h * w..(b + 1) * h * w]
                .iter()
                .zip(&counts)
                .map(|(s, &c)| s / c as f64)
                .collect();
            Image::new(h, w, data)
        })
        .collect::<Result<Vec<_>>>()?;
    SubbandStack::new(bands)
}
