//! Raw tensor files and 16-bit PGM images.
//!
//! Tensor file layout, all integers little-endian:
//!
//! ```text
//! b"WFTENSOR" | version: u32 | rank: u32 | dims: u64 × rank | data: f64 × Π dims
//! ```

use std::path::Path;

use wavframe_core::{Image, SubbandStack};

use crate::error::{Error, Result};
use crate::fsutil;

pub const TENSOR_MAGIC: &[u8; 8] = b"WFTENSOR";
pub const TENSOR_VERSION: u32 = 1;

/// Dense real tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!(
                "dims {dims:?} do not hold {} values",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_image(img: &Image) -> Self {
        Self {
            dims: vec![img.height(), img.width()],
            data: img.data().to_vec(),
        }
    }

    pub fn from_stack(stack: &SubbandStack) -> Self {
        let (h, w) = stack.dims();
        Self {
            dims: vec![stack.band_count(), h, w],
            data: stack.to_flat(),
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        match self.dims[..] {
            [h, w] => Ok(Image::new(h, w, self.data.clone())?),
            _ => Err(Error::Format(format!(
                "expected a 2-D tensor, found dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn to_stack(&self) -> Result<SubbandStack> {
        match self.dims[..] {
            [b, h, w] => Ok(SubbandStack::from_flat(b, h, w, &self.data)?),
            _ => Err(Error::Format(format!(
                "expected a 3-D tensor, found dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != TENSOR_MAGIC {
            return Err(Error::Format("not a tensor file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != TENSOR_VERSION {
            return Err(Error::Format(format!(
                "unsupported tensor file version {version}"
            )));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor dims overflow".into()))?;
        if r.remaining() != count.saturating_mul(8) {
            return Err(Error::Format(format!(
                "tensor holds {} bytes of data, dims need {}",
                r.remaining(),
                count * 8
            )));
        }
        let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fsutil::read(path)?)
    }
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub const PGM_MAXVAL: u16 = u16::MAX;

/// Binary 16-bit PGM. Values are mapped linearly from `[lo, hi]` to
/// `[0, 65535]` and clamped.
pub fn encode_pgm(img: &Image, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if !(hi > lo) {
        return Err(Error::Format(format!(
            "display window [{lo}, {hi}] is empty"
        )));
    }
    let (h, w) = img.dims();
    let mut out = format!("P5\n{w} {h}\n{PGM_MAXVAL}\n").into_bytes();
    let scale = PGM_MAXVAL as f64 / (hi - lo);
    for &v in img.data() {
        let level = ((v - lo) * scale).round().clamp(0.0, PGM_MAXVAL as f64) as u16;
        // PGM stores 16-bit samples most significant byte first.
        out.extend_from_slice(&level.to_be_bytes());
    }
    Ok(out)
}

/// Parses a binary PGM and maps levels back through `[lo, hi]`.
pub fn decode_pgm(bytes: &[u8], lo: f64, hi: f64) -> Result<Image> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::Format("PGM header is not ASCII".into()))?,
        );
    }
    if fields[0] != "P5" {
        return Err(Error::Format("only binary (P5) PGM is supported".into()));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval == 0 || maxval > PGM_MAXVAL as usize {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    let raster = &bytes[pos + 1..];
    let wide = maxval > 255;
    let sample = if wide { 2 } else { 1 };
    if raster.len() != w * h * sample {
        return Err(Error::Format(format!(
            "PGM raster has {} bytes, expected {}",
            raster.len(),
            w * h * sample
        )));
    }
    let data = raster
        .chunks(sample)
        .map(|c| {
            let level = if wide {
                u16::from_be_bytes([c[0], c[1]]) as f64
            } else {
                c[0] as f64
            };
            lo + level / maxval as f64 * (hi - lo)
        })
        .collect();
    Ok(Image::new(h, w, data)?)
}

pub fn write_pgm(path: &Path, img: &Image, lo: f64, hi: f64) -> Result<()> {
    fsutil::write_atomic(path, &encode_pgm(img, lo, hi)?)
}
