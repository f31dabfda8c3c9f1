//! Hyperspectral cube and mask data model, on-disk formats, and
//! per-band normalization to the generator's `[-1, 1]` range.
//!
//! Cubes are stored band-sequential (BSQ): all pixels of band 0 in row-major
//! order, then band 1, and so on. Extracting one pixel's spectrum therefore
//! strides through the buffer by `width * height`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{read_all, write_atomic};

pub const CUBE_MAGIC: &[u8; 8] = b"HSCUBE01";
const HEADER_KEYS: [&str; 5] = ["width", "height", "bands", "dtype", "interleave"];

#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(width: usize, height: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "cube dimensions must be positive, got {width}x{height}x{bands}"
            )));
        }
        let expected = checked_volume(width, height, bands)?;
        if data.len() != expected {
            return Err(Error::Length {
                expected,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at offset {pos}")));
        }
        Ok(Self {
            width,
            height,
            bands,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, bands: usize) -> Result<Self> {
        let n = checked_volume(width, height, bands)?;
        Self::new(width, height, bands, vec![0.0; n])
    }

    /// Builds a cube from pixel-major spectra (`pixels[i][band]`).
    pub fn from_spectra(width: usize, height: usize, spectra: &[Vec<f32>]) -> Result<Self> {
        let n = width * height;
        if spectra.len() != n {
            return Err(Error::Length {
                expected: n,
                found: spectra.len(),
            });
        }
        let bands = spectra.first().map_or(0, Vec::len);
        let mut data = vec![0.0; n * bands];
        for (i, s) in spectra.iter().enumerate() {
            if s.len() != bands {
                return Err(Error::Shape(format!(
                    "pixel {i} has {} bands, expected {bands}",
                    s.len()
                )));
            }
            for (b, &v) in s.iter().enumerate() {
                data[b * n + i] = v;
            }
        }
        Self::new(width, height, bands, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Number of pixels, `width * height`.
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[band * n..(band + 1) * n]
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[band * self.pixels() + row * self.width + col]
    }

    pub fn spectrum(&self, pixel: usize) -> Vec<f32> {
        let n = self.pixels();
        (0..self.bands).map(|b| self.data[b * n + pixel]).collect()
    }

    /// Copies one spectrum into `out` (length `bands`).
    pub fn spectrum_into(&self, pixel: usize, out: &mut [f32]) {
        let n = self.pixels();
        for (b, o) in out.iter_mut().enumerate() {
            *o = self.data[b * n + pixel];
        }
    }

    pub fn set_spectrum(&mut self, pixel: usize, spectrum: &[f32]) {
        let n = self.pixels();
        for (b, &v) in spectrum.iter().enumerate() {
            self.data[b * n + pixel] = v;
        }
    }

    pub fn same_shape(&self, other: &HsiCube) -> bool {
        self.width == other.width && self.height == other.height && self.bands == other.bands
    }
}

fn checked_volume(width: usize, height: usize, bands: usize) -> Result<usize> {
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bands))
        .ok_or_else(|| Error::Shape(format!("cube {width}x{height}x{bands} overflows")))
}

fn cube_header(cube: &HsiCube) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "width={}", cube.width);
    let _ = writeln!(h, "height={}", cube.height);
    let _ = writeln!(h, "bands={}", cube.bands);
    h.push_str("dtype=f32le\n");
    h.push_str("interleave=bsq\n");
    h
}

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let header = cube_header(cube);
    let mut out = Vec::with_capacity(12 + header.len() + cube.data.len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in &cube.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    if bytes.len() < 12 || &bytes[..8] != CUBE_MAGIC {
        return Err(Error::Format("missing HSCUBE01 magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format("header extends past end of file".into()))?;
    let header = std::str::from_utf8(&bytes[12..header_end])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;

    let mut fields: [Option<&str>; 5] = [None; 5];
    for line in header.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("header line without '=': {line:?}")))?;
        let key = key.trim();
        let slot = HEADER_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Format(format!("unknown header key {key:?}")))?;
        if fields[slot].replace(value.trim()).is_some() {
            return Err(Error::Format(format!("duplicate header key {key:?}")));
        }
    }
    let field = |i: usize| {
        fields[i].ok_or_else(|| Error::Format(format!("missing header key {:?}", HEADER_KEYS[i])))
    };
    let dim = |i: usize| -> Result<usize> {
        let v = field(i)?;
        v.parse::<usize>()
            .map_err(|_| Error::Format(format!("{} is not an unsigned integer: {v:?}", HEADER_KEYS[i])))
    };
    let (width, height, bands) = (dim(0)?, dim(1)?, dim(2)?);
    if field(3)? != "f32le" {
        return Err(Error::Format(format!("unsupported dtype {:?}", field(3)?)));
    }
    if field(4)? != "bsq" {
        return Err(Error::Format(format!("unsupported interleave {:?}", field(4)?)));
    }
    if width == 0 || height == 0 || bands == 0 {
        return Err(Error::Format(format!(
            "cube dimensions must be positive, got {width}x{height}x{bands}"
        )));
    }
    let expected = checked_volume(width, height, bands)?;
    let payload = &bytes[header_end..];
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(Error::Length {
            expected,
            found: payload.len() / 4,
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    HsiCube::new(width, height, bands, data)
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    decode_cube(&read_all(path)?)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_cube(cube))
}

/// Per-pixel binary labels, 1 = anomaly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Length {
                expected: width * height,
                found: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels: labels.into_iter().map(u8::from).collect(),
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_anomaly(&self, pixel: usize) -> bool {
        self.labels[pixel] != 0
    }

    pub fn set(&mut self, pixel: usize, anomaly: bool) {
        self.labels[pixel] = u8::from(anomaly);
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.labels.iter().map(|&l| l != 0)
    }
}

/// Writes an 8-bit binary PGM (`P5`, maxval 255).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PGM, returning `(width, height, pixels)`. Only 8-bit
/// (maxval ≤ 255) images are accepted.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, slot) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *slot = digits.parse().map_err(|_| {
            Error::Format(format!("bad PGM header field {}", ["width", "height", "maxval"][i]))
        })?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PGM header not terminated".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let n = width
        .checked_mul(height)
        .filter(|&n| n <= bytes.len())
        .ok_or_else(|| Error::Format(format!("PGM dimensions {width}x{height} overflow")))?;
    let raster = &bytes[pos..];
    if raster.len() != n {
        return Err(Error::Length {
            expected: n,
            found: raster.len(),
        });
    }
    Ok((width, height, raster.to_vec()))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let (width, height, pixels) = decode_pgm(&read_all(path)?)?;
    Ok(Mask {
        width,
        height,
        labels: pixels.into_iter().map(|p| u8::from(p != 0)).collect(),
    })
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let pixels: Vec<u8> = mask.labels.iter().map(|&l| if l != 0 { 255 } else { 0 }).collect();
    write_atomic(path, &encode_pgm(mask.width, mask.height, &pixels))
}

/// Per-band min/max recorded by [`normalize_cube`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl NormStats {
    pub fn bands(&self) -> usize {
        self.min.len()
    }
}

/// Maps each band affinely so its minimum goes to -1 and its maximum to +1.
/// A constant band maps to 0.
pub fn normalize_cube(cube: &HsiCube) -> (HsiCube, NormStats) {
    let mut stats = NormStats {
        min: Vec::with_capacity(cube.bands),
        max: Vec::with_capacity(cube.bands),
    };
    let mut data = Vec::with_capacity(cube.data.len());
    for b in 0..cube.bands {
        let band = cube.band(b);
        let lo = band.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = band.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        stats.min.push(lo);
        stats.max.push(hi);
        if hi > lo {
            let (lo, span) = (lo as f64, (hi - lo) as f64);
            data.extend(
                band.iter()
                    .map(|&v| ((2.0 * (v as f64 - lo) / span - 1.0) as f32).clamp(-1.0, 1.0)),
            );
        } else {
            data.extend(std::iter::repeat_n(0.0, band.len()));
        }
    }
    let out = HsiCube {
        width: cube.width,
        height: cube.height,
        bands: cube.bands,
        data,
    };
    (out, stats)
}

pub fn denormalize_cube(cube: &HsiCube, stats: &NormStats) -> Result<HsiCube> {
    if stats.bands() != cube.bands {
        return Err(Error::Shape(format!(
            "normalization stats have {} bands, cube has {}",
            stats.bands(),
            cube.bands
        )));
    }
    let mut data = Vec::with_capacity(cube.data.len());
    for b in 0..cube.bands {
        let (lo, hi) = (stats.min[b] as f64, stats.max[b] as f64);
        data.extend(
            cube.band(b)
                .iter()
                .map(|&v| (lo + (v as f64 + 1.0) * 0.5 * (hi - lo)) as f32),
        );
    }
    HsiCube::new(cube.width, cube.height, cube.bands, data)
}
