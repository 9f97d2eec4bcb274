//! Grid configuration, points, bit merging patterns and single-pattern
//! SFC evaluation.
//!
//! Coordinates are already discretised to `[0, 2^m)`. A bit merging pattern
//! (BMP) lists, for each output bit from most to least significant, which
//! dimension supplies its next unconsumed bit. The Z-curve and the C-curve
//! (column scan) are the two classic patterns.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIMS: usize = 8;
pub const MAX_BITS: u32 = 20;
pub const MAX_WIDTH: u32 = 160;

/// Letters used when printing dimensions; the first two match the usual X/Y.
pub const DIM_LETTERS: [char; MAX_DIMS] = ['X', 'Y', 'Z', 'W', 'U', 'V', 'S', 'T'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridConfig {
    dims: usize,
    bits: u32,
}

impl GridConfig {
    pub fn new(dims: usize, bits: u32) -> Result<Self> {
        if !(2..=MAX_DIMS).contains(&dims) {
            return Err(Error::Domain(format!(
                "dimension count {dims} outside [2, {MAX_DIMS}]"
            )));
        }
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::Domain(format!(
                "bits per dimension {bits} outside [1, {MAX_BITS}]"
            )));
        }
        Ok(Self { dims, bits })
    }

    /// Number of dimensions `n`.
    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Bits per dimension `m`.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Total SFC value width `n * m`.
    pub fn width(&self) -> u32 {
        self.dims as u32 * self.bits
    }

    /// Side length of the grid, `2^m`.
    pub fn side(&self) -> u32 {
        1u32 << self.bits
    }

    pub fn max_coord(&self) -> u32 {
        self.side() - 1
    }

    pub fn check_coords(&self, coords: &[u32]) -> Result<()> {
        if coords.len() != self.dims {
            return Err(Error::Domain(format!(
                "point has {} coordinates, expected {}",
                coords.len(),
                self.dims
            )));
        }
        if let Some((dim, &c)) = coords.iter().enumerate().find(|(_, &c)| c >= self.side()) {
            return Err(Error::Domain(format!(
                "coordinate {c} in dimension {dim} is outside [0, {})",
                self.side()
            )));
        }
        Ok(())
    }
}

/// A grid point. Validity is checked against a [`GridConfig`] on construction
/// through [`Point::new`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point(Vec<u32>);

impl Point {
    pub fn new(coords: Vec<u32>, config: &GridConfig) -> Result<Self> {
        config.check_coords(&coords)?;
        Ok(Self(coords))
    }

    /// Wraps coordinates without validation. Callers must uphold the grid bounds.
    pub fn new_unchecked(coords: Vec<u32>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[u32] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    /// Componentwise `self >= other`.
    pub fn dominates(&self, other: &Point) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }
}

impl From<Point> for Vec<u32> {
    fn from(p: Point) -> Self {
        p.0
    }
}

/// Fixed-width unsigned SFC value of up to 192 bits, stored as big-endian
/// 64-bit words so that the derived ordering is numeric ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SfcValue([u64; 3]);

impl SfcValue {
    pub const ZERO: SfcValue = SfcValue([0; 3]);

    pub fn from_u128(v: u128) -> Self {
        SfcValue([0, (v >> 64) as u64, v as u64])
    }

    /// The value as `u128`, if it fits.
    pub fn to_u128(&self) -> Option<u128> {
        if self.0[0] != 0 {
            return None;
        }
        Some(((self.0[1] as u128) << 64) | self.0[2] as u128)
    }

    /// Sets the bit with the given index counted from the least significant bit.
    #[inline]
    pub fn set_bit(&mut self, index: u32) {
        let word = 2 - (index / 64) as usize;
        self.0[word] |= 1u64 << (index % 64);
    }

    /// Bit with the given index counted from the least significant bit.
    #[inline]
    pub fn bit(&self, index: u32) -> u8 {
        let word = 2 - (index / 64) as usize;
        ((self.0[word] >> (index % 64)) & 1) as u8
    }

    /// Bits `[start, start + len)` counted from the most significant end of a
    /// `width`-bit value, packed into an integer (first bit most significant).
    pub fn bits_from_msb(&self, width: u32, start: u32, len: u32) -> u64 {
        debug_assert!(start + len <= width && len <= 64);
        (start..start + len).fold(0u64, |acc, pos| (acc << 1) | self.bit(width - 1 - pos) as u64)
    }

    /// MSB-first bit string of a `width`-bit value.
    pub fn to_bit_string(&self, width: u32) -> String {
        (0..width)
            .map(|pos| if self.bit(width - 1 - pos) == 1 { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Display for SfcValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_u128() {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "0x{:x}{:016x}{:016x}", self.0[0], self.0[1], self.0[2]),
        }
    }
}

/// A bit merging pattern: `n * m` dimension indices, each dimension appearing
/// exactly `m` times.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bmp(Vec<u8>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicCurve {
    /// Bit interleaving, `x1 y1 x2 y2 ...`.
    Z,
    /// Column-wise scan, all bits of dimension 0 first, `x1 x2 ... y1 y2 ...`.
    C,
}

impl Bmp {
    pub fn new(dims: Vec<u8>, config: &GridConfig) -> Result<Self> {
        if !validate_bmp(&dims, config) {
            return Err(Error::Structure(format!(
                "{dims:?} is not a bit merging pattern for {} dimensions of {} bits",
                config.dims(),
                config.bits()
            )));
        }
        Ok(Self(dims))
    }

    /// Parses a pattern written with dimension letters, e.g. `"XYYX"`.
    pub fn parse(letters: &str, config: &GridConfig) -> Result<Self> {
        let dims = letters
            .chars()
            .map(|c| {
                dim_from_letter(c)
                    .ok_or_else(|| Error::Structure(format!("unknown dimension letter {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, config)
    }

    pub fn dims(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for Bmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &d in &self.0 {
            write!(f, "{}", DIM_LETTERS[d as usize])?;
        }
        Ok(())
    }
}

pub fn dim_from_letter(c: char) -> Option<u8> {
    DIM_LETTERS
        .iter()
        .position(|&l| l == c.to_ascii_uppercase())
        .map(|d| d as u8)
}

/// True iff `dims` has length `n * m` and every dimension occurs `m` times.
pub fn validate_bmp(dims: &[u8], config: &GridConfig) -> bool {
    if dims.len() != config.width() as usize {
        return false;
    }
    let mut counts = [0u32; MAX_DIMS];
    for &d in dims {
        if d as usize >= config.dims() {
            return false;
        }
        counts[d as usize] += 1;
    }
    counts[..config.dims()].iter().all(|&c| c == config.bits())
}

pub fn classic_bmp(kind: ClassicCurve, config: &GridConfig) -> Bmp {
    let n = config.dims() as u8;
    let m = config.bits() as usize;
    let dims = match kind {
        ClassicCurve::Z => (0..m).flat_map(|_| 0..n).collect(),
        ClassicCurve::C => (0..n).flat_map(|d| std::iter::repeat_n(d, m)).collect(),
    };
    Bmp(dims)
}

/// Per-dimension MSB-first bit arrays of a point.
pub fn encode_point(point: &Point, config: &GridConfig) -> Result<Vec<Vec<u8>>> {
    config.check_coords(point.coords())?;
    let m = config.bits();
    Ok(point
        .coords()
        .iter()
        .map(|&c| (0..m).map(|i| ((c >> (m - 1 - i)) & 1) as u8).collect())
        .collect())
}

/// The `index`-th most significant of the `bits` bits of `coord`.
#[inline]
pub(crate) fn coord_bit(coord: u32, bits: u32, index: u32) -> u32 {
    (coord >> (bits - 1 - index)) & 1
}

pub fn bmp_value(bmp: &Bmp, point: &Point, config: &GridConfig) -> Result<SfcValue> {
    if !validate_bmp(bmp.dims(), config) {
        return Err(Error::Structure(format!("invalid bit merging pattern {bmp}")));
    }
    config.check_coords(point.coords())?;
    Ok(bmp_value_unchecked(bmp.dims(), point.coords(), config))
}

pub(crate) fn bmp_value_unchecked(dims: &[u8], coords: &[u32], config: &GridConfig) -> SfcValue {
    let width = config.width();
    let bits = config.bits();
    let mut used = [0u32; MAX_DIMS];
    let mut value = SfcValue::ZERO;
    for (pos, &d) in dims.iter().enumerate() {
        let d = d as usize;
        if coord_bit(coords[d], bits, used[d]) == 1 {
            value.set_bit(width - 1 - pos as u32);
        }
        used[d] += 1;
    }
    value
}
