//! Dense 3D scalar and boolean fields with a bit-exact on-disk format.
//!
//! Values are stored x-fastest: flat index `i = x + nx * (y + ny * z)`.
//! In-memory scalar data is `f64`; the VOL1 container stores `f32`, so
//! `save` quantizes once and `load(save(v))` is bit-exact for any volume
//! whose values are `f32`-representable (every volume this crate produces
//! from a file or a generator is).
//!
//! VOL1 layout, little-endian:
//!
//! ```text
//! magic  "VOL1"          4 bytes
//! dims   u32 x, y, z    12 bytes
//! spacing f32 x, y, z   12 bytes
//! dtype  u8 (0|1)        1 byte
//! payload dims.product() elements, x-fastest
//!         dtype 0: f32 little-endian
//!         dtype 1: u8 in {0, 1}
//! ```

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

pub const VOL1_MAGIC: [u8; 4] = *b"VOL1";
pub const VOL1_HEADER_LEN: usize = 29;

/// Voxel counts along x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub fn count(&self) -> usize {
        self.x * self.y * self.z
    }

    /// Flat x-fastest index.
    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.x && y < self.y && z < self.z);
        x + self.x * (y + self.y * z)
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.x, self.y, self.z)
    }
}

/// Element type code of a stored field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    /// 32-bit float scalar field.
    Scalar = 0,
    /// 8-bit binary mask.
    Mask = 1,
}

/// Shared header of scalar volumes and binary masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeHeader {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub dtype: Dtype,
}

impl VolumeHeader {
    pub fn new(dims: Dims, spacing: [f64; 3], dtype: Dtype) -> Result<Self> {
        if dims.x == 0 || dims.y == 0 || dims.z == 0 {
            return Err(Error::InvalidHeader(format!(
                "all dims must be >= 1, got {:?}",
                dims.as_tuple()
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidHeader(format!(
                "all spacing entries must be positive and finite, got {spacing:?}"
            )));
        }
        Ok(Self {
            dims,
            spacing,
            dtype,
        })
    }
}

/// Dense 3D scalar field. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    header: VolumeHeader,
    data: Vec<f64>,
}

impl Volume {
    /// Builds a scalar volume, validating length and finiteness.
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        let header = VolumeHeader::new(dims, spacing, Dtype::Scalar)?;
        if data.len() != dims.count() {
            return Err(Error::Truncated {
                expected: dims.count(),
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "volume data",
            });
        }
        Ok(Self { header, data })
    }

    /// Unit-spacing convenience constructor.
    pub fn from_data(dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, [1.0; 3], data)
    }

    /// Constant-valued volume.
    pub fn constant(dims: Dims, value: f64) -> Self {
        Self::new(dims, [1.0; 3], vec![value; dims.count()]).expect("constant volume is valid")
    }

    /// Internal constructor for values produced by crate arithmetic.
    pub(crate) fn from_computed(dims: Dims, spacing: [f64; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.count());
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite computed value");
        Self {
            header: VolumeHeader {
                dims,
                spacing,
                dtype: Dtype::Scalar,
            },
            data,
        }
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn dims(&self) -> Dims {
        self.header.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.header.spacing
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

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.header.dims.idx(x, y, z)]
    }
}

/// Dense 3D boolean field. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    header: VolumeHeader,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<bool>) -> Result<Self> {
        let header = VolumeHeader::new(dims, spacing, Dtype::Mask)?;
        if data.len() != dims.count() {
            return Err(Error::Truncated {
                expected: dims.count(),
                found: data.len(),
            });
        }
        Ok(Self { header, data })
    }

    pub fn from_data(dims: Dims, data: Vec<bool>) -> Result<Self> {
        Self::new(dims, [1.0; 3], data)
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn dims(&self) -> Dims {
        self.header.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.header.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.header.dims.idx(x, y, z)]
    }

    /// Number of set voxels.
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// A loaded field: either a scalar volume or a binary mask, per the file's
/// dtype code.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Scalar(Volume),
    Mask(BinaryMask),
}

impl Field {
    pub fn as_scalar(&self) -> Option<&Volume> {
        match self {
            Field::Scalar(v) => Some(v),
            Field::Mask(_) => None,
        }
    }

    pub fn as_mask(&self) -> Option<&BinaryMask> {
        match self {
            Field::Mask(m) => Some(m),
            Field::Scalar(_) => None,
        }
    }
}

impl From<Volume> for Field {
    fn from(v: Volume) -> Self {
        Field::Scalar(v)
    }
}

impl From<BinaryMask> for Field {
    fn from(m: BinaryMask) -> Self {
        Field::Mask(m)
    }
}

fn encode_header(out: &mut Vec<u8>, header: &VolumeHeader) {
    out.extend_from_slice(&VOL1_MAGIC);
    for d in [header.dims.x, header.dims.y, header.dims.z] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in header.spacing {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out.push(header.dtype as u8);
}

/// Serializes a field to VOL1 bytes.
pub fn encode_volume(field: &Field) -> Vec<u8> {
    match field {
        Field::Scalar(v) => {
            let mut out = Vec::with_capacity(VOL1_HEADER_LEN + 4 * v.len());
            encode_header(&mut out, v.header());
            for &x in v.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
            out
        }
        Field::Mask(m) => {
            let mut out = Vec::with_capacity(VOL1_HEADER_LEN + m.len());
            encode_header(&mut out, m.header());
            out.extend(m.data().iter().map(|&b| b as u8));
            out
        }
    }
}

/// Parses VOL1 bytes into a field.
pub fn decode_volume(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: VOL1_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != VOL1_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if bytes.len() < VOL1_HEADER_LEN {
        return Err(Error::Truncated {
            expected: VOL1_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut dims_raw = [0usize; 3];
    for (i, d) in dims_raw.iter_mut().enumerate() {
        let off = 4 + 4 * i;
        *d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    }
    let mut spacing = [0f64; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let off = 16 + 4 * i;
        *s = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
    }
    let dtype_code = bytes[28];
    let dims = Dims::new(dims_raw[0], dims_raw[1], dims_raw[2]);
    let n = dims.count();
    let payload = &bytes[VOL1_HEADER_LEN..];
    match dtype_code {
        0 => {
            if payload.len() != 4 * n {
                return Err(Error::Truncated {
                    expected: n,
                    found: payload.len() / 4,
                });
            }
            let mut data = Vec::with_capacity(n);
            for chunk in payload.chunks_exact(4) {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: "VOL1 scalar payload",
                    });
                }
                data.push(v as f64);
            }
            Ok(Field::Scalar(Volume::new(dims, spacing, data)?))
        }
        1 => {
            if payload.len() != n {
                return Err(Error::Truncated {
                    expected: n,
                    found: payload.len(),
                });
            }
            let mut data = Vec::with_capacity(n);
            for &b in payload {
                match b {
                    0 => data.push(false),
                    1 => data.push(true),
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "VOL1 mask payload byte {other} (expected 0 or 1)"
                        )))
                    }
                }
            }
            Ok(Field::Mask(BinaryMask::new(dims, spacing, data)?))
        }
        other => Err(Error::InvalidDtype(other)),
    }
}

/// Loads a VOL1 file.
pub fn load_volume<P: AsRef<Path>>(path: P) -> Result<Field> {
    let bytes = fs::read(path)?;
    decode_volume(&bytes)
}

/// Writes a VOL1 file, replacing any existing content.
pub fn save_volume<P: AsRef<Path>>(field: &Field, path: P) -> Result<()> {
    fs::write(path, encode_volume(field))?;
    Ok(())
}

/// Per-volume summary statistics. Variance is the population variance
/// (divide by N).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeStats {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, population variance, min and max of a scalar field.
pub fn volume_stats(v: &Volume) -> VolumeStats {
    let n = v.len() as f64;
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &x in v.data() {
        sum += x;
        min = min.min(x);
        max = max.max(x);
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for &x in v.data() {
        let d = x - mean;
        ss += d * d;
    }
    VolumeStats {
        mean,
        variance: ss / n,
        min,
        max,
    }
}

/// Clips values to the [lo_pct, hi_pct] percentile window and maps the
/// window affinely onto [0, 1]. Percentiles use linear interpolation
/// between order statistics. Returns the normalized volume and a flag that
/// is true when the window was degenerate (equal percentile values), in
/// which case the output is all zeros.
pub fn normalize_intensity(v: &Volume, lo_pct: f64, hi_pct: f64) -> Result<(Volume, bool)> {
    if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct >= hi_pct {
        return Err(Error::InvalidArgument(format!(
            "percentile window must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})"
        )));
    }
    let mut sorted: Vec<f64> = v.data().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = percentile_sorted(&sorted, lo_pct);
    let hi = percentile_sorted(&sorted, hi_pct);
    if hi <= lo {
        let zeros = vec![0.0; v.len()];
        return Ok((Volume::from_computed(v.dims(), v.spacing(), zeros), true));
    }
    let scale = 1.0 / (hi - lo);
    let data = v
        .data()
        .iter()
        .map(|&x| ((x.clamp(lo, hi) - lo) * scale).clamp(0.0, 1.0))
        .collect();
    Ok((Volume::from_computed(v.dims(), v.spacing(), data), false))
}

/// Linear-interpolation percentile of an ascending slice.
fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = pct / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Voxelwise product of two equal-dim volumes. Spacing is taken from `a`.
pub fn hadamard(a: &Volume, b: &Volume) -> Result<Volume> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch {
            left: a.dims().as_tuple(),
            right: b.dims().as_tuple(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Ok(Volume::from_computed(a.dims(), a.spacing(), data))
}

/// Thresholds a scalar field: voxel is set iff its value is strictly
/// greater than `threshold`.
pub fn binarize(v: &Volume, threshold: f64) -> BinaryMask {
    let data = v.data().iter().map(|&x| x > threshold).collect();
    BinaryMask::new(v.dims(), v.spacing(), data).expect("dims match source volume")
}
