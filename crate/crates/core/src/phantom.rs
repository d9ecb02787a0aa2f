//! Deterministic synthetic cavity phantoms.
//!
//! A phantom pair mimics a registered preoperative/postoperative scan
//! pair: a bright bone block dotted with small air cells, where the
//! postoperative volume additionally has a cavity (a union of spheres
//! along a seeded random walk, anchored in one octant of the block)
//! reset to a low fill level. Both scans are then corrupted independently
//! with a multiplicative trilinear bias field, bright streak lines and
//! Gaussian noise, since two real acquisitions never share their
//! artifacts.
//!
//! Everything is drawn from labeled substreams of one splitmix64 seed
//! (cells, cavity, bias, streaks, noise each have their own), so changing
//! one knob, e.g. the streak count, never perturbs the cavity shape.

use crate::error::{Error, Result};
use crate::multiscale::{convolve_separable, gaussian_kernel};
use crate::rng::SplitMix64;
use crate::volume::{BinaryMask, Dims, Volume};
use serde::{Deserialize, Serialize};

// substream labels
const SUB_CELLS: u64 = 1;
const SUB_CAVITY: u64 = 2;
const SUB_BIAS_PRE: u64 = 3;
const SUB_BIAS_POST: u64 = 4;
const SUB_STREAK_PRE: u64 = 5;
const SUB_STREAK_POST: u64 = 6;
const SUB_NOISE_PRE: u64 = 7;
const SUB_NOISE_POST: u64 = 8;
const SUB_MORPH: u64 = 11;
const SUB_BLOBS: u64 = 12;
const SUB_FLIPS: u64 = 13;

const CAVITY_RETRIES: usize = 32;

/// Generation parameters of one phantom pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub seed: u64,
    /// Intensity of intact bone.
    pub bone_level: f64,
    /// Intensity of air (background and carved cells).
    pub air_level: f64,
    /// Inset of the bone block from every volume face, in voxels.
    pub bone_margin: usize,
    pub air_cell_count: usize,
    /// Air-cell radius range [lo, hi] in voxels.
    pub air_cell_radius: [f64; 2],
    /// Cavity random-walk step-count range [lo, hi].
    pub cavity_walk_steps: [usize; 2],
    /// Cavity sphere radius range [lo, hi] in voxels.
    pub cavity_radius: [f64; 2],
    /// Intensity the removed region takes in the postoperative scan.
    pub cavity_fill_level: f64,
    pub noise_sigma: f64,
    pub streak_count: usize,
    pub streak_level: f64,
    pub bias_amplitude: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            seed: 0,
            bone_level: 0.8,
            air_level: 0.05,
            bone_margin: 2,
            air_cell_count: 40,
            air_cell_radius: [1.0, 2.0],
            cavity_walk_steps: [10, 30],
            cavity_radius: [3.0, 6.0],
            cavity_fill_level: 0.1,
            noise_sigma: 0.03,
            streak_count: 3,
            streak_level: 1.0,
            bias_amplitude: 0.2,
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Noise-free variant: no streaks, no bias, no voxel noise.
    pub fn noiseless(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.streak_count = 0;
        self.bias_amplitude = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::InvalidArgument(format!(
                "phantom dims must be at least 16 per axis, got {:?}",
                self.dims
            )));
        }
        for (name, level) in [
            ("bone_level", self.bone_level),
            ("air_level", self.air_level),
            ("cavity_fill_level", self.cavity_fill_level),
            ("streak_level", self.streak_level),
        ] {
            if !(0.0..=1.0).contains(&level) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1], got {level}"
                )));
            }
        }
        for (name, range) in [
            ("air_cell_radius", self.air_cell_radius),
            ("cavity_radius", self.cavity_radius),
        ] {
            if range[0] > range[1] || range[0] < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} range {range:?} is invalid"
                )));
            }
        }
        if self.cavity_walk_steps[0] > self.cavity_walk_steps[1] || self.cavity_walk_steps[0] == 0 {
            return Err(Error::InvalidArgument(format!(
                "cavity_walk_steps range {:?} is invalid",
                self.cavity_walk_steps
            )));
        }
        if self.dims.iter().any(|&d| d <= 2 * self.bone_margin) {
            return Err(Error::InvalidArgument(
                "bone margin leaves no bone block".into(),
            ));
        }
        Ok(())
    }

    fn dims3(&self) -> Dims {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])
    }

    /// Bone block bounds, inclusive-exclusive per axis.
    fn block(&self) -> [(usize, usize); 3] {
        [
            (self.bone_margin, self.dims[0] - self.bone_margin),
            (self.bone_margin, self.dims[1] - self.bone_margin),
            (self.bone_margin, self.dims[2] - self.bone_margin),
        ]
    }
}

/// A generated pre/post pair with its ground-truth cavity mask.
#[derive(Debug, Clone)]
pub struct PhantomPair {
    pub preop: Volume,
    pub postop: Volume,
    pub gt_mask: BinaryMask,
    pub spec: PhantomSpec,
}

fn carve_sphere(
    flags: &mut [bool],
    dims: Dims,
    block: &[(usize, usize); 3],
    center: [f64; 3],
    radius: f64,
) {
    let r2 = radius * radius;
    let lo = |c: f64, b: (usize, usize)| ((c - radius).floor().max(b.0 as f64)) as usize;
    let hi = |c: f64, b: (usize, usize)| ((c + radius).ceil().min(b.1 as f64 - 1.0)) as usize;
    for z in lo(center[2], block[2])..=hi(center[2], block[2]) {
        for y in lo(center[1], block[1])..=hi(center[1], block[1]) {
            for x in lo(center[0], block[0])..=hi(center[0], block[0]) {
                let dx = x as f64 - center[0];
                let dy = y as f64 - center[1];
                let dz = z as f64 - center[2];
                if dx * dx + dy * dy + dz * dz <= r2 {
                    flags[dims.idx(x, y, z)] = true;
                }
            }
        }
    }
}

/// Cavity voxels from a seeded random walk of overlapping spheres. Fails
/// when the walk leaves the volume.
fn try_cavity(spec: &PhantomSpec, rng: &mut SplitMix64) -> Option<Vec<bool>> {
    let dims = spec.dims3();
    let block = spec.block();
    let mut flags = vec![false; dims.count()];
    // anchor at the center of the high octant of the bone block
    let mut pos = [
        block[0].0 as f64 + 0.75 * (block[0].1 - block[0].0) as f64,
        block[1].0 as f64 + 0.75 * (block[1].1 - block[1].0) as f64,
        block[2].0 as f64 + 0.75 * (block[2].1 - block[2].0) as f64,
    ];
    let steps =
        rng.range_i64(spec.cavity_walk_steps[0] as i64, spec.cavity_walk_steps[1] as i64) as usize;
    for _ in 0..steps {
        let radius = rng.range_f64(spec.cavity_radius[0], spec.cavity_radius[1]);
        carve_sphere(&mut flags, dims, &block, pos, radius);
        for p in pos.iter_mut() {
            *p += rng.range_f64(-2.0, 2.0);
        }
        let escaped = pos
            .iter()
            .zip(spec.dims)
            .any(|(&p, d)| p < 0.0 || p >= d as f64);
        if escaped {
            return None;
        }
    }
    if flags.iter().any(|&f| f) {
        Some(flags)
    } else {
        None
    }
}

/// Multiplicative bias field `1 + a * T`, with `T` the trilinear
/// interpolation of eight corner values in [-1, 1].
fn apply_bias(data: &mut [f64], dims: Dims, amplitude: f64, rng: &mut SplitMix64) {
    if amplitude == 0.0 {
        return;
    }
    let corners: Vec<f64> = (0..8).map(|_| rng.range_f64(-1.0, 1.0)).collect();
    let denom = [
        (dims.x - 1).max(1) as f64,
        (dims.y - 1).max(1) as f64,
        (dims.z - 1).max(1) as f64,
    ];
    for z in 0..dims.z {
        let wz = z as f64 / denom[2];
        for y in 0..dims.y {
            let wy = y as f64 / denom[1];
            for x in 0..dims.x {
                let wx = x as f64 / denom[0];
                let mut t = 0.0;
                for (c, &value) in corners.iter().enumerate() {
                    let fx = if c & 1 == 0 { 1.0 - wx } else { wx };
                    let fy = if c & 2 == 0 { 1.0 - wy } else { wy };
                    let fz = if c & 4 == 0 { 1.0 - wz } else { wz };
                    t += value * fx * fy * fz;
                }
                data[dims.idx(x, y, z)] *= 1.0 + amplitude * t;
            }
        }
    }
}

/// Bright width-1 lines through random points in random directions.
fn apply_streaks(data: &mut [f64], dims: Dims, count: usize, level: f64, rng: &mut SplitMix64) {
    let diag = ((dims.x * dims.x + dims.y * dims.y + dims.z * dims.z) as f64).sqrt();
    for _ in 0..count {
        let p = [
            rng.range_f64(0.0, dims.x as f64),
            rng.range_f64(0.0, dims.y as f64),
            rng.range_f64(0.0, dims.z as f64),
        ];
        // direction from a normalized Gaussian triple
        let mut d = [rng.normal(), rng.normal(), rng.normal()];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
        d.iter_mut().for_each(|v| *v /= norm);
        let steps = (2.0 * diag / 0.5) as i64;
        for s in -steps / 2..=steps / 2 {
            let t = s as f64 * 0.5;
            let x = (p[0] + t * d[0]).round();
            let y = (p[1] + t * d[1]).round();
            let z = (p[2] + t * d[2]).round();
            if x >= 0.0
                && y >= 0.0
                && z >= 0.0
                && (x as usize) < dims.x
                && (y as usize) < dims.y
                && (z as usize) < dims.z
            {
                data[dims.idx(x as usize, y as usize, z as usize)] = level;
            }
        }
    }
}

fn apply_noise(data: &mut [f64], sigma: f64, rng: &mut SplitMix64) {
    if sigma == 0.0 {
        return;
    }
    for v in data.iter_mut() {
        *v += sigma * rng.normal();
    }
}

/// Generates a deterministic pre/post pair with its ground-truth cavity.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomPair> {
    spec.validate()?;
    let dims = spec.dims3();
    let root = SplitMix64::new(spec.seed);
    let block = spec.block();

    // shared base: bone block with carved air cells
    let mut base = vec![spec.air_level; dims.count()];
    for z in block[2].0..block[2].1 {
        for y in block[1].0..block[1].1 {
            for x in block[0].0..block[0].1 {
                base[dims.idx(x, y, z)] = spec.bone_level;
            }
        }
    }
    let mut cells = root.substream(SUB_CELLS);
    let mut cell_flags = vec![false; dims.count()];
    for _ in 0..spec.air_cell_count {
        let center = [
            cells.range_f64(block[0].0 as f64, block[0].1 as f64),
            cells.range_f64(block[1].0 as f64, block[1].1 as f64),
            cells.range_f64(block[2].0 as f64, block[2].1 as f64),
        ];
        let radius = cells.range_f64(spec.air_cell_radius[0], spec.air_cell_radius[1]);
        carve_sphere(&mut cell_flags, dims, &block, center, radius);
    }
    for (v, &carved) in base.iter_mut().zip(&cell_flags) {
        if carved {
            *v = spec.air_level;
        }
    }

    // cavity with bounded retries; each attempt gets a fresh substream
    let mut cavity = None;
    for attempt in 0..CAVITY_RETRIES {
        let mut walk = root.substream(SUB_CAVITY + 100 * attempt as u64);
        if let Some(flags) = try_cavity(spec, &mut walk) {
            cavity = Some(flags);
            break;
        }
    }
    let cavity = cavity.ok_or(Error::CavityGeneration {
        attempts: CAVITY_RETRIES,
    })?;

    let mut pre = base.clone();
    let mut post = base;
    for (v, &removed) in post.iter_mut().zip(&cavity) {
        if removed {
            *v = spec.cavity_fill_level;
        }
    }

    apply_bias(
        &mut pre,
        dims,
        spec.bias_amplitude,
        &mut root.substream(SUB_BIAS_PRE),
    );
    apply_bias(
        &mut post,
        dims,
        spec.bias_amplitude,
        &mut root.substream(SUB_BIAS_POST),
    );
    apply_streaks(
        &mut pre,
        dims,
        spec.streak_count,
        spec.streak_level,
        &mut root.substream(SUB_STREAK_PRE),
    );
    apply_streaks(
        &mut post,
        dims,
        spec.streak_count,
        spec.streak_level,
        &mut root.substream(SUB_STREAK_POST),
    );
    apply_noise(&mut pre, spec.noise_sigma, &mut root.substream(SUB_NOISE_PRE));
    apply_noise(
        &mut post,
        spec.noise_sigma,
        &mut root.substream(SUB_NOISE_POST),
    );

    Ok(PhantomPair {
        preop: Volume::from_data(dims, pre)?,
        postop: Volume::from_data(dims, post)?,
        gt_mask: BinaryMask::from_data(dims, cavity)?,
        spec: spec.clone(),
    })
}

/// Controlled weak-label corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    /// Morphology rounds; positive dilates, negative erodes. Magnitude is
    /// the round count.
    pub morph_radius: i32,
    /// When set, the morphology direction is drawn from the seed instead
    /// of the sign of `morph_radius`.
    pub morph_random_sign: bool,
    /// Independent per-voxel flip probability.
    pub flip_rate: f64,
    pub blob_count: usize,
    pub blob_radius: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            morph_radius: 1,
            morph_random_sign: true,
            flip_rate: 0.1,
            blob_count: 2,
            blob_radius: 2.0,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(Error::InvalidArgument(format!(
                "flip_rate must lie in [0, 1], got {}",
                self.flip_rate
            )));
        }
        Ok(())
    }
}

fn morph_once(data: &[bool], dims: Dims, dilate: bool) -> Vec<bool> {
    let mut out = data.to_vec();
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let i = dims.idx(x, y, z);
                // dilation looks for a set neighbor, erosion for an unset
                // (or out-of-volume) one
                let mut hit = false;
                let neighbors: [(isize, isize, isize); 6] = [
                    (-1, 0, 0),
                    (1, 0, 0),
                    (0, -1, 0),
                    (0, 1, 0),
                    (0, 0, -1),
                    (0, 0, 1),
                ];
                for (dx, dy, dz) in neighbors {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    let nz = z as isize + dz;
                    let inside = nx >= 0
                        && ny >= 0
                        && nz >= 0
                        && nx < dims.x as isize
                        && ny < dims.y as isize
                        && nz < dims.z as isize;
                    let v = inside && data[dims.idx(nx as usize, ny as usize, nz as usize)];
                    if dilate == v {
                        hit = true;
                        break;
                    }
                }
                if dilate {
                    out[i] = data[i] || hit;
                } else {
                    out[i] = data[i] && !hit;
                }
            }
        }
    }
    out
}

/// Applies morphology, random blob insertions/removals, then independent
/// voxel flips, all driven by labeled substreams of `c.seed`.
pub fn corrupt_mask(mask: &BinaryMask, c: &CorruptionSpec) -> Result<BinaryMask> {
    c.validate()?;
    let dims = mask.dims();
    let root = SplitMix64::new(c.seed);
    let mut data = mask.data().to_vec();

    let rounds = c.morph_radius.unsigned_abs() as usize;
    if rounds > 0 {
        let mut morph_rng = root.substream(SUB_MORPH);
        let dilate = if c.morph_random_sign {
            morph_rng.next_bool(0.5)
        } else {
            c.morph_radius > 0
        };
        for _ in 0..rounds {
            data = morph_once(&data, dims, dilate);
        }
    }

    if c.blob_count > 0 && c.blob_radius > 0.0 {
        let mut blob_rng = root.substream(SUB_BLOBS);
        let full_block = [(0, dims.x), (0, dims.y), (0, dims.z)];
        for _ in 0..c.blob_count {
            let center = [
                blob_rng.range_f64(0.0, dims.x as f64),
                blob_rng.range_f64(0.0, dims.y as f64),
                blob_rng.range_f64(0.0, dims.z as f64),
            ];
            let add = blob_rng.next_bool(0.5);
            let mut blob = vec![false; dims.count()];
            carve_sphere(&mut blob, dims, &full_block, center, c.blob_radius);
            for (v, &inside) in data.iter_mut().zip(&blob) {
                if inside {
                    *v = add;
                }
            }
        }
    }

    if c.flip_rate > 0.0 {
        let mut flip_rng = root.substream(SUB_FLIPS);
        for v in data.iter_mut() {
            if flip_rng.next_bool(c.flip_rate) {
                *v = !*v;
            }
        }
    }

    BinaryMask::new(dims, mask.spacing(), data)
}

/// Per-voxel feature channels for the weak-supervision harness: raw
/// intensity, Gaussian-smoothed intensity, central-difference gradient
/// magnitude, and windowed local variance.
pub fn voxel_features(v: &Volume) -> Vec<Volume> {
    let dims = v.dims();
    let kernel = gaussian_kernel(1.5, 5).expect("feature kernel is valid");
    let smoothed = convolve_separable(v, &kernel);

    // central differences with mirrored neighbors
    let reflect_get = |x: isize, y: isize, z: isize| -> f64 {
        let rx = crate::multiscale::reflect(x, dims.x);
        let ry = crate::multiscale::reflect(y, dims.y);
        let rz = crate::multiscale::reflect(z, dims.z);
        v.get(rx, ry, rz)
    };
    let mut gradmag = Vec::with_capacity(dims.count());
    for z in 0..dims.z as isize {
        for y in 0..dims.y as isize {
            for x in 0..dims.x as isize {
                let gx = (reflect_get(x + 1, y, z) - reflect_get(x - 1, y, z)) / 2.0;
                let gy = (reflect_get(x, y + 1, z) - reflect_get(x, y - 1, z)) / 2.0;
                let gz = (reflect_get(x, y, z + 1) - reflect_get(x, y, z - 1)) / 2.0;
                gradmag.push((gx * gx + gy * gy + gz * gz).sqrt());
            }
        }
    }

    let sq = Volume::from_computed(
        dims,
        v.spacing(),
        v.data().iter().map(|&x| x * x).collect(),
    );
    let smoothed_sq = convolve_separable(&sq, &kernel);
    let variance: Vec<f64> = smoothed_sq
        .data()
        .iter()
        .zip(smoothed.data())
        .map(|(&e2, &m)| (e2 - m * m).max(0.0))
        .collect();

    vec![
        v.clone(),
        smoothed,
        Volume::from_computed(dims, v.spacing(), gradmag),
        Volume::from_computed(dims, v.spacing(), variance),
    ]
}

/// Mirrors a volume and a mask consistently along the chosen axes.
pub fn flip_augment(
    v: &Volume,
    mask: &BinaryMask,
    axes: [bool; 3],
) -> Result<(Volume, BinaryMask)> {
    if v.dims() != mask.dims() {
        return Err(Error::DimMismatch {
            left: v.dims().as_tuple(),
            right: mask.dims().as_tuple(),
        });
    }
    let dims = v.dims();
    let map = |x: usize, n: usize, flip: bool| if flip { n - 1 - x } else { x };
    let mut vol_data = Vec::with_capacity(dims.count());
    let mut mask_data = Vec::with_capacity(dims.count());
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let sx = map(x, dims.x, axes[0]);
                let sy = map(y, dims.y, axes[1]);
                let sz = map(z, dims.z, axes[2]);
                vol_data.push(v.get(sx, sy, sz));
                mask_data.push(mask.get(sx, sy, sz));
            }
        }
    }
    Ok((
        Volume::from_computed(dims, v.spacing(), vol_data),
        BinaryMask::new(dims, mask.spacing(), mask_data)?,
    ))
}
