//! Separable Gaussian filtering, dyadic downsampling and pyramids.
//!
//! All boundary handling is mirror (reflect-without-repeat): index `-1`
//! maps to `1`, index `n` maps to `n - 2`. The adjoints of the filtering
//! and pooling operators live here too, next to their forward passes, so
//! gradient code can backpropagate through a pyramid.

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

/// Symmetric, unit-sum 1D Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel1D {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl GaussianKernel1D {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// All `2 * radius + 1` taps, center at index `radius`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Spatial extent `2 * radius + 1`.
    pub fn extent(&self) -> usize {
        2 * self.radius + 1
    }
}

/// Builds a normalized Gaussian kernel: weights proportional to
/// `exp(-t^2 / (2 sigma^2))` for `t in [-radius, radius]`, scaled to unit
/// sum. The half-kernel is mirrored so symmetry is bit-exact.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<GaussianKernel1D> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let n = 2 * radius + 1;
    let mut weights = vec![0.0; n];
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut sum = 0.0;
    for t in 0..=radius {
        let w = (-((t * t) as f64) * inv).exp();
        weights[radius + t] = w;
        weights[radius - t] = w;
        sum += if t == 0 { w } else { 2.0 * w };
    }
    for w in &mut weights {
        *w /= sum;
    }
    Ok(GaussianKernel1D {
        sigma,
        radius,
        weights,
    })
}

/// Mirror (reflect-without-repeat) an index into `[0, n)`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Strides for walking one axis of an x-fastest layout.
fn axis_geometry(dims: Dims, axis: usize) -> (usize, usize, usize, usize) {
    // (axis length, axis stride, number of scan-lines, ...) where the two
    // remaining axes are enumerated by an outer loop below.
    let (nx, ny, nz) = dims.as_tuple();
    match axis {
        0 => (nx, 1, ny, nz),
        1 => (ny, nx, nx, nz),
        2 => (nz, nx * ny, nx, ny),
        _ => unreachable!("axis must be 0, 1 or 2"),
    }
}

fn line_base(dims: Dims, axis: usize, a: usize, b: usize) -> usize {
    let (nx, ny, _) = dims.as_tuple();
    match axis {
        0 => nx * (a + ny * b),
        1 => a + nx * ny * b,
        2 => a + nx * b,
        _ => unreachable!(),
    }
}

/// One forward pass along `axis`: `out[i] = sum_t w[t] * in[reflect(i + t)]`
/// per scan-line, fixed summation order.
fn conv_axis(data: &[f64], dims: Dims, axis: usize, kernel: &GaussianKernel1D) -> Vec<f64> {
    let (len, stride, na, nb) = axis_geometry(dims, axis);
    let radius = kernel.radius as isize;
    let w = &kernel.weights;
    let mut out = vec![0.0; data.len()];
    let mut line = vec![0.0; len];
    for b in 0..nb {
        for a in 0..na {
            let base = line_base(dims, axis, a, b);
            for (i, slot) in line.iter_mut().enumerate() {
                *slot = data[base + i * stride];
            }
            for i in 0..len {
                let mut acc = 0.0;
                for (k, &wk) in w.iter().enumerate() {
                    let j = reflect(i as isize + k as isize - radius, len);
                    acc += wk * line[j];
                }
                out[base + i * stride] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`conv_axis`]: scatters `w[t] * g[i]` into `reflect(i + t)`.
fn conv_axis_adjoint(grad: &[f64], dims: Dims, axis: usize, kernel: &GaussianKernel1D) -> Vec<f64> {
    let (len, stride, na, nb) = axis_geometry(dims, axis);
    let radius = kernel.radius as isize;
    let w = &kernel.weights;
    let mut out = vec![0.0; grad.len()];
    let mut line = vec![0.0; len];
    for b in 0..nb {
        for a in 0..na {
            let base = line_base(dims, axis, a, b);
            line.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..len {
                let g = grad[base + i * stride];
                if g == 0.0 {
                    continue;
                }
                for (k, &wk) in w.iter().enumerate() {
                    let j = reflect(i as isize + k as isize - radius, len);
                    line[j] += wk * g;
                }
            }
            for (i, &v) in line.iter().enumerate() {
                out[base + i * stride] = v;
            }
        }
    }
    out
}

/// Separable filtering: the kernel is applied along x, then y, then z,
/// with mirror boundaries. Output dims equal input dims.
pub fn convolve_separable(v: &Volume, kernel: &GaussianKernel1D) -> Volume {
    let dims = v.dims();
    let x = conv_axis(v.data(), dims, 0, kernel);
    let y = conv_axis(&x, dims, 1, kernel);
    let z = conv_axis(&y, dims, 2, kernel);
    Volume::from_computed(dims, v.spacing(), z)
}

/// Adjoint of [`convolve_separable`] (passes applied in reverse order).
pub fn convolve_separable_adjoint(grad: &Volume, kernel: &GaussianKernel1D) -> Volume {
    let dims = grad.dims();
    let z = conv_axis_adjoint(grad.data(), dims, 2, kernel);
    let y = conv_axis_adjoint(&z, dims, 1, kernel);
    let x = conv_axis_adjoint(&y, dims, 0, kernel);
    Volume::from_computed(dims, grad.spacing(), x)
}

fn half_dims(dims: Dims) -> Dims {
    Dims::new(dims.x.div_ceil(2), dims.y.div_ceil(2), dims.z.div_ceil(2))
}

/// Halves each dimension by 2x2x2 mean pooling. Odd dims are mirror-padded
/// to even before pooling, so output dims are `ceil(dim / 2)` and spacing
/// doubles.
pub fn downsample2(v: &Volume) -> Volume {
    let dims = v.dims();
    let out_dims = half_dims(dims);
    let data = v.data();
    let mut out = Vec::with_capacity(out_dims.count());
    for oz in 0..out_dims.z {
        for oy in 0..out_dims.y {
            for ox in 0..out_dims.x {
                let mut acc = 0.0;
                for dz in 0..2 {
                    let z = reflect((2 * oz + dz) as isize, dims.z);
                    for dy in 0..2 {
                        let y = reflect((2 * oy + dy) as isize, dims.y);
                        for dx in 0..2 {
                            let x = reflect((2 * ox + dx) as isize, dims.x);
                            acc += data[dims.idx(x, y, z)];
                        }
                    }
                }
                out.push(acc * 0.125);
            }
        }
    }
    let sp = v.spacing();
    Volume::from_computed(out_dims, [sp[0] * 2.0, sp[1] * 2.0, sp[2] * 2.0], out)
}

/// Adjoint of [`downsample2`]: spreads `g / 8` to the 8 (possibly
/// coincident) source voxels of each pooled block. `fine_dims` must be the
/// dims of the pre-pooling volume.
pub fn downsample2_adjoint(grad: &Volume, fine_dims: Dims, fine_spacing: [f64; 3]) -> Volume {
    debug_assert_eq!(half_dims(fine_dims), grad.dims());
    let out_dims = grad.dims();
    let mut out = vec![0.0; fine_dims.count()];
    for oz in 0..out_dims.z {
        for oy in 0..out_dims.y {
            for ox in 0..out_dims.x {
                let g = grad.get(ox, oy, oz) * 0.125;
                if g == 0.0 {
                    continue;
                }
                for dz in 0..2 {
                    let z = reflect((2 * oz + dz) as isize, fine_dims.z);
                    for dy in 0..2 {
                        let y = reflect((2 * oy + dy) as isize, fine_dims.y);
                        for dx in 0..2 {
                            let x = reflect((2 * ox + dx) as isize, fine_dims.x);
                            out[fine_dims.idx(x, y, z)] += g;
                        }
                    }
                }
            }
        }
    }
    Volume::from_computed(fine_dims, fine_spacing, out)
}

/// Builds a dyadic pyramid: element 0 is `v`, element j+1 is
/// `downsample2(element j)`. Construction stops early when any dim of the
/// next level would fall below `min_extent` (the filtering window extent),
/// so the achieved level count is `result.len()`.
pub fn build_pyramid(v: &Volume, levels: usize, min_extent: usize) -> Result<Vec<Volume>> {
    if levels == 0 {
        return Err(Error::InvalidArgument(
            "pyramid needs at least one level".into(),
        ));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(v.clone());
    while out.len() < levels {
        let cur = out.last().unwrap().dims();
        let next = half_dims(cur);
        if next.x < min_extent || next.y < min_extent || next.z < min_extent {
            break;
        }
        out.push(downsample2(out.last().unwrap()));
    }
    Ok(out)
}
