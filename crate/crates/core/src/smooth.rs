//! Smoothness penalty: the sum over voxels of squared forward differences
//! along x, y and z. Differences that would cross the far boundary are
//! omitted, so the loss is a finite quadratic form and its gradient is a
//! discrete negative Laplacian with one-sided corrections at the faces.

use crate::volume::{Dims, Volume};

#[inline]
fn neighbor(dims: Dims, x: usize, y: usize, z: usize, axis: usize) -> Option<usize> {
    match axis {
        0 if x + 1 < dims.x => Some(dims.idx(x + 1, y, z)),
        1 if y + 1 < dims.y => Some(dims.idx(x, y + 1, z)),
        2 if z + 1 < dims.z => Some(dims.idx(x, y, z + 1)),
        _ => None,
    }
}

/// `sum_i ||forward_diff(v)_i||^2` with boundary differences omitted.
pub fn smooth_loss(delta: &Volume) -> f64 {
    let dims = delta.dims();
    let data = delta.data();
    let mut acc = 0.0;
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let i = dims.idx(x, y, z);
                for axis in 0..3 {
                    if let Some(j) = neighbor(dims, x, y, z, axis) {
                        let d = data[j] - data[i];
                        acc += d * d;
                    }
                }
            }
        }
    }
    acc
}

/// Mean-per-voxel variant of [`smooth_loss`], for resolution-independent
/// weight tuning. Off by default in fitting configs.
pub fn smooth_loss_mean(delta: &Volume) -> f64 {
    smooth_loss(delta) / delta.len() as f64
}

/// Exact analytic gradient of [`smooth_loss`]: each squared difference
/// `(v[j] - v[i])^2` contributes `2 (v[j] - v[i])` to voxel `j` and the
/// negation to voxel `i`.
pub fn smooth_loss_grad(delta: &Volume) -> Volume {
    let dims = delta.dims();
    let data = delta.data();
    let mut grad = vec![0.0; data.len()];
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let i = dims.idx(x, y, z);
                for axis in 0..3 {
                    if let Some(j) = neighbor(dims, x, y, z, axis) {
                        let d = 2.0 * (data[j] - data[i]);
                        grad[j] += d;
                        grad[i] -= d;
                    }
                }
            }
        }
    }
    Volume::from_computed(dims, delta.spacing(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::volume::Dims;

    fn random_volume(dims: Dims, seed: u64) -> Volume {
        let mut r = SplitMix64::new(seed);
        Volume::from_data(dims, (0..dims.count()).map(|_| r.next_f64()).collect()).unwrap()
    }

    #[test]
    fn constant_volume_is_minimum() {
        let v = Volume::constant(Dims::new(4, 3, 5), 0.8);
        assert_eq!(smooth_loss(&v), 0.0);
        assert!(smooth_loss_grad(&v).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_voxel_has_no_neighbors() {
        let v = Volume::constant(Dims::new(1, 1, 1), 0.3);
        assert_eq!(smooth_loss(&v), 0.0);
    }

    #[test]
    fn step_along_x_counts_four_unit_differences() {
        let dims = Dims::new(2, 2, 2);
        let mut data = vec![0.0; 8];
        for z in 0..2 {
            for y in 0..2 {
                data[dims.idx(1, y, z)] = 1.0;
            }
        }
        let v = Volume::from_data(dims, data).unwrap();
        assert_eq!(smooth_loss(&v), 4.0);
    }

    #[test]
    fn ramp_gradient_zero_interior_slope_endpoints() {
        let slope = 0.25;
        let data: Vec<f64> = (0..4).map(|i| slope * i as f64).collect();
        let v = Volume::from_data(Dims::new(4, 1, 1), data).unwrap();
        let g = smooth_loss_grad(&v);
        assert!((g.data()[0] + 2.0 * slope).abs() < 1e-15);
        assert!(g.data()[1].abs() < 1e-15);
        assert!(g.data()[2].abs() < 1e-15);
        assert!((g.data()[3] - 2.0 * slope).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let dims = Dims::new(6, 6, 6);
        let v = random_volume(dims, 42);
        let g = smooth_loss_grad(&v);
        let h = 1e-5;
        let mut probe = SplitMix64::new(7);
        for _ in 0..20 {
            let i = probe.range_u64(dims.count() as u64) as usize;
            let mut plus = v.data().to_vec();
            let mut minus = v.data().to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fp = smooth_loss(&Volume::from_data(dims, plus).unwrap());
            let fm = smooth_loss(&Volume::from_data(dims, minus).unwrap());
            let fd = (fp - fm) / (2.0 * h);
            let rel = (g.data()[i] - fd).abs() / fd.abs().max(1e-12);
            assert!(rel <= 1e-7, "voxel {i}: analytic {} fd {fd}", g.data()[i]);
        }
    }

    #[test]
    fn shift_invariance_exact() {
        // dyadic values with headroom so the shifted subtraction is exact
        let dims = Dims::new(5, 4, 3);
        let mut r = SplitMix64::new(9);
        let data: Vec<f64> = (0..dims.count())
            .map(|_| (r.next_u64() >> 44) as f64 / (1u64 << 20) as f64)
            .collect();
        let v = Volume::from_data(dims, data).unwrap();
        let shifted =
            Volume::from_data(dims, v.data().iter().map(|&x| x + 3.75).collect()).unwrap();
        assert_eq!(smooth_loss(&v), smooth_loss(&shifted));
    }

    #[test]
    fn quadratic_scaling() {
        let dims = Dims::new(5, 4, 3);
        let v = random_volume(dims, 10);
        let a = 2.5;
        let scaled = Volume::from_data(dims, v.data().iter().map(|&x| a * x).collect()).unwrap();
        let rel = (smooth_loss(&scaled) - a * a * smooth_loss(&v)).abs() / smooth_loss(&v);
        assert!(rel < 1e-12);
    }

    #[test]
    fn nonnegative_and_zero_iff_constant() {
        let dims = Dims::new(3, 3, 3);
        let v = random_volume(dims, 11);
        assert!(smooth_loss(&v) > 0.0);
        let mean_variant = smooth_loss_mean(&v);
        assert!((mean_variant - smooth_loss(&v) / 27.0).abs() < 1e-15);
    }
}
