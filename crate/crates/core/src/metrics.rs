//! Segmentation evaluation: overlap ratios, surface distances (HD95, ASD)
//! and the Wilcoxon signed-rank test.
//!
//! Surface point sets are mask voxels with at least one background
//! 6-neighbor (the volume boundary counts as background), placed at
//! `index * spacing` in physical units. Directed nearest-neighbor
//! distances are computed brute-force up to 5000 points per set and with
//! an exact Euclidean distance transform beyond that; both paths must
//! agree where they overlap.

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Dims};
use statrs::function::erf::erfc;

/// Voxel-level confusion counts of a prediction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimMismatch {
            left: pred.dims().as_tuple(),
            right: gt.dims().as_tuple(),
        });
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Overlap ratio battery.
///
/// Empty-mask conventions: when both masks are empty, dice and iou are 1;
/// when exactly one is empty they are 0. Ratio metrics with an empty
/// denominator report 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapMetrics {
    pub dice: f64,
    pub iou: f64,
    pub acc: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

pub fn overlap_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<OverlapMetrics> {
    let c = confusion_counts(pred, gt)?;
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let pred_empty = c.tp + c.fp == 0;
    let gt_empty = c.tp + c.fn_ == 0;
    let (dice, iou) = if pred_empty && gt_empty {
        (1.0, 1.0)
    } else {
        (
            ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            ratio(c.tp, c.tp + c.fp + c.fn_),
        )
    };
    Ok(OverlapMetrics {
        dice,
        iou,
        acc: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    })
}

/// A boundary voxel in index and physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub index: [usize; 3],
    pub position: [f64; 3],
}

/// Boundary voxels of a mask under 6-connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    points: Vec<SurfacePoint>,
    dims: Dims,
    spacing: [f64; 3],
}

impl SurfacePointSet {
    pub fn points(&self) -> &[SurfacePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Extracts the boundary voxels of `mask`: set voxels with at least one
/// unset 6-neighbor, where stepping outside the volume counts as unset.
pub fn surface_points(mask: &BinaryMask, spacing: [f64; 3]) -> SurfacePointSet {
    let dims = mask.dims();
    let mut points = Vec::new();
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                if !mask.get(x, y, z) {
                    continue;
                }
                let mut boundary = false;
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
                    if nx < 0
                        || ny < 0
                        || nz < 0
                        || nx >= dims.x as isize
                        || ny >= dims.y as isize
                        || nz >= dims.z as isize
                        || !mask.get(nx as usize, ny as usize, nz as usize)
                    {
                        boundary = true;
                        break;
                    }
                }
                if boundary {
                    points.push(SurfacePoint {
                        index: [x, y, z],
                        position: [
                            x as f64 * spacing[0],
                            y as f64 * spacing[1],
                            z as f64 * spacing[2],
                        ],
                    });
                }
            }
        }
    }
    SurfacePointSet {
        points,
        dims,
        spacing,
    }
}

const BRUTE_FORCE_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) enum NnMethod {
    Auto,
    BruteForce,
    DistanceTransform,
}

/// Nearest-neighbor distance from every point of `from` to the set `to`,
/// in the order of `from.points()`.
fn directed_nn_distances(
    from: &SurfacePointSet,
    to: &SurfacePointSet,
    method: NnMethod,
) -> Vec<f64> {
    debug_assert!(!from.is_empty() && !to.is_empty());
    let use_brute = match method {
        NnMethod::BruteForce => true,
        NnMethod::DistanceTransform => false,
        NnMethod::Auto => from.len() <= BRUTE_FORCE_LIMIT && to.len() <= BRUTE_FORCE_LIMIT,
    };
    if use_brute {
        let sp = from.spacing;
        from.points
            .iter()
            .map(|p| {
                let mut best = f64::INFINITY;
                for q in &to.points {
                    let dx = (p.index[0] as f64 - q.index[0] as f64) * sp[0];
                    let dy = (p.index[1] as f64 - q.index[1] as f64) * sp[1];
                    let dz = (p.index[2] as f64 - q.index[2] as f64) * sp[2];
                    let d2 = dx * dx + dy * dy + dz * dz;
                    if d2 < best {
                        best = d2;
                    }
                }
                best.sqrt()
            })
            .collect()
    } else {
        let field = squared_distance_field(to);
        from.points
            .iter()
            .map(|p| field[to.dims.idx(p.index[0], p.index[1], p.index[2])].sqrt())
            .collect()
    }
}

/// Exact squared Euclidean distance transform of the point set over its
/// voxel grid (Felzenszwalb-Huttenlocher lower envelopes, one pass per
/// axis, with per-axis weight `spacing^2`).
fn squared_distance_field(set: &SurfacePointSet) -> Vec<f64> {
    let dims = set.dims;
    let mut field = vec![f64::INFINITY; dims.count()];
    for p in &set.points {
        field[dims.idx(p.index[0], p.index[1], p.index[2])] = 0.0;
    }
    let (nx, ny, nz) = dims.as_tuple();
    let mut line = Vec::new();
    let mut out_line = Vec::new();
    // x pass
    for z in 0..nz {
        for y in 0..ny {
            line.clear();
            line.extend((0..nx).map(|x| field[dims.idx(x, y, z)]));
            dt1d(&line, set.spacing[0] * set.spacing[0], &mut out_line);
            for x in 0..nx {
                field[dims.idx(x, y, z)] = out_line[x];
            }
        }
    }
    // y pass
    for z in 0..nz {
        for x in 0..nx {
            line.clear();
            line.extend((0..ny).map(|y| field[dims.idx(x, y, z)]));
            dt1d(&line, set.spacing[1] * set.spacing[1], &mut out_line);
            for y in 0..ny {
                field[dims.idx(x, y, z)] = out_line[y];
            }
        }
    }
    // z pass
    for y in 0..ny {
        for x in 0..nx {
            line.clear();
            line.extend((0..nz).map(|z| field[dims.idx(x, y, z)]));
            dt1d(&line, set.spacing[2] * set.spacing[2], &mut out_line);
            for z in 0..nz {
                field[dims.idx(x, y, z)] = out_line[z];
            }
        }
    }
    field
}

/// 1D squared-distance transform under cost `w (p - q)^2 + f[q]`.
/// Positions with infinite cost are skipped when building the envelope.
fn dt1d(f: &[f64], w: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    let sites: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if sites.is_empty() {
        out.extend(std::iter::repeat(f64::INFINITY).take(n));
        return;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(sites.len()); // parabola sites
    let mut bounds: Vec<f64> = Vec::with_capacity(sites.len()); // hull[i] optimal from bounds[i]
    let intersect = |p: usize, q: usize| -> f64 {
        let (pf, qf) = (p as f64, q as f64);
        ((f[q] + w * qf * qf) - (f[p] + w * pf * pf)) / (2.0 * w * (qf - pf))
    };
    for &q in &sites {
        let mut s = f64::NEG_INFINITY;
        while let Some(&p) = hull.last() {
            s = intersect(p, q);
            if s <= *bounds.last().unwrap() {
                hull.pop();
                bounds.pop();
            } else {
                break;
            }
        }
        if hull.is_empty() {
            s = f64::NEG_INFINITY;
        }
        hull.push(q);
        bounds.push(s);
    }
    let mut k = 0;
    for x in 0..n {
        while k + 1 < hull.len() && bounds[k + 1] < x as f64 {
            k += 1;
        }
        let v = hull[k] as f64;
        let d = x as f64 - v;
        out.push(w * d * d + f[hull[k]]);
    }
}

/// Nearest-rank percentile of an unsorted sample (p in (0, 100]).
fn percentile_nearest_rank(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn require_nonempty(set: &SurfacePointSet, which: &'static str) -> Result<()> {
    if set.is_empty() {
        Err(Error::EmptyMask(which))
    } else {
        Ok(())
    }
}

fn check_mask_dims(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimMismatch {
            left: pred.dims().as_tuple(),
            right: gt.dims().as_tuple(),
        });
    }
    Ok(())
}

fn hd95_with_method(
    pred: &BinaryMask,
    gt: &BinaryMask,
    spacing: [f64; 3],
    method: NnMethod,
) -> Result<f64> {
    check_mask_dims(pred, gt)?;
    let ps = surface_points(pred, spacing);
    let gs = surface_points(gt, spacing);
    require_nonempty(&ps, "hd95 (prediction)")?;
    require_nonempty(&gs, "hd95 (ground truth)")?;
    let d_pg = percentile_nearest_rank(&directed_nn_distances(&ps, &gs, method), 95.0);
    let d_gp = percentile_nearest_rank(&directed_nn_distances(&gs, &ps, method), 95.0);
    Ok(d_pg.max(d_gp))
}

/// 95th-percentile symmetric surface distance: per direction, the
/// nearest-rank 95th percentile of nearest-neighbor distances between the
/// two surface point sets; the result is the larger directed value.
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    hd95_with_method(pred, gt, spacing, NnMethod::Auto)
}

fn asd_with_method(
    pred: &BinaryMask,
    gt: &BinaryMask,
    spacing: [f64; 3],
    method: NnMethod,
) -> Result<f64> {
    check_mask_dims(pred, gt)?;
    let ps = surface_points(pred, spacing);
    let gs = surface_points(gt, spacing);
    require_nonempty(&ps, "asd (prediction)")?;
    require_nonempty(&gs, "asd (ground truth)")?;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let d_pg = mean(directed_nn_distances(&ps, &gs, method));
    let d_gp = mean(directed_nn_distances(&gs, &ps, method));
    Ok(0.5 * (d_pg + d_gp))
}

/// Average symmetric surface distance: the mean of the two directed
/// average nearest-neighbor distances.
pub fn asd(pred: &BinaryMask, gt: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    asd_with_method(pred, gt, spacing, NnMethod::Auto)
}

/// Effective sample size above which the Wilcoxon null switches from exact
/// enumeration to the tie-corrected normal approximation.
pub const WILCOXON_EXACT_LIMIT: usize = 25;

/// Paired two-sided Wilcoxon signed-rank test.
///
/// Zero differences are dropped; tied absolute differences receive
/// mid-ranks. The returned statistic is the signed rank sum `W+ - W-`
/// (negated when the samples are swapped). For effective n up to 25 the
/// p-value comes from exact enumeration of the 2^n sign assignments
/// (computed by dynamic programming over rank sums); above that, from a
/// normal approximation with tie correction and no continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples must be non-empty and equal length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::UndefinedTest(
            "all paired differences are zero".into(),
        ));
    }
    let n = diffs.len();
    diffs.sort_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap());

    // mid-ranks over |d|; doubled ranks are integers even with ties
    let mut ranks2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        // tied group at 1-based positions i+1..=j+1: doubled mid-rank
        let doubled = (i + 1 + j + 1) as u64;
        for slot in ranks2.iter_mut().take(j + 1).skip(i) {
            *slot = doubled;
        }
        i = j + 1;
    }

    let mut w_plus2: u64 = 0;
    let total2: u64 = ranks2.iter().sum();
    for (d, &r2) in diffs.iter().zip(&ranks2) {
        if *d > 0.0 {
            w_plus2 += r2;
        }
    }
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = (total2 - w_plus2) as f64 / 2.0;
    let statistic = w_plus - w_minus;

    let p = if n <= WILCOXON_EXACT_LIMIT {
        // null distribution of doubled W+ over all 2^n sign assignments
        let mut counts = vec![0u64; total2 as usize + 1];
        counts[0] = 1;
        for &r2 in &ranks2 {
            for t in (r2 as usize..counts.len()).rev() {
                counts[t] += counts[t - r2 as usize];
            }
        }
        let total_assignments = (1u64 << n) as f64;
        let below: u64 = counts[..=w_plus2 as usize].iter().sum();
        let above: u64 = counts[w_plus2 as usize..].iter().sum();
        let p_low = below as f64 / total_assignments;
        let p_high = above as f64 / total_assignments;
        (2.0 * p_low.min(p_high)).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        // tie correction over groups of equal |d|
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (w_plus - mean) / var.sqrt();
        erfc(z.abs() / std::f64::consts::SQRT_2)
    };
    Ok((statistic, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::volume::Dims;

    fn mask_from_fn(dims: Dims, f: impl Fn(usize, usize, usize) -> bool) -> BinaryMask {
        let mut data = Vec::with_capacity(dims.count());
        for z in 0..dims.z {
            for y in 0..dims.y {
                for x in 0..dims.x {
                    data.push(f(x, y, z));
                }
            }
        }
        BinaryMask::from_data(dims, data).unwrap()
    }

    fn random_mask(dims: Dims, seed: u64, fill: f64) -> BinaryMask {
        let mut r = SplitMix64::new(seed);
        BinaryMask::from_data(dims, (0..dims.count()).map(|_| r.next_bool(fill)).collect())
            .unwrap()
    }

    #[test]
    fn perfect_prediction_scores_ones() {
        let m = random_mask(Dims::new(5, 5, 5), 1, 0.4);
        let o = overlap_metrics(&m, &m).unwrap();
        assert_eq!(o.dice, 1.0);
        assert_eq!(o.iou, 1.0);
        assert_eq!(o.acc, 1.0);
        assert_eq!(o.precision, 1.0);
        assert_eq!(o.sensitivity, 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let dims = Dims::new(4, 1, 1);
        let a = mask_from_fn(dims, |x, _, _| x < 2);
        let b = mask_from_fn(dims, |x, _, _| x >= 2);
        let o = overlap_metrics(&a, &b).unwrap();
        assert_eq!(o.dice, 0.0);
        assert_eq!(o.iou, 0.0);
    }

    #[test]
    fn hand_counted_overlap() {
        // two 8-voxel cubes overlapping in a 4-voxel slab
        let dims = Dims::new(3, 2, 2);
        let a = mask_from_fn(dims, |x, _, _| x < 2);
        let b = mask_from_fn(dims, |x, _, _| x >= 1);
        let o = overlap_metrics(&a, &b).unwrap();
        assert_eq!(o.dice, 0.5);
        assert!((o.iou - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_conventions() {
        let dims = Dims::new(3, 3, 3);
        let empty = mask_from_fn(dims, |_, _, _| false);
        let nonempty = mask_from_fn(dims, |x, y, z| x == 1 && y == 1 && z == 1);
        let both = overlap_metrics(&empty, &empty).unwrap();
        assert_eq!(both.dice, 1.0);
        assert_eq!(both.iou, 1.0);
        let one = overlap_metrics(&empty, &nonempty).unwrap();
        assert_eq!(one.dice, 0.0);
        assert_eq!(one.precision, 0.0);
        let other = overlap_metrics(&nonempty, &empty).unwrap();
        assert_eq!(other.dice, 0.0);
        assert_eq!(other.sensitivity, 0.0);
    }

    #[test]
    fn iou_dice_identity_on_random_pairs() {
        for seed in 0..10 {
            let dims = Dims::new(6, 5, 4);
            let a = random_mask(dims, 100 + seed, 0.4);
            let b = random_mask(dims, 200 + seed, 0.4);
            let o = overlap_metrics(&a, &b).unwrap();
            let expect = o.dice / (2.0 - o.dice);
            assert!((o.iou - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn counts_sum_to_total() {
        let dims = Dims::new(6, 5, 4);
        let a = random_mask(dims, 7, 0.3);
        let b = random_mask(dims, 8, 0.5);
        let c = confusion_counts(&a, &b).unwrap();
        assert_eq!(c.total(), dims.count());
    }

    #[test]
    fn single_voxel_is_its_own_surface() {
        let dims = Dims::new(5, 5, 5);
        let m = mask_from_fn(dims, |x, y, z| (x, y, z) == (2, 2, 2));
        let s = surface_points(&m, [1.0; 3]);
        assert_eq!(s.len(), 1);
        assert_eq!(s.points()[0].position, [2.0, 2.0, 2.0]);
    }

    #[test]
    fn solid_cube_surface_excludes_center() {
        let dims = Dims::new(3, 3, 3);
        let m = mask_from_fn(dims, |_, _, _| true);
        let s = surface_points(&m, [1.0; 3]);
        assert_eq!(s.len(), 26);
        assert!(!s.points().iter().any(|p| p.index == [1, 1, 1]));
    }

    #[test]
    fn empty_mask_has_empty_surface() {
        let m = mask_from_fn(Dims::new(3, 3, 3), |_, _, _| false);
        assert!(surface_points(&m, [1.0; 3]).is_empty());
    }

    #[test]
    fn hd95_identical_masks_is_zero() {
        let m = random_mask(Dims::new(6, 6, 6), 3, 0.35);
        assert_eq!(hd95(&m, &m, [1.0; 3]).unwrap(), 0.0);
        assert_eq!(asd(&m, &m, [1.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn two_single_voxels_three_apart() {
        let dims = Dims::new(8, 3, 3);
        let a = mask_from_fn(dims, |x, y, z| (x, y, z) == (1, 1, 1));
        let b = mask_from_fn(dims, |x, y, z| (x, y, z) == (4, 1, 1));
        assert_eq!(hd95(&a, &b, [1.0; 3]).unwrap(), 3.0);
        assert_eq!(asd(&a, &b, [1.0; 3]).unwrap(), 3.0);
    }

    #[test]
    fn cube_vs_dilation_is_one() {
        let dims = Dims::new(9, 9, 9);
        let in_cube =
            |x: usize, y: usize, z: usize| (3..6).contains(&x) && (3..6).contains(&y) && (3..6).contains(&z);
        let cube = mask_from_fn(dims, in_cube);
        // 6-neighborhood dilation: union of the cube shifted one step along
        // each axis direction
        let dilated = mask_from_fn(dims, |x, y, z| {
            if in_cube(x, y, z) {
                return true;
            }
            let shifts: [(isize, isize, isize); 6] = [
                (-1, 0, 0),
                (1, 0, 0),
                (0, -1, 0),
                (0, 1, 0),
                (0, 0, -1),
                (0, 0, 1),
            ];
            shifts.iter().any(|&(dx, dy, dz)| {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                let nz = z as isize + dz;
                nx >= 0 && ny >= 0 && nz >= 0 && in_cube(nx as usize, ny as usize, nz as usize)
            })
        });
        assert_eq!(hd95(&cube, &dilated, [1.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn empty_mask_is_reported() {
        let dims = Dims::new(4, 4, 4);
        let empty = mask_from_fn(dims, |_, _, _| false);
        let one = mask_from_fn(dims, |x, y, z| (x, y, z) == (1, 1, 1));
        assert!(matches!(
            hd95(&empty, &one, [1.0; 3]),
            Err(Error::EmptyMask(_))
        ));
        assert!(matches!(
            asd(&one, &empty, [1.0; 3]),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn surface_metrics_symmetric() {
        for seed in 0..5 {
            let dims = Dims::new(7, 6, 5);
            let a = random_mask(dims, 300 + seed, 0.3);
            let b = random_mask(dims, 400 + seed, 0.3);
            if a.count_true() == 0 || b.count_true() == 0 {
                continue;
            }
            assert_eq!(
                asd(&a, &b, [1.0; 3]).unwrap(),
                asd(&b, &a, [1.0; 3]).unwrap()
            );
            assert_eq!(
                hd95(&a, &b, [1.0; 3]).unwrap(),
                hd95(&b, &a, [1.0; 3]).unwrap()
            );
        }
    }

    #[test]
    fn distance_transform_matches_brute_force_unit_spacing() {
        for seed in 0..10 {
            let dims = Dims::new(9, 8, 7);
            let a = random_mask(dims, 500 + seed, 0.25);
            let b = random_mask(dims, 600 + seed, 0.25);
            let sa = surface_points(&a, [1.0; 3]);
            let sb = surface_points(&b, [1.0; 3]);
            if sa.is_empty() || sb.is_empty() {
                continue;
            }
            let brute = directed_nn_distances(&sa, &sb, NnMethod::BruteForce);
            let edt = directed_nn_distances(&sa, &sb, NnMethod::DistanceTransform);
            assert_eq!(brute, edt);
        }
    }

    #[test]
    fn distance_transform_matches_brute_force_anisotropic() {
        let spacing = [0.7, 1.3, 2.1];
        for seed in 0..5 {
            let dims = Dims::new(8, 7, 6);
            let a = random_mask(dims, 700 + seed, 0.3);
            let b = random_mask(dims, 800 + seed, 0.3);
            let sa = surface_points(&a, spacing);
            let sb = surface_points(&b, spacing);
            if sa.is_empty() || sb.is_empty() {
                continue;
            }
            let brute = directed_nn_distances(&sa, &sb, NnMethod::BruteForce);
            let edt = directed_nn_distances(&sa, &sb, NnMethod::DistanceTransform);
            for (x, y) in brute.iter().zip(&edt) {
                assert!((x - y).abs() <= 1e-12 * x.max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn hd95_matches_brute_force_oracle() {
        // independent oracle: all-pairs scan written from the definition
        fn oracle_hd95(pred: &BinaryMask, gt: &BinaryMask) -> Option<f64> {
            let ps = surface_points(pred, [1.0; 3]);
            let gs = surface_points(gt, [1.0; 3]);
            if ps.is_empty() || gs.is_empty() {
                return None;
            }
            let directed = |from: &SurfacePointSet, to: &SurfacePointSet| -> f64 {
                let mut dists: Vec<f64> = from
                    .points()
                    .iter()
                    .map(|p| {
                        to.points()
                            .iter()
                            .map(|q| {
                                let dx = p.position[0] - q.position[0];
                                let dy = p.position[1] - q.position[1];
                                let dz = p.position[2] - q.position[2];
                                (dx * dx + dy * dy + dz * dz).sqrt()
                            })
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let rank = (0.95 * dists.len() as f64).ceil() as usize;
                dists[rank.clamp(1, dists.len()) - 1]
            };
            Some(directed(&ps, &gs).max(directed(&gs, &ps)))
        }

        let mut checked = 0;
        for seed in 0..60 {
            let dims = Dims::new(
                4 + (seed % 9) as usize,
                4 + ((seed / 2) % 9) as usize,
                4 + ((seed / 3) % 9) as usize,
            );
            let a = random_mask(dims, 900 + seed, 0.2);
            let b = random_mask(dims, 1000 + seed, 0.2);
            if let Some(expect) = oracle_hd95(&a, &b) {
                let got = hd95(&a, &b, [1.0; 3]).unwrap();
                assert_eq!(got, expect, "seed {seed}");
                checked += 1;
            }
        }
        assert!(checked >= 50, "only {checked} informative pairs");
    }

    #[test]
    fn wilcoxon_five_positive_distinct() {
        let a = [2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 1.5, 2.0, 2.5, 3.0];
        let (stat, p) = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(stat, 15.0);
        assert_eq!(p, 2.0 / 32.0);
    }

    #[test]
    fn wilcoxon_identical_samples_undefined() {
        let a = [1.0, 2.0, 3.0];
        assert!(matches!(
            wilcoxon_signed_rank(&a, &a),
            Err(Error::UndefinedTest(_))
        ));
    }

    #[test]
    fn wilcoxon_swap_symmetry() {
        let mut r = SplitMix64::new(42);
        for _ in 0..10 {
            let n = 4 + r.range_u64(8) as usize;
            let a: Vec<f64> = (0..n).map(|_| r.next_f64()).collect();
            let b: Vec<f64> = (0..n).map(|_| r.next_f64()).collect();
            let (s_ab, p_ab) = wilcoxon_signed_rank(&a, &b).unwrap();
            let (s_ba, p_ba) = wilcoxon_signed_rank(&b, &a).unwrap();
            assert_eq!(p_ab, p_ba);
            assert_eq!(s_ab, -s_ba);
        }
    }

    #[test]
    fn wilcoxon_exact_matches_full_enumeration() {
        // oracle: enumerate all 2^n sign assignments directly
        fn oracle(a: &[f64], b: &[f64]) -> f64 {
            let diffs: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| x - y)
                .filter(|d| *d != 0.0)
                .collect();
            let n = diffs.len();
            let mut abs_sorted: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
            abs_sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let rank_of = |v: f64| -> f64 {
                let lo = abs_sorted.partition_point(|&x| x < v);
                let hi = abs_sorted.partition_point(|&x| x <= v);
                ((lo + 1) + hi) as f64 / 2.0
            };
            let w_obs: f64 = diffs
                .iter()
                .filter(|d| **d > 0.0)
                .map(|d| rank_of(d.abs()))
                .sum();
            let mut at_or_below = 0u64;
            let mut at_or_above = 0u64;
            for bits in 0..(1u64 << n) {
                let mut w = 0.0;
                for (i, d) in diffs.iter().enumerate() {
                    if bits >> i & 1 == 1 {
                        w += rank_of(d.abs());
                    }
                }
                if w <= w_obs + 1e-9 {
                    at_or_below += 1;
                }
                if w >= w_obs - 1e-9 {
                    at_or_above += 1;
                }
            }
            let total = (1u64 << n) as f64;
            (2.0 * (at_or_below as f64 / total).min(at_or_above as f64 / total)).min(1.0)
        }

        let mut r = SplitMix64::new(11);
        let mut informative = 0;
        for trial in 0..30 {
            let n = 3 + (trial % 8) as usize;
            // quantized values make ties common
            let a: Vec<f64> = (0..n).map(|_| (r.range_u64(6)) as f64 * 0.5).collect();
            let b: Vec<f64> = (0..n).map(|_| (r.range_u64(6)) as f64 * 0.5).collect();
            match wilcoxon_signed_rank(&a, &b) {
                Ok((_, p)) => {
                    let expect = oracle(&a, &b);
                    assert!((p - expect).abs() < 1e-12, "trial {trial}: {p} vs {expect}");
                    informative += 1;
                }
                Err(Error::UndefinedTest(_)) => {
                    assert!(a.iter().zip(&b).all(|(x, y)| x == y));
                }
                Err(e) => panic!("unexpected error {e:?}"),
            }
        }
        assert!(informative >= 20);
    }

    #[test]
    fn wilcoxon_normal_path_reasonable() {
        let mut r = SplitMix64::new(99);
        let n = 40;
        let a: Vec<f64> = (0..n).map(|_| r.next_f64()).collect();
        let b: Vec<f64> = a.iter().map(|&x| x + 0.3 * (r.next_f64() - 0.3)).collect();
        let (_, p) = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(p > 0.0 && p <= 1.0);
        let (_, p_swap) = wilcoxon_signed_rank(&b, &a).unwrap();
        assert!((p - p_swap).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_length_mismatch() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
        let empty: [f64; 0] = [];
        assert!(wilcoxon_signed_rank(&empty, &empty).is_err());
    }
}
