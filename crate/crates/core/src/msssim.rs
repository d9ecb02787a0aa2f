//! Multi-scale structural-similarity loss with a squared-cross-correlation
//! augmentation, and its analytic gradient with respect to the first
//! argument.
//!
//! Per pyramid scale `j` the windowed statistics (Gaussian means, variances
//! and covariance) produce luminance/contrast/structure comparison maps
//!
//! ```text
//! l = (2 mx my + C1) / (mx^2 + my^2 + C1)
//! c = (2 sx sy + C2) / (sx^2 + sy^2 + C2)
//! s = (cov + C3)     / (sx sy + C3)
//! ```
//!
//! whose spatial means give scalars `c_j`, `s_j` (and `l` at the coarsest
//! scale), plus a global squared cross-correlation `SCC_j` of the two
//! scale-`j` volumes. The loss is
//!
//! ```text
//! 1 - [l_M]^alpha * prod_j [c_j + SCC_j]^beta_j * [s_j]^gamma_j
//! ```
//!
//! so identical inputs score -1 (every base is 1 except the contrast base,
//! which reaches 2). A variant switch moves the SCC term onto the structure
//! base, or removes it entirely (plain MS-SSIM), for ablations.
//!
//! The requested scale count is reduced automatically when the volume is
//! too small for the filtering window: each downsampling halves dims, and
//! a level whose next halving would drop below the window extent becomes
//! the coarsest. The achieved count is reported with every loss value, and
//! the leading achieved exponents are renormalized to unit sum.
//!
//! The gradient is an exact reverse sweep over this computation: per-voxel
//! adjoints through the comparison maps, adjoint Gaussian filtering back to
//! each scale, the SCC quotient rule, and mean-pool adjoints down the
//! pyramid. Exactness is enforced by finite-difference tests.

use crate::error::{Error, Result};
use crate::multiscale::{
    build_pyramid, convolve_separable, convolve_separable_adjoint, downsample2_adjoint,
    gaussian_kernel, GaussianKernel1D,
};
use crate::volume::{Dims, Volume};

/// Where the squared cross-correlation enters the per-scale product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SccVariant {
    /// Added to the contrast base: `[c_j + SCC_j]^beta_j [s_j]^gamma_j`.
    Contrast,
    /// Added to the structure base: `[c_j]^beta_j [s_j + SCC_j]^gamma_j`.
    Structure,
    /// Plain MS-SSIM, no SCC term.
    None,
}

impl SccVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SccVariant::Contrast => "msssim_cscc",
            SccVariant::Structure => "msssim_scc",
            SccVariant::None => "msssim",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "msssim_cscc" | "cscc" | "contrast" => Some(SccVariant::Contrast),
            "msssim_scc" | "scc" | "structure" => Some(SccVariant::Structure),
            "msssim" | "none" | "plain" => Some(SccVariant::None),
            _ => None,
        }
    }
}

/// Parameters of the multi-scale loss.
///
/// `beta` must sum to one; when fewer scales are achieved than requested,
/// the leading exponents are renormalized and the luminance exponent
/// becomes the renormalized coarsest contrast exponent.
#[derive(Debug, Clone)]
pub struct SsimParams {
    /// Requested scale count M.
    pub scales: usize,
    /// Luminance exponent at the coarsest scale (used as-is when all M
    /// scales are achieved).
    pub alpha_m: f64,
    /// Contrast exponents, one per scale.
    pub beta: Vec<f64>,
    /// Structure exponents, one per scale.
    pub gamma: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub window: GaussianKernel1D,
    /// Clamp applied to every exponentiation base.
    pub power_floor: f64,
    pub variant: SccVariant,
}

impl SsimParams {
    /// Validates the invariants: positive exponents, unit-sum `beta`,
    /// positive stabilizers, `power_floor` in (0, 1e-3].
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.beta.len() != self.scales || self.gamma.len() != self.scales {
            return Err(Error::InvalidArgument(format!(
                "need {} beta and gamma exponents, got {} and {}",
                self.scales,
                self.beta.len(),
                self.gamma.len()
            )));
        }
        if self.beta.iter().any(|&b| b <= 0.0) || self.gamma.iter().any(|&g| g <= 0.0) {
            return Err(Error::InvalidArgument(
                "scale exponents must be positive".into(),
            ));
        }
        let beta_sum: f64 = self.beta.iter().sum();
        if (beta_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "beta must sum to 1, got {beta_sum}"
            )));
        }
        if self.c1 <= 0.0 || self.c2 <= 0.0 || self.c3 <= 0.0 {
            return Err(Error::InvalidArgument(
                "stabilizers C1, C2, C3 must be positive".into(),
            ));
        }
        if !(self.power_floor > 0.0 && self.power_floor <= 1e-3) {
            return Err(Error::InvalidArgument(format!(
                "power_floor must lie in (0, 1e-3], got {}",
                self.power_floor
            )));
        }
        Ok(())
    }

    /// Standard five-scale parameters: exponents (0.0448, 0.2856, 0.3001,
    /// 0.2363, 0.1333) normalized to unit sum, `alpha = beta[4]`, Gaussian
    /// window sigma 1.5 / radius 5, stabilizers for dynamic range 1.
    pub fn default_five() -> Self {
        Self::with_variant(SccVariant::Contrast)
    }

    pub fn with_variant(variant: SccVariant) -> Self {
        const RAW: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
        let sum: f64 = RAW.iter().sum();
        let beta: Vec<f64> = RAW.iter().map(|b| b / sum).collect();
        let params = Self {
            scales: 5,
            alpha_m: beta[4],
            beta: beta.clone(),
            gamma: beta,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
            c3: 0.03 * 0.03 / 2.0,
            window: gaussian_kernel(1.5, 5).expect("default window is valid"),
            power_floor: 1e-6,
            variant,
        };
        debug_assert!(params.validate().is_ok());
        params
    }
}

fn check_dims(x: &Volume, y: &Volume) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::DimMismatch {
            left: x.dims().as_tuple(),
            right: y.dims().as_tuple(),
        });
    }
    Ok(())
}

fn elementwise_product(a: &Volume, b: &Volume) -> Volume {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Volume::from_computed(a.dims(), a.spacing(), data)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Guarded square root for variances that may round slightly negative.
#[inline]
fn sigma_from_var(var: f64) -> f64 {
    var.max(0.0).sqrt()
}

/// Per-voxel comparison maps from windowed statistics.
pub struct SsimComponents {
    pub l_map: Volume,
    pub c_map: Volume,
    pub s_map: Volume,
}

/// Computes the luminance, contrast and structure maps of two equal-dim
/// volumes under the parameter window.
pub fn ssim_components(x: &Volume, y: &Volume, p: &SsimParams) -> Result<SsimComponents> {
    check_dims(x, y)?;
    let k = &p.window;
    let mu_x = convolve_separable(x, k);
    let mu_y = convolve_separable(y, k);
    let ex2 = convolve_separable(&elementwise_product(x, x), k);
    let ey2 = convolve_separable(&elementwise_product(y, y), k);
    let exy = convolve_separable(&elementwise_product(x, y), k);

    let n = x.len();
    let mut l = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let mx = mu_x.data()[i];
        let my = mu_y.data()[i];
        let vx = ex2.data()[i] - mx * mx;
        let vy = ey2.data()[i] - my * my;
        let cov = exy.data()[i] - mx * my;
        let sx = sigma_from_var(vx);
        let sy = sigma_from_var(vy);
        l.push((2.0 * mx * my + p.c1) / (mx * mx + my * my + p.c1));
        c.push((2.0 * sx * sy + p.c2) / (vx + vy + p.c2));
        s.push((cov + p.c3) / (sx * sy + p.c3));
    }
    let dims = x.dims();
    let sp = x.spacing();
    Ok(SsimComponents {
        l_map: Volume::from_computed(dims, sp, l),
        c_map: Volume::from_computed(dims, sp, c),
        s_map: Volume::from_computed(dims, sp, s),
    })
}

const SCC_DEGENERATE: f64 = 1e-12;

/// Squared Pearson correlation of two equal-dim volumes. Returns 0 when
/// either centered sum of squares is below 1e-12.
pub fn scc(x: &Volume, y: &Volume) -> Result<f64> {
    check_dims(x, y)?;
    let xbar = mean(x.data());
    let ybar = mean(y.data());
    let mut cov = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.data().iter().zip(y.data()) {
        let u = xi - xbar;
        let w = yi - ybar;
        cov += u * w;
        sxx += u * u;
        syy += w * w;
    }
    if sxx < SCC_DEGENERATE || syy < SCC_DEGENERATE {
        return Ok(0.0);
    }
    Ok(cov * cov / (sxx * syy))
}

/// Reference-side quantities cached per pyramid level so repeated
/// evaluations against one target volume skip recomputing them.
struct LevelReference {
    y: Volume,
    mu_y: Volume,
    var_y: Vec<f64>,
    /// centered reference values and their sum of squares, for SCC
    w: Vec<f64>,
    syy: f64,
}

/// A prepared comparison target: its pyramid and per-level windowed
/// statistics. Achieved scale count is fixed by the dims and the window.
pub struct Reference {
    levels: Vec<LevelReference>,
}

impl Reference {
    pub fn achieved_scales(&self) -> usize {
        self.levels.len()
    }

    pub fn dims(&self) -> Dims {
        self.levels[0].y.dims()
    }
}

/// Builds the reference pyramid and caches its windowed statistics.
pub fn prepare_reference(y: &Volume, p: &SsimParams) -> Result<Reference> {
    p.validate()?;
    let pyramid = build_pyramid(y, p.scales, p.window.extent())?;
    let levels = pyramid
        .into_iter()
        .map(|level| {
            let mu_y = convolve_separable(&level, &p.window);
            let ey2 = convolve_separable(&elementwise_product(&level, &level), &p.window);
            let var_y = ey2
                .data()
                .iter()
                .zip(mu_y.data())
                .map(|(&e, &m)| e - m * m)
                .collect();
            let ybar = mean(level.data());
            let w: Vec<f64> = level.data().iter().map(|&v| v - ybar).collect();
            let syy = w.iter().map(|&v| v * v).sum();
            LevelReference {
                y: level,
                mu_y,
                var_y,
                w,
                syy,
            }
        })
        .collect();
    Ok(Reference { levels })
}

/// Result of one loss evaluation.
pub struct Evaluation {
    pub loss: f64,
    pub achieved_m: usize,
    pub grad: Option<Volume>,
}

/// Renormalized exponents for the achieved scale count.
fn effective_exponents(p: &SsimParams, m: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let beta_sum: f64 = p.beta[..m].iter().sum();
    let gamma_sum: f64 = p.gamma[..m].iter().sum();
    let betas: Vec<f64> = p.beta[..m].iter().map(|b| b / beta_sum).collect();
    let gammas: Vec<f64> = p.gamma[..m].iter().map(|g| g / gamma_sum).collect();
    let alpha = if m == p.scales {
        p.alpha_m
    } else {
        betas[m - 1]
    };
    (betas, gammas, alpha)
}

/// Forward (and optionally reverse) sweep of the multi-scale loss of `x`
/// against a prepared reference.
pub fn evaluate(x: &Volume, reference: &Reference, p: &SsimParams, with_grad: bool) -> Result<Evaluation> {
    if x.dims() != reference.dims() {
        return Err(Error::DimMismatch {
            left: x.dims().as_tuple(),
            right: reference.dims().as_tuple(),
        });
    }
    let m = reference.achieved_scales();
    let (betas, gammas, alpha) = effective_exponents(p, m);
    let k = &p.window;

    // x-side pyramid and windowed statistics per level
    let pyramid_x = build_pyramid(x, p.scales, k.extent())?;
    debug_assert_eq!(pyramid_x.len(), m);

    struct LevelForward {
        x: Volume,
        mu_x: Volume,
        ex2: Volume,
        exy: Volume,
        c_mean: f64,
        s_mean: f64,
        l_mean: f64,
        scc_val: f64,
        // SCC internals for the reverse sweep
        scc_cov: f64,
        scc_sxx: f64,
        u: Vec<f64>,
    }

    let mut fwd: Vec<LevelForward> = Vec::with_capacity(m);
    for (j, xj) in pyramid_x.into_iter().enumerate() {
        let level_ref = &reference.levels[j];
        let mu_x = convolve_separable(&xj, k);
        let ex2 = convolve_separable(&elementwise_product(&xj, &xj), k);
        let exy = convolve_separable(&elementwise_product(&xj, &level_ref.y), k);
        let n = xj.len();
        let mut c_sum = 0.0;
        let mut s_sum = 0.0;
        let mut l_sum = 0.0;
        for i in 0..n {
            let mx = mu_x.data()[i];
            let my = level_ref.mu_y.data()[i];
            let vx = ex2.data()[i] - mx * mx;
            let vy = level_ref.var_y[i];
            let cov = exy.data()[i] - mx * my;
            let sx = sigma_from_var(vx);
            let sy = sigma_from_var(vy);
            c_sum += (2.0 * sx * sy + p.c2) / (vx + vy + p.c2);
            s_sum += (cov + p.c3) / (sx * sy + p.c3);
            if j == m - 1 {
                l_sum += (2.0 * mx * my + p.c1) / (mx * mx + my * my + p.c1);
            }
        }
        // SCC of this level (skipped entirely for the plain variant)
        let (scc_val, scc_cov, scc_sxx, u) = if p.variant == SccVariant::None {
            (0.0, 0.0, 0.0, Vec::new())
        } else {
            let xbar = mean(xj.data());
            let u: Vec<f64> = xj.data().iter().map(|&v| v - xbar).collect();
            let mut cov = 0.0;
            let mut sxx = 0.0;
            for (ui, wi) in u.iter().zip(&level_ref.w) {
                cov += ui * wi;
                sxx += ui * ui;
            }
            let val = if sxx < SCC_DEGENERATE || level_ref.syy < SCC_DEGENERATE {
                0.0
            } else {
                cov * cov / (sxx * level_ref.syy)
            };
            (val, cov, sxx, u)
        };
        fwd.push(LevelForward {
            x: xj,
            mu_x,
            ex2,
            exy,
            c_mean: c_sum / n as f64,
            s_mean: s_sum / n as f64,
            l_mean: l_sum / n as f64,
            scc_val,
            scc_cov,
            scc_sxx,
            u,
        });
    }

    // scalar combination
    let floor = p.power_floor;
    let mut bases_c = Vec::with_capacity(m);
    let mut bases_s = Vec::with_capacity(m);
    for f in &fwd {
        let (raw_c, raw_s) = match p.variant {
            SccVariant::Contrast => (f.c_mean + f.scc_val, f.s_mean),
            SccVariant::Structure => (f.c_mean, f.s_mean + f.scc_val),
            SccVariant::None => (f.c_mean, f.s_mean),
        };
        bases_c.push(raw_c);
        bases_s.push(raw_s);
    }
    let base_l = fwd[m - 1].l_mean;
    let mut product = base_l.max(floor).powf(alpha);
    for j in 0..m {
        product *= bases_c[j].max(floor).powf(betas[j]);
        product *= bases_s[j].max(floor).powf(gammas[j]);
    }
    let loss = 1.0 - product;

    if !with_grad {
        return Ok(Evaluation {
            loss,
            achieved_m: m,
            grad: None,
        });
    }

    // reverse sweep: d loss / d base = -exponent * product / clamped_base,
    // zero where the floor clamp is active
    let d_base = |raw: f64, exponent: f64| {
        if raw > floor {
            -exponent * product / raw
        } else {
            0.0
        }
    };
    let d_l_mean = d_base(base_l, alpha);
    let d_bases_c: Vec<f64> = (0..m).map(|j| d_base(bases_c[j], betas[j])).collect();
    let d_bases_s: Vec<f64> = (0..m).map(|j| d_base(bases_s[j], gammas[j])).collect();

    // gradient at each pyramid level, then pooled back to the finest level
    let mut acc: Option<Volume> = None;
    for j in (0..m).rev() {
        let f = &fwd[j];
        let level_ref = &reference.levels[j];
        let n = f.x.len();
        let inv_n = 1.0 / n as f64;
        let (d_c_mean, d_s_mean, d_scc) = match p.variant {
            SccVariant::Contrast => (d_bases_c[j], d_bases_s[j], d_bases_c[j]),
            SccVariant::Structure => (d_bases_c[j], d_bases_s[j], d_bases_s[j]),
            SccVariant::None => (d_bases_c[j], d_bases_s[j], 0.0),
        };
        let g_c = d_c_mean * inv_n;
        let g_s = d_s_mean * inv_n;
        let g_l = if j == m - 1 { d_l_mean * inv_n } else { 0.0 };

        // per-voxel adjoints into the windowed statistics
        let mut g_mu = vec![0.0; n];
        let mut g_ex2 = vec![0.0; n];
        let mut g_exy = vec![0.0; n];
        for i in 0..n {
            let mx = f.mu_x.data()[i];
            let my = level_ref.mu_y.data()[i];
            let vx = f.ex2.data()[i] - mx * mx;
            let vy = level_ref.var_y[i];
            let cov = f.exy.data()[i] - mx * my;
            let sx = sigma_from_var(vx).max(1e-150);
            let sy = sigma_from_var(vy);
            let denom_c = vx + vy + p.c2;
            let denom_s = sx * sy + p.c3;

            // contrast: dc/dvx = (sy/sx * denom_c - (2 sx sy + C2)) / denom_c^2
            let dc_dvx = (sy / sx * denom_c - (2.0 * sx * sy + p.c2)) / (denom_c * denom_c);
            // structure: ds/dcov and ds/dvx via d(sx)/d(vx) = 1/(2 sx)
            let ds_dcov = 1.0 / denom_s;
            let ds_dvx = -(cov + p.c3) * sy / (2.0 * sx * denom_s * denom_s);

            let g_vx = g_c * dc_dvx + g_s * ds_dvx;
            let g_cov = g_s * ds_dcov;
            let mut g_mx = 0.0;
            if g_l != 0.0 {
                let denom_l = mx * mx + my * my + p.c1;
                let dl_dmx = (2.0 * my * denom_l - (2.0 * mx * my + p.c1) * 2.0 * mx)
                    / (denom_l * denom_l);
                g_mx += g_l * dl_dmx;
            }
            // vx = ex2 - mx^2, cov = exy - mx my
            g_ex2[i] = g_vx;
            g_exy[i] = g_cov;
            g_mx += -2.0 * mx * g_vx - my * g_cov;
            g_mu[i] = g_mx;
        }

        let dims_j = f.x.dims();
        let sp_j = f.x.spacing();
        let adj_mu = convolve_separable_adjoint(&Volume::from_computed(dims_j, sp_j, g_mu), k);
        let adj_ex2 = convolve_separable_adjoint(&Volume::from_computed(dims_j, sp_j, g_ex2), k);
        let adj_exy = convolve_separable_adjoint(&Volume::from_computed(dims_j, sp_j, g_exy), k);

        let mut level_grad = vec![0.0; n];
        for i in 0..n {
            level_grad[i] = adj_mu.data()[i]
                + 2.0 * f.x.data()[i] * adj_ex2.data()[i]
                + level_ref.y.data()[i] * adj_exy.data()[i];
        }

        // SCC quotient rule, active only when the level was non-degenerate
        if d_scc != 0.0 && f.scc_sxx >= SCC_DEGENERATE && level_ref.syy >= SCC_DEGENERATE {
            let cov = f.scc_cov;
            let sxx = f.scc_sxx;
            let syy = level_ref.syy;
            let factor = 2.0 * cov / (sxx * syy);
            for i in 0..n {
                level_grad[i] +=
                    d_scc * factor * (level_ref.w[i] - cov / sxx * f.u[i]);
            }
        }

        let level_grad = Volume::from_computed(dims_j, sp_j, level_grad);
        acc = Some(match acc {
            None => level_grad,
            Some(coarser) => {
                let pooled = downsample2_adjoint(&coarser, dims_j, sp_j);
                let data = level_grad
                    .data()
                    .iter()
                    .zip(pooled.data())
                    .map(|(&a, &b)| a + b)
                    .collect();
                Volume::from_computed(dims_j, sp_j, data)
            }
        });
    }

    Ok(Evaluation {
        loss,
        achieved_m: m,
        grad: acc,
    })
}

/// Loss of `(x, y)` and the achieved scale count.
pub fn msssim_cscc_loss(x: &Volume, y: &Volume, p: &SsimParams) -> Result<(f64, usize)> {
    check_dims(x, y)?;
    let reference = prepare_reference(y, p)?;
    let eval = evaluate(x, &reference, p, false)?;
    Ok((eval.loss, eval.achieved_m))
}

/// Gradient of [`msssim_cscc_loss`] with respect to `x`.
pub fn msssim_cscc_grad(x: &Volume, y: &Volume, p: &SsimParams) -> Result<Volume> {
    check_dims(x, y)?;
    let reference = prepare_reference(y, p)?;
    let eval = evaluate(x, &reference, p, true)?;
    Ok(eval.grad.expect("gradient requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::volume::hadamard;

    fn random_volume(dims: Dims, seed: u64) -> Volume {
        let mut r = SplitMix64::new(seed);
        Volume::from_data(dims, (0..dims.count()).map(|_| r.next_f64()).collect()).unwrap()
    }

    fn small_params() -> SsimParams {
        // radius-2 window keeps small-volume tests cheap while exercising
        // the same code paths
        let mut p = SsimParams::default_five();
        p.window = gaussian_kernel(1.5, 2).unwrap();
        p
    }

    #[test]
    fn components_self_similarity() {
        let p = small_params();
        let x = random_volume(Dims::new(8, 8, 8), 1);
        let comps = ssim_components(&x, &x, &p).unwrap();
        for i in 0..x.len() {
            assert!((comps.l_map.data()[i] - 1.0).abs() < 1e-9);
            assert!((comps.c_map.data()[i] - 1.0).abs() < 1e-9);
            assert!((comps.s_map.data()[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn components_mean_shift_only_lowers_luminance() {
        let p = small_params();
        let x = random_volume(Dims::new(8, 8, 8), 2);
        let y = Volume::from_data(x.dims(), x.data().iter().map(|&v| v + 0.5).collect()).unwrap();
        let comps = ssim_components(&x, &y, &p).unwrap();
        for i in 0..x.len() {
            assert!((comps.c_map.data()[i] - 1.0).abs() < 1e-9);
            assert!((comps.s_map.data()[i] - 1.0).abs() < 1e-9);
            assert!(comps.l_map.data()[i] < 1.0);
        }
    }

    #[test]
    fn components_equal_constants_are_one() {
        let p = small_params();
        let x = Volume::constant(Dims::new(6, 6, 6), 0.4);
        let comps = ssim_components(&x, &x.clone(), &p).unwrap();
        for i in 0..x.len() {
            assert_eq!(comps.l_map.data()[i], 1.0);
            assert_eq!(comps.c_map.data()[i], 1.0);
            assert_eq!(comps.s_map.data()[i], 1.0);
        }
    }

    #[test]
    fn components_ranges_on_random_inputs() {
        let p = small_params();
        for seed in 0..3 {
            let x = random_volume(Dims::new(7, 6, 5), 10 + seed);
            let y = random_volume(Dims::new(7, 6, 5), 20 + seed);
            let comps = ssim_components(&x, &y, &p).unwrap();
            for i in 0..x.len() {
                let tol = 1e-12;
                assert!(comps.l_map.data()[i].abs() <= 1.0 + tol);
                assert!(comps.c_map.data()[i].abs() <= 1.0 + tol);
                assert!(comps.s_map.data()[i].abs() <= 1.0 + tol);
            }
        }
    }

    #[test]
    fn scc_perfect_correlation() {
        let x = random_volume(Dims::new(5, 5, 5), 3);
        assert_eq!(scc(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn scc_affine_invariance() {
        let x = random_volume(Dims::new(5, 5, 5), 4);
        let y = Volume::from_data(x.dims(), x.data().iter().map(|&v| 2.0 * v + 3.0).collect())
            .unwrap();
        assert!((scc(&y, &x).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scc_zero_covariance() {
        let x = Volume::from_data(Dims::new(4, 1, 1), vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let y = Volume::from_data(Dims::new(4, 1, 1), vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        assert_eq!(scc(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn scc_constant_side_degenerates_to_zero() {
        let x = Volume::constant(Dims::new(3, 3, 3), 0.5);
        let y = random_volume(Dims::new(3, 3, 3), 5);
        assert_eq!(scc(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn scc_range_and_symmetry() {
        for seed in 0..5 {
            let x = random_volume(Dims::new(6, 5, 4), 30 + seed);
            let y = random_volume(Dims::new(6, 5, 4), 40 + seed);
            let v = scc(&x, &y).unwrap();
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, scc(&y, &x).unwrap());
        }
    }

    #[test]
    fn loss_self_similarity_is_minus_one() {
        let p = SsimParams::default_five();
        let x = random_volume(Dims::new(16, 16, 16), 6);
        let (loss, achieved) = msssim_cscc_loss(&x, &x, &p).unwrap();
        assert_eq!(achieved, 1); // 16 -> 8 < 11
        assert!((loss + 1.0).abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn loss_achieved_scales_from_dims() {
        let p = SsimParams::default_five();
        let x = random_volume(Dims::new(32, 32, 32), 7);
        let (_, achieved) = msssim_cscc_loss(&x, &x, &p).unwrap();
        assert_eq!(achieved, 2);
    }

    #[test]
    fn loss_reduces_to_self_similarity_through_hadamard() {
        let p = small_params();
        let rho = random_volume(Dims::new(10, 10, 10), 8);
        let ones = Volume::constant(rho.dims(), 1.0);
        let x = hadamard(&rho, &ones).unwrap();
        let (loss, _) = msssim_cscc_loss(&x, &rho, &p).unwrap();
        assert!((loss + 1.0).abs() < 1e-6);
    }

    #[test]
    fn noise_increases_loss() {
        let p = small_params();
        let x = random_volume(Dims::new(10, 10, 10), 9);
        let mut r = SplitMix64::new(99);
        let noisy = Volume::from_data(
            x.dims(),
            x.data()
                .iter()
                .map(|&v| v + 0.1 * (2.0 * r.next_f64() - 1.0))
                .collect(),
        )
        .unwrap();
        let (l_self, _) = msssim_cscc_loss(&x, &x, &p).unwrap();
        let (l_noisy, _) = msssim_cscc_loss(&x, &noisy, &p).unwrap();
        assert!(l_self < l_noisy);
    }

    #[test]
    fn loss_is_symmetric_bitwise() {
        let p = small_params();
        let x = random_volume(Dims::new(9, 8, 7), 11);
        let y = random_volume(Dims::new(9, 8, 7), 12);
        let (lxy, _) = msssim_cscc_loss(&x, &y, &p).unwrap();
        let (lyx, _) = msssim_cscc_loss(&y, &x, &p).unwrap();
        assert!((lxy - lyx).abs() < 1e-9);
    }

    #[test]
    fn gradient_stationary_at_self_similarity() {
        let p = small_params();
        let x = random_volume(Dims::new(8, 8, 8), 13);
        let g = msssim_cscc_grad(&x, &x, &p).unwrap();
        let max = g.data().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max <= 1e-6, "max-norm {max}");
    }

    fn fd_check(variant: SccVariant, seed: u64) {
        let mut p = small_params();
        p.variant = variant;
        let dims = Dims::new(8, 8, 8);
        let x = random_volume(dims, seed);
        let y = random_volume(dims, seed + 1000);
        let g = msssim_cscc_grad(&x, &y, &p).unwrap();
        let h = 1e-4;
        let mut probe = SplitMix64::new(seed ^ 0x5A5A);
        for _ in 0..20 {
            let i = probe.range_u64(dims.count() as u64) as usize;
            let mut plus = x.data().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let (fp, _) =
                msssim_cscc_loss(&Volume::from_data(dims, plus).unwrap(), &y, &p).unwrap();
            let (fm, _) =
                msssim_cscc_loss(&Volume::from_data(dims, minus).unwrap(), &y, &p).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            // denominator floor 1e-6: below that the central difference's
            // own rounding noise (~1e-12 at h = 1e-4 on an O(1) loss)
            // dominates and only absolute agreement is meaningful
            let rel = (g.data()[i] - fd).abs() / fd.abs().max(1e-6);
            assert!(
                rel <= 1e-5,
                "{:?} voxel {i}: analytic {} vs fd {fd} (rel {rel})",
                variant,
                g.data()[i]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_all_variants() {
        for seed in 0..3 {
            fd_check(SccVariant::Contrast, 50 + seed);
            fd_check(SccVariant::Structure, 60 + seed);
            fd_check(SccVariant::None, 70 + seed);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_two_scales() {
        // dims large enough for a second pyramid level with the radius-2
        // window (extent 5): 12 -> 6 >= 5
        let p = small_params();
        let dims = Dims::new(12, 12, 12);
        let x = random_volume(dims, 80);
        let y = random_volume(dims, 81);
        let reference = prepare_reference(&y, &p).unwrap();
        assert_eq!(reference.achieved_scales(), 2);
        let g = msssim_cscc_grad(&x, &y, &p).unwrap();
        let h = 1e-4;
        let mut probe = SplitMix64::new(82);
        for _ in 0..20 {
            let i = probe.range_u64(dims.count() as u64) as usize;
            let mut plus = x.data().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let (fp, _) =
                msssim_cscc_loss(&Volume::from_data(dims, plus).unwrap(), &y, &p).unwrap();
            let (fm, _) =
                msssim_cscc_loss(&Volume::from_data(dims, minus).unwrap(), &y, &p).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let rel = (g.data()[i] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel <= 1e-5, "voxel {i}: {} vs {fd}", g.data()[i]);
        }
    }

    #[test]
    fn gradient_support_concentrates_near_modified_voxel() {
        let p = SsimParams::default_five(); // radius 5 window, one scale at these dims
        let dims = Dims::new(40, 12, 12);
        let x = random_volume(dims, 90);
        let mut y_data = x.data().to_vec();
        let hot = dims.idx(5, 6, 6);
        y_data[hot] += 0.4;
        let y = Volume::from_data(dims, y_data).unwrap();
        let g = msssim_cscc_grad(&x, &y, &p).unwrap();
        let mut inside_max = 0.0f64;
        let mut outside_max = 0.0f64;
        for z in 0..12 {
            for yy in 0..12 {
                for xx in 0..40 {
                    let v = g.get(xx, yy, z).abs();
                    // window radius 5 plus margin around the modified x = 5
                    if (xx as isize - 5).abs() <= 11 {
                        inside_max = inside_max.max(v);
                    } else {
                        outside_max = outside_max.max(v);
                    }
                }
            }
        }
        assert!(inside_max > 0.0);
        assert!(
            outside_max <= 1e-3 * inside_max + 1e-12,
            "outside {outside_max} inside {inside_max}"
        );
    }

    #[test]
    fn rejects_dim_mismatch() {
        let p = small_params();
        let x = random_volume(Dims::new(6, 6, 6), 14);
        let y = random_volume(Dims::new(6, 6, 5), 15);
        assert!(msssim_cscc_loss(&x, &y, &p).is_err());
        assert!(msssim_cscc_grad(&x, &y, &p).is_err());
        assert!(ssim_components(&x, &y, &p).is_err());
        assert!(scc(&x, &y).is_err());
    }

    #[test]
    fn params_validation() {
        let mut p = SsimParams::default_five();
        assert!(p.validate().is_ok());
        p.beta[0] += 0.1;
        assert!(p.validate().is_err());
        let mut p = SsimParams::default_five();
        p.power_floor = 0.0;
        assert!(p.validate().is_err());
        let mut p = SsimParams::default_five();
        p.c2 = 0.0;
        assert!(p.validate().is_err());
    }
}
