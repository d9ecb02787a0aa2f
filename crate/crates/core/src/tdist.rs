//! Student-t negative log-likelihood over voxel residuals, with learnable
//! degrees of freedom and diagonal scale, plus the baseline losses it is
//! ablated against.
//!
//! The degrees of freedom `r` and the scales `sigma_i^2` are carried as
//! unconstrained raw parameters and mapped through
//! `softplus(raw) + SAFEGUARD_EPS`, so both stay strictly positive for any
//! raw value, including extreme ones where softplus underflows to zero.
//!
//! Two reductions are supported:
//!
//! - `PerVoxel`: each voxel is a 1-dimensional t-distributed sample; the
//!   loss is the mean single-voxel NLL. This is the default: it keeps the
//!   heavy-tail behaviour per residual instead of washing it out in one
//!   enormous joint exponent.
//! - `Joint`: the whole volume is one D'-dimensional sample, with D' equal
//!   to the voxel count.
//!
//! All gamma-function evaluations go through `ln_gamma`.

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Volume};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;

/// Safeguard added to every softplus output.
pub const SAFEGUARD_EPS: f64 = 1e-8;

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] (no safeguard), `ln(e^y - 1)`, stable across the
/// full range: the large-argument branch avoids overflowing `e^y`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 20.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reduction mode of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdistMode {
    /// Mean single-voxel NLL (D' = 1 per voxel).
    PerVoxel,
    /// One joint sample with D' = voxel count.
    Joint,
}

/// Raw scale parameter: one shared value or a per-voxel field.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleParam {
    Shared(f64),
    PerVoxel(Vec<f64>),
}

impl ScaleParam {
    #[inline]
    fn raw_at(&self, i: usize) -> f64 {
        match self {
            ScaleParam::Shared(s) => *s,
            ScaleParam::PerVoxel(v) => v[i],
        }
    }
}

/// Learnable t-distribution parameters in raw (unconstrained) form.
#[derive(Debug, Clone, PartialEq)]
pub struct TDistParams {
    pub rho_r: f64,
    pub s: ScaleParam,
    pub mode: TdistMode,
}

impl TDistParams {
    /// Raw parameters from target `r` and a shared `sigma^2`, inverting the
    /// softplus-plus-safeguard mapping.
    pub fn with_r_sigma2(r: f64, sigma2: f64, mode: TdistMode) -> Self {
        Self {
            rho_r: softplus_inv(r - SAFEGUARD_EPS),
            s: ScaleParam::Shared(softplus_inv(sigma2 - SAFEGUARD_EPS)),
            mode,
        }
    }

    /// The initialization used for training: r = 1, sigma^2 = 1.
    pub fn init_unit(mode: TdistMode) -> Self {
        Self::with_r_sigma2(1.0, 1.0, mode)
    }

    /// Effective degrees of freedom, strictly positive.
    pub fn r(&self) -> f64 {
        softplus(self.rho_r) + SAFEGUARD_EPS
    }

    /// Effective scale at voxel `i`, strictly positive.
    pub fn sigma2_at(&self, i: usize) -> f64 {
        softplus(self.s.raw_at(i)) + SAFEGUARD_EPS
    }
}

/// Residual field `delta = K - prediction`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    values: Volume,
}

impl Residual {
    pub fn new(values: Volume) -> Self {
        Self { values }
    }

    /// `label - prediction`, voxelwise.
    pub fn from_label_pred(label: &BinaryMask, pred: &Volume) -> Result<Self> {
        if label.dims() != pred.dims() {
            return Err(Error::DimMismatch {
                left: label.dims().as_tuple(),
                right: pred.dims().as_tuple(),
            });
        }
        let data = label
            .data()
            .iter()
            .zip(pred.data())
            .map(|(&k, &p)| (k as u8 as f64) - p)
            .collect();
        Ok(Self {
            values: Volume::from_computed(pred.dims(), pred.spacing(), data),
        })
    }

    pub fn values(&self) -> &Volume {
        &self.values
    }
}

fn check_scale_len(res: &Residual, p: &TDistParams) -> Result<()> {
    if let ScaleParam::PerVoxel(v) = &p.s {
        if v.len() != res.values.len() {
            return Err(Error::DimMismatch {
                left: res.values.dims().as_tuple(),
                right: (v.len(), 1, 1),
            });
        }
    }
    Ok(())
}

/// Constant part of the single-sample NLL for dimension `d`:
/// `(d/2) ln(pi r) + ln Gamma(r/2) - ln Gamma((r + d)/2)`.
#[inline]
fn nll_const(r: f64, d: f64) -> f64 {
    0.5 * d * (PI * r).ln() + ln_gamma(0.5 * r) - ln_gamma(0.5 * (r + d))
}

/// Negative log-likelihood of the residual field under the t model.
pub fn tdist_nll(res: &Residual, p: &TDistParams) -> Result<f64> {
    check_scale_len(res, p)?;
    let r = p.r();
    let data = res.values.data();
    let n = data.len();
    match p.mode {
        TdistMode::PerVoxel => {
            let c = nll_const(r, 1.0);
            let mut acc = 0.0;
            for (i, &delta) in data.iter().enumerate() {
                let sigma2 = p.sigma2_at(i);
                let q = delta * delta / sigma2;
                acc += c + 0.5 * sigma2.ln() + 0.5 * (r + 1.0) * (q / r).ln_1p();
            }
            Ok(acc / n as f64)
        }
        TdistMode::Joint => {
            let d = n as f64;
            let mut log_sigma_sum = 0.0;
            let mut q_sum = 0.0;
            for (i, &delta) in data.iter().enumerate() {
                let sigma2 = p.sigma2_at(i);
                log_sigma_sum += sigma2.ln();
                q_sum += delta * delta / sigma2;
            }
            Ok(nll_const(r, d) + 0.5 * log_sigma_sum + 0.5 * (r + d) * (q_sum / r).ln_1p())
        }
    }
}

/// Gradients of [`tdist_nll`] with respect to every residual entry, the raw
/// degrees-of-freedom parameter, and the raw scale parameter(s).
#[derive(Debug, Clone)]
pub struct TdistGrad {
    pub d_res: Volume,
    pub d_rho_r: f64,
    pub d_s: ScaleParam,
}

pub fn tdist_grad(res: &Residual, p: &TDistParams) -> Result<TdistGrad> {
    check_scale_len(res, p)?;
    let r = p.r();
    let data = res.values.data();
    let n = data.len();
    let inv_n = 1.0 / n as f64;
    // d(nll_const)/dr for sample dimension d
    let dc_dr = |d: f64| 0.5 * d / r + 0.5 * digamma(0.5 * r) - 0.5 * digamma(0.5 * (r + d));

    let mut d_res = vec![0.0; n];
    let mut d_sigma2 = vec![0.0; n];
    let d_r_total;

    match p.mode {
        TdistMode::PerVoxel => {
            let mut acc_dr = 0.0;
            for (i, &delta) in data.iter().enumerate() {
                let sigma2 = p.sigma2_at(i);
                let q = delta * delta / sigma2;
                let denom = r * sigma2 + delta * delta;
                d_res[i] = (r + 1.0) * delta / denom * inv_n;
                d_sigma2[i] =
                    (0.5 / sigma2 - 0.5 * (r + 1.0) * delta * delta / (sigma2 * denom)) * inv_n;
                acc_dr += dc_dr(1.0) + 0.5 * (q / r).ln_1p() - 0.5 * (r + 1.0) * q / (r * (r + q));
            }
            d_r_total = acc_dr * inv_n;
        }
        TdistMode::Joint => {
            let d = n as f64;
            let mut q_sum = 0.0;
            for (i, &delta) in data.iter().enumerate() {
                q_sum += delta * delta / p.sigma2_at(i);
            }
            for (i, &delta) in data.iter().enumerate() {
                let sigma2 = p.sigma2_at(i);
                d_res[i] = (r + d) * delta / (sigma2 * (r + q_sum));
                d_sigma2[i] =
                    0.5 / sigma2 - 0.5 * (r + d) * delta * delta / (sigma2 * sigma2 * (r + q_sum));
            }
            d_r_total =
                dc_dr(d) + 0.5 * (q_sum / r).ln_1p() - 0.5 * (r + d) * q_sum / (r * (r + q_sum));
        }
    }

    let d_rho_r = sigmoid(p.rho_r) * d_r_total;
    let d_s = match &p.s {
        ScaleParam::Shared(s_raw) => {
            let total: f64 = d_sigma2.iter().sum();
            ScaleParam::Shared(sigmoid(*s_raw) * total)
        }
        ScaleParam::PerVoxel(s_raw) => ScaleParam::PerVoxel(
            s_raw
                .iter()
                .zip(&d_sigma2)
                .map(|(&sr, &g)| sigmoid(sr) * g)
                .collect(),
        ),
    };
    Ok(TdistGrad {
        d_res: Volume::from_computed(res.values.dims(), res.values.spacing(), d_res),
        d_rho_r,
        d_s,
    })
}

/// Baseline loss kinds from the ablation battery. `CE` and `BCE` coincide
/// for single-channel binary labels; both names are kept so ablation rows
/// map one-to-one onto the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Ce,
    Bce,
    Focal,
    Mse,
    Mae,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::Ce,
        BaselineKind::Bce,
        BaselineKind::Focal,
        BaselineKind::Mse,
        BaselineKind::Mae,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Ce => "CE",
            BaselineKind::Bce => "BCE",
            BaselineKind::Focal => "Focal",
            BaselineKind::Mse => "MSE",
            BaselineKind::Mae => "MAE",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "CE" => Some(BaselineKind::Ce),
            "BCE" => Some(BaselineKind::Bce),
            "FOCAL" => Some(BaselineKind::Focal),
            "MSE" => Some(BaselineKind::Mse),
            "MAE" => Some(BaselineKind::Mae),
            _ => None,
        }
    }
}

const PROB_CLAMP: f64 = 1e-7;

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_pred_label(pred: &Volume, label: &BinaryMask) -> Result<()> {
    if pred.dims() != label.dims() {
        return Err(Error::DimMismatch {
            left: pred.dims().as_tuple(),
            right: label.dims().as_tuple(),
        });
    }
    Ok(())
}

/// Voxel-mean of the named baseline loss.
pub fn baseline_loss(
    kind: BaselineKind,
    pred: &Volume,
    label: &BinaryMask,
    focal_gamma: f64,
) -> Result<f64> {
    check_pred_label(pred, label)?;
    let n = pred.len() as f64;
    let mut acc = 0.0;
    for (&p, &k) in pred.data().iter().zip(label.data()) {
        let y = k as u8 as f64;
        acc += match kind {
            BaselineKind::Ce | BaselineKind::Bce => {
                let p = clamp_prob(p);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            }
            BaselineKind::Focal => {
                let p = clamp_prob(p);
                let pt = if k { p } else { 1.0 - p };
                -(1.0 - pt).powf(focal_gamma) * pt.ln()
            }
            BaselineKind::Mse => (p - y) * (p - y),
            BaselineKind::Mae => (p - y).abs(),
        };
    }
    Ok(acc / n)
}

/// Analytic gradient of [`baseline_loss`] with respect to the prediction.
/// Where the probability clamp is active the gradient is zero, matching the
/// clamped forward value.
pub fn baseline_loss_grad(
    kind: BaselineKind,
    pred: &Volume,
    label: &BinaryMask,
    focal_gamma: f64,
) -> Result<Volume> {
    check_pred_label(pred, label)?;
    let inv_n = 1.0 / pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(label.data())
        .map(|(&p, &k)| {
            let y = k as u8 as f64;
            match kind {
                BaselineKind::Ce | BaselineKind::Bce => {
                    if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                        0.0
                    } else {
                        (p - y) / (p * (1.0 - p)) * inv_n
                    }
                }
                BaselineKind::Focal => {
                    if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                        0.0
                    } else {
                        let pt = if k { p } else { 1.0 - p };
                        let d_pt = focal_gamma * (1.0 - pt).powf(focal_gamma - 1.0) * pt.ln()
                            - (1.0 - pt).powf(focal_gamma) / pt;
                        let sign = if k { 1.0 } else { -1.0 };
                        d_pt * sign * inv_n
                    }
                }
                BaselineKind::Mse => 2.0 * (p - y) * inv_n,
                BaselineKind::Mae => {
                    if p > y {
                        inv_n
                    } else if p < y {
                        -inv_n
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect();
    Ok(Volume::from_computed(pred.dims(), pred.spacing(), data))
}
