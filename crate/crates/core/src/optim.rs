//! Fitting loops: Adam, the self-supervised cavity-recovery fit, the
//! weakly-supervised per-voxel linear predictor, and mask extraction.
//!
//! The cavity fit is analysis-by-synthesis: the inverted probability map
//! is parameterized as `delta = logistic(z)` so it stays in (0, 1) without
//! projection, and `z` is driven by Adam to minimize
//!
//! ```text
//! msssim_cscc_loss(preop * delta, postop) + lambda * smooth_loss(delta)
//! ```
//!
//! Early stopping watches the full objective: when `patience` iterations
//! pass without the best value improving by at least `min_delta`, the fit
//! stops and the best-scoring parameters are returned.
//!
//! Every fit is a deterministic function of its inputs and config; repeated
//! runs agree bitwise.

use crate::error::{Error, Result};
use crate::msssim::{evaluate, prepare_reference, SsimParams};
use crate::smooth::{smooth_loss, smooth_loss_grad};
use crate::tdist::{
    baseline_loss, baseline_loss_grad, tdist_grad, tdist_nll, BaselineKind, Residual, ScaleParam,
    TDistParams,
};
use crate::volume::{binarize, BinaryMask, Volume};
use serde::{Deserialize, Serialize};

/// Adam accumulator state for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam shapes disagree: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Configuration of both fitting loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Learning rate for the delta logits / predictor weights.
    pub lr_main: f64,
    /// Learning rate for the degrees-of-freedom raw parameter.
    pub lr_r: f64,
    /// Learning rate for the raw scale parameter(s).
    pub lr_sigma: f64,
    /// Weight of the smoothness penalty in the cavity fit.
    pub lambda_smooth: f64,
    pub max_iters: usize,
    /// Iterations tolerated without a `min_delta` improvement of the best
    /// objective before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Binarization level for mask extraction.
    pub threshold: f64,
    /// Focal-loss exponent for the Focal baseline.
    pub focal_gamma: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lr_main: 1e-3,
            lr_r: 1e-4,
            lr_sigma: 1e-4,
            lambda_smooth: 0.1,
            max_iters: 500,
            patience: 25,
            min_delta: 1e-6,
            threshold: 0.5,
            focal_gamma: 2.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_main <= 0.0 || self.lr_r <= 0.0 || self.lr_sigma <= 0.0 {
            return Err(Error::InvalidArgument(
                "learning rates must be positive".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Tracks the best objective seen and the patience window.
struct EarlyStop {
    best: f64,
    since_improvement: usize,
    min_delta: f64,
    patience: usize,
}

impl EarlyStop {
    fn new(min_delta: f64, patience: usize) -> Self {
        Self {
            best: f64::INFINITY,
            since_improvement: 0,
            min_delta,
            patience,
        }
    }

    /// Returns true when the fit should stop, and whether this iterate is a
    /// new best.
    fn update(&mut self, value: f64) -> (bool, bool) {
        let improved = value < self.best - self.min_delta;
        let new_best = value < self.best;
        if new_best {
            self.best = value;
        }
        if improved {
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        (self.since_improvement >= self.patience, new_best)
    }
}

/// Result of the self-supervised cavity fit.
#[derive(Debug, Clone)]
pub struct DeltaFit {
    /// Inverted probability map, in (0, 1).
    pub delta: Volume,
    /// Objective at every iterate, in order.
    pub loss_trace: Vec<f64>,
    /// Pyramid scales achieved by the similarity loss at these dims.
    pub achieved_m: usize,
}

fn check_normalized(v: &Volume, name: &str) -> Result<()> {
    const TOL: f64 = 1e-6;
    if v.data().iter().any(|&x| !(-TOL..=1.0 + TOL).contains(&x)) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be normalized to [0, 1] before fitting"
        )));
    }
    Ok(())
}

/// Recovers the inverted probability map for one registered pair by direct
/// optimization of the similarity-plus-smoothness objective.
pub fn fit_delta(
    preop: &Volume,
    postop: &Volume,
    ssim: &SsimParams,
    cfg: &FitConfig,
) -> Result<DeltaFit> {
    cfg.validate()?;
    ssim.validate()?;
    if preop.dims() != postop.dims() {
        return Err(Error::DimMismatch {
            left: preop.dims().as_tuple(),
            right: postop.dims().as_tuple(),
        });
    }
    check_normalized(preop, "preop")?;
    check_normalized(postop, "postop")?;

    let dims = preop.dims();
    let spacing = preop.spacing();
    let n = preop.len();
    let reference = prepare_reference(postop, ssim)?;
    let achieved_m = reference.achieved_scales();

    let mut z = vec![0.0; n];
    let mut best_z = z.clone();
    let mut adam = AdamState::new(n);
    let mut stopper = EarlyStop::new(cfg.min_delta, cfg.patience);
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut grad_z = vec![0.0; n];

    for _ in 0..cfg.max_iters {
        let delta_data: Vec<f64> = z.iter().map(|&v| logistic(v)).collect();
        let delta = Volume::from_computed(dims, spacing, delta_data);
        let x = Volume::from_computed(
            dims,
            spacing,
            preop
                .data()
                .iter()
                .zip(delta.data())
                .map(|(&p, &d)| p * d)
                .collect(),
        );
        let eval = evaluate(&x, &reference, ssim, true)?;
        let objective = eval.loss + cfg.lambda_smooth * smooth_loss(&delta);
        trace.push(objective);

        let (stop, new_best) = stopper.update(objective);
        if new_best {
            best_z.copy_from_slice(&z);
        }
        if stop {
            break;
        }

        let g_x = eval.grad.expect("gradient requested");
        let g_smooth = smooth_loss_grad(&delta);
        for i in 0..n {
            let d = delta.data()[i];
            let d_delta = preop.data()[i] * g_x.data()[i] + cfg.lambda_smooth * g_smooth.data()[i];
            grad_z[i] = d_delta * d * (1.0 - d);
        }
        adam_step(&mut z, &grad_z, &mut adam, cfg.lr_main)?;
    }

    let delta = Volume::from_computed(dims, spacing, best_z.iter().map(|&v| logistic(v)).collect());
    Ok(DeltaFit {
        delta,
        loss_trace: trace,
        achieved_m,
    })
}

/// Loss driving the weak fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakLoss {
    Tdist,
    Baseline(BaselineKind),
}

impl WeakLoss {
    pub const ALL: [WeakLoss; 6] = [
        WeakLoss::Tdist,
        WeakLoss::Baseline(BaselineKind::Ce),
        WeakLoss::Baseline(BaselineKind::Bce),
        WeakLoss::Baseline(BaselineKind::Focal),
        WeakLoss::Baseline(BaselineKind::Mse),
        WeakLoss::Baseline(BaselineKind::Mae),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WeakLoss::Tdist => "TD",
            WeakLoss::Baseline(k) => k.name(),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        if name.eq_ignore_ascii_case("TD") || name.eq_ignore_ascii_case("tdist") {
            Some(WeakLoss::Tdist)
        } else {
            BaselineKind::parse(name).map(WeakLoss::Baseline)
        }
    }
}

/// Per-voxel linear model: `prediction = logistic(w . features + bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearPredictor {
    pub fn zeros(channels: usize) -> Self {
        Self {
            weights: vec![0.0; channels],
            bias: 0.0,
        }
    }

    /// Probability volume over the feature channels.
    pub fn predict(&self, features: &[Volume]) -> Result<Volume> {
        if features.is_empty() || features.len() != self.weights.len() {
            return Err(Error::InvalidArgument(format!(
                "predictor has {} weights but got {} feature channels",
                self.weights.len(),
                features.len()
            )));
        }
        let dims = features[0].dims();
        for f in features {
            if f.dims() != dims {
                return Err(Error::DimMismatch {
                    left: dims.as_tuple(),
                    right: f.dims().as_tuple(),
                });
            }
        }
        let n = dims.count();
        let mut logits = vec![self.bias; n];
        for (w, f) in self.weights.iter().zip(features) {
            for (l, &x) in logits.iter_mut().zip(f.data()) {
                *l += w * x;
            }
        }
        Ok(Volume::from_computed(
            dims,
            features[0].spacing(),
            logits.into_iter().map(logistic).collect(),
        ))
    }
}

/// Result of a weak fit: the trained predictor, the loss trace, and (for
/// the t-distribution loss) the co-trained noise parameters.
#[derive(Debug, Clone)]
pub struct WeakFit {
    pub predictor: LinearPredictor,
    pub loss_trace: Vec<f64>,
    pub tdist: Option<TDistParams>,
}

/// Trains the linear predictor against (possibly corrupted) labels. For
/// the t-distribution loss, the degrees of freedom and scale are co-trained
/// at their own learning rates.
pub fn fit_weak(
    features: &[Volume],
    weak_label: &BinaryMask,
    loss: WeakLoss,
    tparams: &TDistParams,
    cfg: &FitConfig,
) -> Result<WeakFit> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one feature channel".into(),
        ));
    }
    let dims = weak_label.dims();
    for f in features {
        if f.dims() != dims {
            return Err(Error::DimMismatch {
                left: f.dims().as_tuple(),
                right: dims.as_tuple(),
            });
        }
    }
    let channels = features.len();
    let n = dims.count();

    // main parameter vector: weights then bias
    let mut params = vec![0.0; channels + 1];
    let mut best_params = params.clone();
    let mut adam_main = AdamState::new(channels + 1);
    let mut grads = vec![0.0; channels + 1];

    let mut td = tparams.clone();
    let mut best_td = td.clone();
    let mut adam_r = AdamState::new(1);
    let mut adam_s = AdamState::new(match &td.s {
        ScaleParam::Shared(_) => 1,
        ScaleParam::PerVoxel(v) => v.len(),
    });

    let mut stopper = EarlyStop::new(cfg.min_delta, cfg.patience);
    let mut trace = Vec::with_capacity(cfg.max_iters);

    let predictor_from = |p: &[f64]| LinearPredictor {
        weights: p[..channels].to_vec(),
        bias: p[channels],
    };

    for _ in 0..cfg.max_iters {
        let pred = predictor_from(&params).predict(features)?;
        let (loss_value, d_pred) = match loss {
            WeakLoss::Tdist => {
                let res = Residual::from_label_pred(weak_label, &pred)?;
                let value = tdist_nll(&res, &td)?;
                let g = tdist_grad(&res, &td)?;
                // residual = label - pred, so d/d pred = -d/d residual
                let d_pred: Vec<f64> = g.d_res.data().iter().map(|&v| -v).collect();
                // co-train the noise model
                adam_step(
                    std::slice::from_mut(&mut td.rho_r),
                    &[g.d_rho_r],
                    &mut adam_r,
                    cfg.lr_r,
                )?;
                match (&mut td.s, &g.d_s) {
                    (ScaleParam::Shared(s), ScaleParam::Shared(gs)) => {
                        adam_step(std::slice::from_mut(s), &[*gs], &mut adam_s, cfg.lr_sigma)?;
                    }
                    (ScaleParam::PerVoxel(s), ScaleParam::PerVoxel(gs)) => {
                        adam_step(s, gs, &mut adam_s, cfg.lr_sigma)?;
                    }
                    _ => unreachable!("gradient shape follows parameter shape"),
                }
                (value, d_pred)
            }
            WeakLoss::Baseline(kind) => {
                let value = baseline_loss(kind, &pred, weak_label, cfg.focal_gamma)?;
                let g = baseline_loss_grad(kind, &pred, weak_label, cfg.focal_gamma)?;
                (value, g.data().to_vec())
            }
        };
        trace.push(loss_value);

        let (stop, new_best) = stopper.update(loss_value);
        if new_best {
            best_params.copy_from_slice(&params);
            best_td = td.clone();
        }
        if stop {
            break;
        }

        // chain through the logistic and the linear map
        grads.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let p = pred.data()[i];
            let d_logit = d_pred[i] * p * (1.0 - p);
            if d_logit == 0.0 {
                continue;
            }
            for (c, f) in features.iter().enumerate() {
                grads[c] += d_logit * f.data()[i];
            }
            grads[channels] += d_logit;
        }
        adam_step(&mut params, &grads, &mut adam_main, cfg.lr_main)?;
    }

    Ok(WeakFit {
        predictor: predictor_from(&best_params),
        loss_trace: trace,
        tdist: match loss {
            WeakLoss::Tdist => Some(best_td),
            _ => None,
        },
    })
}

/// Extracts the removed-region mask from an inverted probability map:
/// a voxel is in the mask iff `1 - delta > threshold`.
pub fn predict_mask(delta: &Volume, threshold: f64) -> Result<BinaryMask> {
    if delta.data().iter().any(|&d| !(0.0..=1.0).contains(&d)) {
        return Err(Error::InvalidArgument(
            "delta values must lie in [0, 1]".into(),
        ));
    }
    let inverted = Volume::from_computed(
        delta.dims(),
        delta.spacing(),
        delta.data().iter().map(|&d| 1.0 - d).collect(),
    );
    Ok(binarize(&inverted, threshold))
}
