//! `eval`: metrics between two mask files.

use crate::config::{write_resolved, ExperimentConfig};
use crate::output::{evaluate_case, write_metrics_csv};
use anyhow::{bail, Context, Result};
use cavitylab::volume::load_volume;
use std::path::Path;

pub fn run_eval(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.eval.pred.is_empty() || cfg.eval.gt.is_empty() {
        bail!("eval requires eval.pred and eval.gt (e.g. `cavitylab eval eval.pred=mask.vol eval.gt=gt.vol`)");
    }
    let pred = load_volume(&cfg.eval.pred)
        .with_context(|| format!("loading {}", cfg.eval.pred))?;
    let gt = load_volume(&cfg.eval.gt).with_context(|| format!("loading {}", cfg.eval.gt))?;
    let pred = pred
        .as_mask()
        .ok_or_else(|| anyhow::anyhow!("{} is not a mask file (dtype 1)", cfg.eval.pred))?;
    let gt = gt
        .as_mask()
        .ok_or_else(|| anyhow::anyhow!("{} is not a mask file (dtype 1)", cfg.eval.gt))?;
    if pred.spacing() != gt.spacing() {
        bail!(
            "spacing mismatch: {:?} vs {:?}",
            pred.spacing(),
            gt.spacing()
        );
    }
    let row = evaluate_case("", 0, pred, gt, gt.spacing(), None)?;
    println!(
        "dice {} iou {} acc {} precision {} sensitivity {} specificity {} hd95 {} asd {} status {}",
        row.dice,
        row.iou,
        row.acc,
        row.precision,
        row.sensitivity,
        row.specificity,
        row.hd95.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        row.asd.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        row.status
    );
    let out = Path::new(&cfg.out);
    write_resolved(cfg, out)?;
    write_metrics_csv(&out.join("metrics.csv"), &[row], None)?;
    Ok(())
}
