//! `fit`: self-supervised cavity recovery on each seeded pair. Per case it
//! writes the recovered map, the binarized mask, and one metrics row.

use crate::commands::{case_dir, normalized_case};
use crate::config::{write_resolved, ExperimentConfig};
use crate::output::{evaluate_case, summarize_groups, write_json, write_metrics_csv, MetricsRow};
use anyhow::{Context, Result};
use cavitylab::optim::{fit_delta, predict_mask};
use cavitylab::volume::save_volume;
use rayon::prelude::*;
use std::path::Path;

pub fn run_fit(cfg: &ExperimentConfig) -> Result<()> {
    let out = Path::new(&cfg.out);
    write_resolved(cfg, out)?;
    let ssim = cfg.ssim.build()?;

    let rows: Vec<MetricsRow> = (0..cfg.cases)
        .into_par_iter()
        .map(|case| -> Result<MetricsRow> {
            let (pair, pre, post) = normalized_case(cfg, case)?;
            let fit = fit_delta(&pre, &post, &ssim, &cfg.fit)
                .with_context(|| format!("fitting case {case}"))?;
            let mask = predict_mask(&fit.delta, cfg.fit.threshold)?;
            let dir = case_dir(out, case);
            std::fs::create_dir_all(&dir)?;
            save_volume(&fit.delta.clone().into(), dir.join("delta.vol"))?;
            save_volume(&mask.clone().into(), dir.join("mask.vol"))?;
            let spacing = pair.gt_mask.spacing();
            evaluate_case("", case, &mask, &pair.gt_mask, spacing, Some(fit.achieved_m))
        })
        .collect::<Result<_>>()?;

    write_metrics_csv(&out.join("metrics.csv"), &rows, None)?;
    write_json(&out.join("summary.json"), &summarize_groups(&rows))?;
    let mean_dice = rows.iter().map(|r| r.dice).sum::<f64>() / rows.len().max(1) as f64;
    println!(
        "fit: {} cases, mean dice {mean_dice:.4}, outputs in {}",
        rows.len(),
        out.display()
    );
    Ok(())
}
