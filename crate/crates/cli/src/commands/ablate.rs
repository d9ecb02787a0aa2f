//! `ablate`: the two ablation batteries.
//!
//! - weak: per case, corrupt the ground truth into a weak label, train the
//!   per-voxel linear predictor under each configured loss, and score the
//!   thresholded prediction against the clean ground truth.
//! - similarity: per case, run the self-supervised recovery under each
//!   similarity-loss variant.
//!
//! The summary carries mean/std per group and Wilcoxon p-values of the
//! first-listed group against every other.

use crate::commands::normalized_case;
use crate::config::{write_resolved, ExperimentConfig};
use crate::output::{
    evaluate_case, summarize_groups, wilcoxon_against, write_json, write_metrics_csv, MetricsRow,
};
use anyhow::{anyhow, bail, Context, Result};
use cavitylab::msssim::SccVariant;
use cavitylab::optim::{fit_delta, fit_weak, predict_mask, WeakLoss};
use cavitylab::phantom::{corrupt_mask, voxel_features, CorruptionSpec};
use cavitylab::rng::case_seed;
use cavitylab::volume::binarize;
use rayon::prelude::*;
use serde_json::json;
use std::path::Path;

fn weak_battery(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let losses: Vec<WeakLoss> = cfg
        .ablate
        .losses
        .iter()
        .map(|name| {
            WeakLoss::parse(name).ok_or_else(|| anyhow!("ablate.losses: unknown loss {name:?}"))
        })
        .collect::<Result<_>>()?;
    (0..cfg.cases)
        .into_par_iter()
        .map(|case| -> Result<Vec<MetricsRow>> {
            let (pair, pre, post) = normalized_case(cfg, case)?;
            // the weak label corrupts the ground truth with a per-case seed
            let corruption = CorruptionSpec {
                seed: case_seed(pair.spec.seed, 17),
                ..cfg.corruption.clone()
            };
            let weak = corrupt_mask(&pair.gt_mask, &corruption)?;
            let mut features = voxel_features(&pre);
            features.extend(voxel_features(&post));
            let spacing = pair.gt_mask.spacing();
            losses
                .iter()
                .map(|&loss| {
                    let tparams = cfg.tdist.build(pair.gt_mask.len())?;
                    let fit = fit_weak(&features, &weak, loss, &tparams, &cfg.fit)
                        .with_context(|| format!("weak fit {} case {case}", loss.name()))?;
                    let pred = fit.predictor.predict(&features)?;
                    let mask = binarize(&pred, cfg.fit.threshold);
                    evaluate_case(loss.name(), case, &mask, &pair.gt_mask, spacing, None)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()
        .map(|nested| nested.into_iter().flatten().collect())
}

fn similarity_battery(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let variants: Vec<SccVariant> = cfg
        .ablate
        .variants
        .iter()
        .map(|name| {
            SccVariant::parse(name)
                .ok_or_else(|| anyhow!("ablate.variants: unknown variant {name:?}"))
        })
        .collect::<Result<_>>()?;
    (0..cfg.cases)
        .into_par_iter()
        .map(|case| -> Result<Vec<MetricsRow>> {
            let (pair, pre, post) = normalized_case(cfg, case)?;
            let spacing = pair.gt_mask.spacing();
            variants
                .iter()
                .map(|&variant| {
                    let ssim = cfg.ssim.build_with_variant(variant)?;
                    let fit = fit_delta(&pre, &post, &ssim, &cfg.fit)
                        .with_context(|| format!("recovery {} case {case}", variant.name()))?;
                    let mask = predict_mask(&fit.delta, cfg.fit.threshold)?;
                    evaluate_case(
                        variant.name(),
                        case,
                        &mask,
                        &pair.gt_mask,
                        spacing,
                        Some(fit.achieved_m),
                    )
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()
        .map(|nested| nested.into_iter().flatten().collect())
}

pub fn run_ablate(cfg: &ExperimentConfig) -> Result<()> {
    let out = Path::new(&cfg.out);
    write_resolved(cfg, out)?;
    let battery = cfg.ablate.battery.as_str();
    if !matches!(battery, "weak" | "similarity" | "both") {
        bail!("ablate.battery: expected \"weak\", \"similarity\" or \"both\", got {battery:?}");
    }
    let mut summary = serde_json::Map::new();

    if battery == "weak" || battery == "both" {
        let rows = weak_battery(cfg)?;
        write_metrics_csv(&out.join("ablate_weak.csv"), &rows, Some("loss"))?;
        let reference = cfg.ablate.losses.first().cloned().unwrap_or_default();
        summary.insert(
            "weak".into(),
            json!({
                "groups": summarize_groups(&rows),
                "wilcoxon": wilcoxon_against(&rows, &reference),
            }),
        );
        println!("ablate: weak battery done ({} rows)", rows.len());
    }

    if battery == "similarity" || battery == "both" {
        let rows = similarity_battery(cfg)?;
        write_metrics_csv(&out.join("ablate_similarity.csv"), &rows, Some("variant"))?;
        let reference = cfg
            .ablate
            .variants
            .first()
            .map(|v| SccVariant::parse(v).map(|x| x.name().to_string()))
            .unwrap_or(None)
            .unwrap_or_default();
        summary.insert(
            "similarity".into(),
            json!({
                "groups": summarize_groups(&rows),
                "wilcoxon": wilcoxon_against(&rows, &reference),
            }),
        );
        println!("ablate: similarity battery done ({} rows)", rows.len());
    }

    write_json(&out.join("summary.json"), &serde_json::Value::Object(summary))?;
    println!("ablate: outputs in {}", out.display());
    Ok(())
}
