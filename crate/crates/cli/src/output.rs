//! Result tables and summaries: metrics rows, CSV emission, and
//! mean-plus-std aggregation with Wilcoxon comparisons.

use anyhow::{Context, Result};
use cavitylab::metrics::{asd, hd95, overlap_metrics, wilcoxon_signed_rank};
use cavitylab::volume::BinaryMask;
use serde_json::json;
use std::collections::BTreeMap;
use std::path::Path;

/// One evaluated case. Surface distances are absent when a mask was empty;
/// `status` records why.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Loss or variant name in ablation tables, empty otherwise.
    pub group: String,
    pub case: usize,
    pub dice: f64,
    pub iou: f64,
    pub acc: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
    pub achieved_m: Option<usize>,
    pub status: String,
}

/// Evaluates one prediction against ground truth, downgrading undefined
/// surface metrics to a status instead of failing the row.
pub fn evaluate_case(
    group: &str,
    case: usize,
    pred: &BinaryMask,
    gt: &BinaryMask,
    spacing: [f64; 3],
    achieved_m: Option<usize>,
) -> Result<MetricsRow> {
    let o = overlap_metrics(pred, gt)?;
    let pred_empty = pred.count_true() == 0;
    let gt_empty = gt.count_true() == 0;
    let (hd, sd, status) = if pred_empty || gt_empty {
        let status = match (pred_empty, gt_empty) {
            (true, true) => "empty_both",
            (true, false) => "empty_pred",
            (false, true) => "empty_gt",
            _ => unreachable!(),
        };
        (None, None, status.to_string())
    } else {
        (
            Some(hd95(pred, gt, spacing)?),
            Some(asd(pred, gt, spacing)?),
            "ok".to_string(),
        )
    };
    Ok(MetricsRow {
        group: group.to_string(),
        case,
        dice: o.dice,
        iou: o.iou,
        acc: o.acc,
        precision: o.precision,
        sensitivity: o.sensitivity,
        specificity: o.specificity,
        hd95: hd,
        asd: sd,
        achieved_m,
        status,
    })
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a metrics table. When `group_column` is given (e.g. "loss"), it
/// leads the header and rows are sorted by (group, case); otherwise rows
/// are sorted by case.
pub fn write_metrics_csv(
    path: &Path,
    rows: &[MetricsRow],
    group_column: Option<&str>,
) -> Result<()> {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.group, a.case).cmp(&(&b.group, b.case)));
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec![];
    if let Some(g) = group_column {
        header.push(g.to_string());
    }
    header.extend(
        [
            "case",
            "dice",
            "iou",
            "acc",
            "precision",
            "sensitivity",
            "specificity",
            "hd95",
            "asd",
            "achieved_M",
            "status",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in sorted {
        let mut record = vec![];
        if group_column.is_some() {
            record.push(r.group.clone());
        }
        record.extend([
            r.case.to_string(),
            r.dice.to_string(),
            r.iou.to_string(),
            r.acc.to_string(),
            r.precision.to_string(),
            r.sensitivity.to_string(),
            r.specificity.to_string(),
            fmt_opt_f64(r.hd95),
            fmt_opt_f64(r.asd),
            r.achieved_m.map(|m| m.to_string()).unwrap_or_default(),
            r.status.clone(),
        ]);
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation (n - 1; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

/// Aggregates rows into `{group: {metric: {mean, std, n}}}`, keyed in
/// sorted order for diff stability.
pub fn summarize_groups(rows: &[MetricsRow]) -> serde_json::Value {
    let mut groups: BTreeMap<String, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.group.clone()).or_default().push(r);
    }
    let mut out = serde_json::Map::new();
    for (group, rs) in groups {
        let mut metrics = serde_json::Map::new();
        let collect = |f: fn(&MetricsRow) -> Option<f64>| -> Vec<f64> {
            rs.iter().filter_map(|r| f(r)).collect()
        };
        let fields: [(&str, fn(&MetricsRow) -> Option<f64>); 8] = [
            ("dice", |r| Some(r.dice)),
            ("iou", |r| Some(r.iou)),
            ("acc", |r| Some(r.acc)),
            ("precision", |r| Some(r.precision)),
            ("sensitivity", |r| Some(r.sensitivity)),
            ("specificity", |r| Some(r.specificity)),
            ("hd95", |r| r.hd95),
            ("asd", |r| r.asd),
        ];
        for (name, getter) in fields {
            let vals = collect(getter);
            if vals.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&vals);
            metrics.insert(
                name.to_string(),
                json!({"mean": mean, "std": std, "n": vals.len()}),
            );
        }
        out.insert(group, serde_json::Value::Object(metrics));
    }
    serde_json::Value::Object(out)
}

/// Paired Wilcoxon p-values of `reference` against every other group, on
/// the dice and hd95 columns (cases missing a value on either side of a
/// pair are dropped from that comparison).
pub fn wilcoxon_against(rows: &[MetricsRow], reference: &str) -> serde_json::Value {
    let mut by_group: BTreeMap<String, BTreeMap<usize, &MetricsRow>> = BTreeMap::new();
    for r in rows {
        by_group
            .entry(r.group.clone())
            .or_default()
            .insert(r.case, r);
    }
    let Some(ref_rows) = by_group.get(reference) else {
        return json!({});
    };
    let ref_rows = ref_rows.clone();
    let mut out = serde_json::Map::new();
    for (metric, getter) in [
        ("dice", (|r: &MetricsRow| Some(r.dice)) as fn(&MetricsRow) -> Option<f64>),
        ("hd95", |r: &MetricsRow| r.hd95),
    ] {
        let mut per_metric = serde_json::Map::new();
        for (group, rows_by_case) in &by_group {
            if group == reference {
                continue;
            }
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (case, row) in rows_by_case {
                if let (Some(refrow), Some(x), Some(y)) = (
                    ref_rows.get(case),
                    ref_rows.get(case).and_then(|r| getter(r)),
                    getter(row),
                ) {
                    let _ = refrow;
                    a.push(x);
                    b.push(y);
                }
            }
            let value = match wilcoxon_signed_rank(&a, &b) {
                Ok((_, p)) => json!(p),
                Err(_) => serde_json::Value::Null,
            };
            per_metric.insert(format!("{reference}_vs_{group}"), value);
        }
        out.insert(metric.to_string(), serde_json::Value::Object(per_metric));
    }
    serde_json::Value::Object(out)
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cavitylab::volume::Dims;

    fn row(group: &str, case: usize, dice: f64, hd95: Option<f64>) -> MetricsRow {
        MetricsRow {
            group: group.into(),
            case,
            dice,
            iou: dice / (2.0 - dice),
            acc: 0.9,
            precision: 0.8,
            sensitivity: 0.7,
            specificity: 0.95,
            hd95,
            asd: hd95.map(|h| h / 2.0),
            achieved_m: Some(2),
            status: if hd95.is_some() { "ok" } else { "empty_pred" }.into(),
        }
    }

    #[test]
    fn evaluate_case_flags_empty_prediction() {
        let dims = Dims::new(4, 4, 4);
        let empty = BinaryMask::from_data(dims, vec![false; 64]).unwrap();
        let mut gt_data = vec![false; 64];
        gt_data[20] = true;
        let gt = BinaryMask::from_data(dims, gt_data).unwrap();
        let row = evaluate_case("", 0, &empty, &gt, [1.0; 3], None).unwrap();
        assert_eq!(row.status, "empty_pred");
        assert!(row.hd95.is_none());
        assert_eq!(row.dice, 0.0);
    }

    #[test]
    fn csv_rows_sorted_and_optional_cells_blank() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            row("MSE", 1, 0.8, Some(2.0)),
            row("TD", 0, 0.9, None),
            row("MSE", 0, 0.7, Some(1.0)),
        ];
        write_metrics_csv(&path, &rows, Some("loss")).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("loss,case,dice"));
        assert!(lines[1].starts_with("MSE,0"));
        assert!(lines[2].starts_with("MSE,1"));
        assert!(lines[3].starts_with("TD,0"));
        assert!(lines[3].contains(",,"), "blank cells for undefined metrics");
    }

    #[test]
    fn mean_std_sample_convention() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        let (m1, s1) = mean_std(&[5.0]);
        assert_eq!((m1, s1), (5.0, 0.0));
    }

    #[test]
    fn summary_groups_and_wilcoxon_shape() {
        let rows: Vec<MetricsRow> = (0..6)
            .flat_map(|c| {
                vec![
                    row("TD", c, 0.9 - 0.01 * c as f64, Some(1.0 + c as f64)),
                    row("CE", c, 0.8 - 0.01 * c as f64, Some(2.0 + c as f64)),
                ]
            })
            .collect();
        let summary = summarize_groups(&rows);
        assert!(summary["TD"]["dice"]["mean"].as_f64().unwrap() > 0.85);
        assert_eq!(summary["CE"]["dice"]["n"], json!(6));
        let wil = wilcoxon_against(&rows, "TD");
        let p = wil["dice"]["TD_vs_CE"].as_f64().unwrap();
        assert!(p > 0.0 && p <= 1.0);
    }
}
