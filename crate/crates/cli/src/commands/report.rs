//! `report`: aggregate a metrics CSV into a summary JSON with mean and
//! standard deviation per numeric column, grouped by a leading "loss" or
//! "variant" column when one is present.

use crate::config::{write_resolved, ExperimentConfig};
use crate::output::{mean_std, write_json};
use anyhow::{bail, Context, Result};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::Path;

pub fn run_report(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.report.input.is_empty() {
        bail!("report requires report.input pointing at a metrics CSV");
    }
    let mut reader = csv::Reader::from_path(&cfg.report.input)
        .with_context(|| format!("opening {}", cfg.report.input))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let group_col = headers
        .first()
        .filter(|h| *h == "loss" || *h == "variant")
        .cloned();

    // group -> column -> values
    let mut table: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut row_count = 0usize;
    for record in reader.records() {
        let record = record?;
        row_count += 1;
        let group = match &group_col {
            Some(_) => record.get(0).unwrap_or("").to_string(),
            None => String::new(),
        };
        let columns = table.entry(group).or_default();
        for (name, value) in headers.iter().zip(record.iter()) {
            if name == "case" || name == "status" || Some(name) == group_col.as_ref() {
                continue;
            }
            if let Ok(v) = value.parse::<f64>() {
                columns.entry(name.clone()).or_default().push(v);
            }
        }
    }
    if row_count == 0 {
        bail!("{} contains no data rows", cfg.report.input);
    }

    let mut groups = serde_json::Map::new();
    for (group, columns) in &table {
        let mut metrics = serde_json::Map::new();
        for (name, values) in columns {
            let (mean, std) = mean_std(values);
            metrics.insert(
                name.clone(),
                json!({"mean": mean, "std": std, "n": values.len()}),
            );
        }
        let key = if group.is_empty() { "all" } else { group };
        groups.insert(key.to_string(), serde_json::Value::Object(metrics));
    }
    let summary = json!({
        "input": cfg.report.input,
        "rows": row_count,
        "groups": groups,
    });

    let out = Path::new(&cfg.out);
    write_resolved(cfg, out)?;
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
