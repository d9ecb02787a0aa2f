//! `phantom`: generate N seeded pairs and persist them as VOL1 files with
//! a JSON sidecar echoing each spec.

use crate::config::{write_resolved, ExperimentConfig};
use crate::commands::{case_dir, case_spec};
use anyhow::{Context, Result};
use cavitylab::phantom::generate_phantom;
use cavitylab::volume::save_volume;
use rayon::prelude::*;
use std::path::Path;

pub fn run_phantom(cfg: &ExperimentConfig) -> Result<()> {
    let out = Path::new(&cfg.out);
    write_resolved(cfg, out)?;
    let results: Vec<Result<()>> = (0..cfg.cases)
        .into_par_iter()
        .map(|case| {
            let spec = case_spec(cfg, case);
            let pair = generate_phantom(&spec)
                .with_context(|| format!("generating case {case}"))?;
            let dir = case_dir(out, case);
            std::fs::create_dir_all(&dir)?;
            save_volume(&pair.preop.clone().into(), dir.join("preop.vol"))?;
            save_volume(&pair.postop.clone().into(), dir.join("postop.vol"))?;
            save_volume(&pair.gt_mask.clone().into(), dir.join("gt_mask.vol"))?;
            std::fs::write(
                dir.join("phantom.json"),
                serde_json::to_string_pretty(&spec)? + "\n",
            )?;
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    println!("phantom: wrote {} cases to {}", cfg.cases, out.display());
    Ok(())
}
