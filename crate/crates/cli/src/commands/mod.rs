//! Command implementations. Each command resolves its config, runs, and
//! writes `config.resolved.json` plus its own outputs into the output
//! directory.

mod ablate;
mod eval;
mod fit;
mod gradcheck;
mod phantom;
mod report;

pub use ablate::run_ablate;
pub use eval::run_eval;
pub use fit::run_fit;
pub use gradcheck::run_gradcheck;
pub use phantom::run_phantom;
pub use report::run_report;

use crate::config::ExperimentConfig;
use anyhow::Result;
use cavitylab::phantom::{generate_phantom, PhantomPair, PhantomSpec};
use cavitylab::rng::case_seed;
use cavitylab::volume::{normalize_intensity, Volume};
use std::path::{Path, PathBuf};

/// Per-case phantom spec: the case seed is derived from the global seed by
/// the documented splitting rule, so any case is reproducible in isolation.
pub(crate) fn case_spec(cfg: &ExperimentConfig, case: usize) -> PhantomSpec {
    PhantomSpec {
        seed: case_seed(cfg.seed, case as u64),
        ..cfg.phantom.clone()
    }
}

pub(crate) fn case_dir(out: &Path, case: usize) -> PathBuf {
    out.join(format!("case_{case:03}"))
}

/// Generates and normalizes one case pair.
pub(crate) fn normalized_case(
    cfg: &ExperimentConfig,
    case: usize,
) -> Result<(PhantomPair, Volume, Volume)> {
    let pair = generate_phantom(&case_spec(cfg, case))?;
    let (pre, _) = normalize_intensity(&pair.preop, cfg.normalize.lo_pct, cfg.normalize.hi_pct)?;
    let (post, _) = normalize_intensity(&pair.postop, cfg.normalize.lo_pct, cfg.normalize.hi_pct)?;
    Ok((pair, pre, post))
}
