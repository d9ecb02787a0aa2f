//! Experiment configuration: JSON file + dotted-path overrides, with
//! strict unknown-key rejection and key paths in every parse error.
//!
//! The resolved configuration (all defaults filled in) is echoed to
//! `config.resolved.json` in the output directory of every run, and
//! re-running a command with that file reproduces its outputs.

use anyhow::{anyhow, bail, Context, Result};
use cavitylab::optim::FitConfig;
use cavitylab::phantom::{CorruptionSpec, PhantomSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Serializable view of the similarity-loss parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub scales: usize,
    pub window_sigma: f64,
    pub window_radius: usize,
    /// "msssim_cscc" (SCC on contrast), "msssim_scc" (SCC on structure) or
    /// "msssim" (plain).
    pub variant: String,
    pub power_floor: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            scales: 5,
            window_sigma: 1.5,
            window_radius: 5,
            variant: "msssim_cscc".into(),
            power_floor: 1e-6,
        }
    }
}

impl SsimConfig {
    pub fn build(&self) -> Result<cavitylab::msssim::SsimParams> {
        let variant = cavitylab::msssim::SccVariant::parse(&self.variant)
            .ok_or_else(|| anyhow!("ssim.variant: unknown variant {:?}", self.variant))?;
        self.build_with_variant(variant)
    }

    pub fn build_with_variant(
        &self,
        variant: cavitylab::msssim::SccVariant,
    ) -> Result<cavitylab::msssim::SsimParams> {
        let mut p = cavitylab::msssim::SsimParams::with_variant(variant);
        if self.scales != 5 {
            bail!("ssim.scales: only the standard five-scale exponent set ships; requested {} (small volumes reduce the achieved count automatically)", self.scales);
        }
        p.window = cavitylab::multiscale::gaussian_kernel(self.window_sigma, self.window_radius)
            .map_err(|e| anyhow!("ssim.window: {e}"))?;
        p.power_floor = self.power_floor;
        p.validate().map_err(|e| anyhow!("ssim: {e}"))?;
        Ok(p)
    }
}

/// Serializable view of the t-distribution initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdistConfig {
    pub init_r: f64,
    pub init_sigma2: f64,
    /// "per_voxel" or "joint".
    pub mode: String,
    /// When set, sigma^2 is a per-voxel field instead of one shared scalar.
    pub per_voxel_sigma: bool,
}

impl Default for TdistConfig {
    fn default() -> Self {
        Self {
            init_r: 1.0,
            init_sigma2: 1.0,
            mode: "per_voxel".into(),
            per_voxel_sigma: false,
        }
    }
}

impl TdistConfig {
    pub fn build(&self, voxels: usize) -> Result<cavitylab::tdist::TDistParams> {
        use cavitylab::tdist::{softplus_inv, ScaleParam, TDistParams, TdistMode, SAFEGUARD_EPS};
        let mode = match self.mode.as_str() {
            "per_voxel" => TdistMode::PerVoxel,
            "joint" => TdistMode::Joint,
            other => bail!("tdist.mode: expected \"per_voxel\" or \"joint\", got {other:?}"),
        };
        if !(self.init_r > 0.0) || !(self.init_sigma2 > 0.0) {
            bail!("tdist: init_r and init_sigma2 must be positive");
        }
        let mut p = TDistParams::with_r_sigma2(self.init_r, self.init_sigma2, mode);
        if self.per_voxel_sigma {
            let raw = softplus_inv(self.init_sigma2 - SAFEGUARD_EPS);
            p.s = ScaleParam::PerVoxel(vec![raw; voxels]);
        }
        Ok(p)
    }
}

/// Intensity normalization window applied before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizeConfig {
    pub lo_pct: f64,
    pub hi_pct: f64,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self {
            lo_pct: 0.5,
            hi_pct: 99.5,
        }
    }
}

/// Which ablation batteries to run and over what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    /// "weak", "similarity" or "both".
    pub battery: String,
    /// Loss rows of the weak-label battery.
    pub losses: Vec<String>,
    /// Similarity-loss variants of the recovery battery.
    pub variants: Vec<String>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            battery: "both".into(),
            losses: ["TD", "CE", "BCE", "Focal", "MSE", "MAE"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            variants: ["msssim_cscc", "msssim_scc", "msssim"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Inputs of the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub pred: String,
    pub gt: String,
}

/// Input of the `report` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub input: String,
}

/// Full experiment configuration; every command reads the sections it
/// needs. Unknown keys anywhere are rejected with their path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Global seed; per-case seeds derive from it.
    pub seed: u64,
    /// Number of seeded cases a batch command runs.
    pub cases: usize,
    /// Output directory (also settable with --out).
    pub out: String,
    pub normalize: NormalizeConfig,
    pub phantom: PhantomSpec,
    pub fit: FitConfig,
    pub ssim: SsimConfig,
    pub tdist: TdistConfig,
    pub corruption: CorruptionSpec,
    pub ablate: AblateConfig,
    pub eval: EvalConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 10,
            out: "out".into(),
            normalize: NormalizeConfig::default(),
            phantom: PhantomSpec::default(),
            fit: FitConfig::default(),
            ssim: SsimConfig::default(),
            tdist: TdistConfig::default(),
            corruption: CorruptionSpec::default(),
            ablate: AblateConfig::default(),
            eval: EvalConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Parses a `key=value` override. The value is parsed as JSON when
/// possible, otherwise taken as a bare string.
fn parse_override(raw: &str) -> Result<(Vec<String>, serde_json::Value)> {
    let (path, value) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("override {raw:?} is not of the form key=value"))?;
    if path.is_empty() {
        bail!("override {raw:?} has an empty key path");
    }
    let parsed = serde_json::from_str(value)
        .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    Ok((path.split('.').map(|s| s.to_string()).collect(), parsed))
}

/// Sets `value` at `path` inside a JSON object tree, creating intermediate
/// objects as needed. Unknown keys are caught later by deserialization.
fn set_path(tree: &mut serde_json::Value, path: &[String], value: serde_json::Value) -> Result<()> {
    let mut node = tree;
    for key in &path[..path.len() - 1] {
        if !node.is_object() {
            bail!("override path {} crosses a non-object", path.join("."));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(key.clone())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(path.last().unwrap().clone(), value);
            Ok(())
        }
        None => bail!("override path {} crosses a non-object", path.join(".")),
    }
}

/// Loads the config file (when given), applies overrides, and
/// deserializes strictly. Every error names the offending key path.
pub fn load_config(
    path: Option<&Path>,
    out_flag: Option<&str>,
    seed_flag: Option<u64>,
    overrides: &[String],
) -> Result<ExperimentConfig> {
    let mut tree: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => serde_json::Value::Object(Default::default()),
    };
    if !tree.is_object() {
        bail!("config root must be a JSON object");
    }
    for raw in overrides {
        let (key_path, value) = parse_override(raw)?;
        set_path(&mut tree, &key_path, value)?;
    }
    if let Some(out) = out_flag {
        set_path(&mut tree, &["out".into()], serde_json::Value::String(out.into()))?;
    }
    if let Some(seed) = seed_flag {
        set_path(&mut tree, &["seed".into()], serde_json::json!(seed))?;
    }
    let deserializer = tree.clone();
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(&deserializer)
        .map_err(|e| anyhow!("config key {}: {}", e.path(), e.inner()))?;
    Ok(cfg)
}

/// Writes the fully-resolved config next to a run's outputs.
pub fn write_resolved(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let text = serde_json::to_string_pretty(cfg)?;
    std::fs::write(out_dir.join("config.resolved.json"), text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = load_config(None, None, None, &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn single_field_override() {
        let cfg = load_config(None, None, None, &["fit.lambda_smooth=0.5".into()]).unwrap();
        assert_eq!(cfg.fit.lambda_smooth, 0.5);
        // everything else untouched
        assert_eq!(cfg.fit.lr_main, FitConfig::default().lr_main);
    }

    #[test]
    fn unknown_key_names_path() {
        let err = load_config(None, None, None, &["fit.lambdaa_smooth=0.5".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("fit"), "{err}");
        assert!(err.contains("lambdaa_smooth"), "{err}");
    }

    #[test]
    fn type_mismatch_names_path() {
        let err = load_config(None, None, None, &["fit.lr_main=\"abc\"".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("fit.lr_main"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let cfg = load_config(None, Some("results"), Some(7), &[]).unwrap();
        assert_eq!(cfg.out, "results");
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn string_values_allowed_without_quotes() {
        let cfg = load_config(None, None, None, &["ablate.battery=weak".into()]).unwrap();
        assert_eq!(cfg.ablate.battery, "weak");
    }

    #[test]
    fn resolved_roundtrip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
