use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tmc_core::analysis::{DEFAULT_BOOTSTRAP_REPEATS, DEFAULT_DEGREE, DEFAULT_RESTARTS};
use tmc_core::jarzynski::DEFAULT_N_STEPS;
use tmc_core::lattice::RegionUnion;
use tmc_core::sampler::{params_from_p, params_from_temperature, NishimoriParams};
use tmc_core::DEFAULT_CHI;

pub const DEFAULT_OUTPUT_ROOT: &str = "tmc-output";
pub const OUTPUT_ROOT_ENV: &str = "TMC_OUTPUT_ROOT";

/// Invalid configuration; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(field: &str, msg: impl std::fmt::Display) -> anyhow::Error {
    UsageError(format!("config.{field}: {msg}")).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    S2,
    Tee,
    Anyon,
    Collapse,
    OracleCheck,
}

/// Bond subset whose Renyi-2 entropy an `s2` run estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionSpec {
    /// First half of the bonds in id order.
    #[serde(rename = "half")]
    Half,
    #[serde(untagged)]
    Union(RegionUnion),
}

impl RegionSpec {
    pub fn label(self) -> &'static str {
        match self {
            RegionSpec::Half => "half",
            RegionSpec::Union(u) => u.label(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("half") {
            Some(RegionSpec::Half)
        } else {
            RegionUnion::parse(s).map(RegionSpec::Union)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Results table to read; defaults to the campaign's own `results.csv`.
    pub input: Option<PathBuf>,
    pub observable: String,
    pub eta: f64,
    pub eta_range: Option<(f64, f64)>,
    pub degree: usize,
    pub n_restarts: usize,
    pub bootstrap_repeats: usize,
    /// Fixed critical temperature (TEE collapse only).
    pub t_c: Option<f64>,
    pub nu_range: (f64, f64),
    pub max_failure_fraction: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            input: None,
            observable: "T_l".into(),
            eta: 0.16,
            eta_range: Some((0.14, 0.18)),
            degree: DEFAULT_DEGREE,
            n_restarts: DEFAULT_RESTARTS,
            bootstrap_repeats: DEFAULT_BOOTSTRAP_REPEATS,
            t_c: None,
            nu_range: (0.2, 10.0),
            max_failure_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub mode: Mode,
    pub name: Option<String>,
    pub sizes: Vec<usize>,
    pub temperatures: Option<Vec<f64>>,
    pub probabilities: Option<Vec<f64>>,
    pub chi: usize,
    pub n_steps: usize,
    pub updates_per_step: usize,
    pub n_trajectories: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub regions: Vec<RegionSpec>,
    pub path_length: Option<usize>,
    pub output_root: Option<PathBuf>,
    /// Steps between trajectory checkpoints; 0 disables them.
    pub checkpoint_interval: usize,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub analysis: AnalysisConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            mode: Mode::S2,
            name: None,
            sizes: Vec::new(),
            temperatures: None,
            probabilities: None,
            chi: DEFAULT_CHI,
            n_steps: DEFAULT_N_STEPS,
            updates_per_step: 1,
            n_trajectories: 100,
            n_samples: 10_000,
            seed: 0,
            regions: Vec::new(),
            path_length: None,
            output_root: None,
            checkpoint_interval: 1000,
            threads: 0,
            analysis: AnalysisConfig::default(),
        }
    }
}

/// Temperature grid used when neither list is given.
pub fn default_temperatures() -> Vec<f64> {
    (0..=10).map(|k| ((25 + 10 * k) as f64) / 100.0).collect()
}

/// One `(T, p)` grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub temperature: f64,
    pub params: NishimoriParams,
}

impl CampaignConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let mode = serde_json::to_value(self.mode).unwrap();
            mode.as_str().unwrap().to_string()
        })
    }

    pub fn grid(&self) -> anyhow::Result<Vec<GridPoint>> {
        let points = match (&self.temperatures, &self.probabilities) {
            (Some(_), Some(_)) => {
                return Err(usage(
                    "temperatures",
                    "temperatures and probabilities are mutually exclusive; give exactly one",
                ))
            }
            (Some(ts), None) => ts
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let params = params_from_temperature(t)
                        .map_err(|e| usage(&format!("temperatures[{i}]"), e))?;
                    Ok(GridPoint {
                        temperature: t,
                        params,
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?,
            (None, Some(ps)) => ps
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let params =
                        params_from_p(p).map_err(|e| usage(&format!("probabilities[{i}]"), e))?;
                    Ok(GridPoint {
                        temperature: params.temperature,
                        params,
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?,
            (None, None) => default_temperatures()
                .into_iter()
                .map(|t| {
                    Ok(GridPoint {
                        temperature: t,
                        params: params_from_temperature(t)?,
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?,
        };
        if points.is_empty() {
            return Err(usage("temperatures", "grid is empty"));
        }
        Ok(points)
    }

    /// Regions an entropy campaign runs over.
    pub fn effective_regions(&self) -> Vec<RegionSpec> {
        match self.mode {
            Mode::Tee => RegionUnion::ALL
                .into_iter()
                .map(RegionSpec::Union)
                .collect(),
            _ if self.regions.is_empty() => vec![RegionSpec::Half],
            _ => self.regions.clone(),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if matches!(self.mode, Mode::Collapse) {
            let a = &self.analysis;
            if a.degree < 1 {
                return Err(usage("analysis.degree", "must be at least 1"));
            }
            if a.bootstrap_repeats == 1 {
                return Err(usage(
                    "analysis.bootstrap_repeats",
                    "must be 0 (off) or at least 2",
                ));
            }
            if !(a.nu_range.0 > 0.0 && a.nu_range.1 > a.nu_range.0) {
                return Err(usage("analysis.nu_range", "needs 0 < lo < hi"));
            }
            return Ok(());
        }
        if self.sizes.is_empty() {
            return Err(usage("sizes", "at least one lattice size is required"));
        }
        if let Some((i, _)) = self.sizes.iter().enumerate().find(|(_, &l)| l == 0) {
            return Err(usage(&format!("sizes[{i}]"), "L must be at least 1"));
        }
        self.grid()?;
        if self.chi == 0 {
            return Err(usage("chi", "must be at least 1"));
        }
        match self.mode {
            Mode::S2 | Mode::Tee => {
                if self.n_steps == 0 {
                    return Err(usage("n_steps", "must be at least 1"));
                }
                if self.updates_per_step == 0 {
                    return Err(usage("updates_per_step", "must be at least 1"));
                }
                if self.n_trajectories < 2 {
                    return Err(usage("n_trajectories", "must be at least 2"));
                }
                let needs_lw = self
                    .effective_regions()
                    .iter()
                    .any(|r| matches!(r, RegionSpec::Union(_)));
                if needs_lw {
                    if let Some((i, l)) = self.sizes.iter().enumerate().find(|(_, &l)| l % 5 != 0) {
                        return Err(usage(
                            &format!("sizes[{i}]"),
                            format!("Levin-Wen regions need L divisible by 5, got {l}"),
                        ));
                    }
                }
                if self.grid()?.iter().any(|g| g.params.zero_temperature) {
                    return Err(usage("temperatures", "entropy runs need T > 0 (p > 0)"));
                }
            }
            Mode::Anyon => {
                if self.n_samples < 2 {
                    return Err(usage("n_samples", "must be at least 2"));
                }
                if self.grid()?.iter().any(|g| g.params.zero_temperature) {
                    return Err(usage("temperatures", "anyon runs need T > 0 (p > 0)"));
                }
                if let Some(len) = self.path_length {
                    if let Some((i, l)) = self.sizes.iter().enumerate().find(|(_, &l)| len > l) {
                        return Err(usage(
                            &format!("sizes[{i}]"),
                            format!("path_length {len} does not fit L={l}"),
                        ));
                    }
                }
            }
            Mode::OracleCheck => {
                if let Some((i, l)) = self.sizes.iter().enumerate().find(|(_, &l)| l > 2) {
                    return Err(usage(
                        &format!("sizes[{i}]"),
                        format!("oracle checks enumerate exactly; L={l} > 2"),
                    ));
                }
            }
            Mode::Collapse => unreachable!(),
        }
        Ok(())
    }

    /// Fields that must agree between a run and the directory it resumes.
    pub fn physics_key(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).unwrap();
        let obj = v.as_object_mut().unwrap();
        for volatile in ["output_root", "threads", "checkpoint_interval", "name"] {
            obj.remove(volatile);
        }
        v
    }
}

/// Flag values layered over the JSON config.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub name: Option<String>,
    /// Lattice sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Temperatures, comma separated (conflicts with --probabilities).
    #[arg(long, value_delimiter = ',', conflicts_with = "probabilities")]
    pub temperatures: Option<Vec<f64>>,
    /// Flip probabilities, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub probabilities: Option<Vec<f64>>,
    #[arg(long)]
    pub chi: Option<usize>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub updates_per_step: Option<usize>,
    #[arg(long)]
    pub n_trajectories: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regions for s2 runs: half, AC, BC, C, ABC.
    #[arg(long, value_delimiter = ',', value_parser = parse_region)]
    pub regions: Option<Vec<RegionSpec>>,
    #[arg(long)]
    pub path_length: Option<usize>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse_region(s: &str) -> Result<RegionSpec, String> {
    RegionSpec::parse(s)
        .ok_or_else(|| format!("unknown region {s:?}; expected half, AC, BC, C or ABC"))
}

impl Overrides {
    pub fn apply(&self, cfg: &mut CampaignConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(
            mode,
            sizes,
            chi,
            n_steps,
            updates_per_step,
            n_trajectories,
            n_samples,
            seed,
            regions,
            checkpoint_interval,
            threads
        );
        if let Some(n) = &self.name {
            cfg.name = Some(n.clone());
        }
        if let Some(len) = self.path_length {
            cfg.path_length = Some(len);
        }
        if let Some(ts) = &self.temperatures {
            cfg.temperatures = Some(ts.clone());
            cfg.probabilities = None;
        }
        if let Some(ps) = &self.probabilities {
            cfg.probabilities = Some(ps.clone());
            cfg.temperatures = None;
        }
    }
}

/// Output root: flag, then environment, then config, then the default.
pub fn output_root(flag: Option<&Path>, cfg: &CampaignConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(env) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    cfg.output_root
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}
