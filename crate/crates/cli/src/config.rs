//! TOML run configuration. Every key is optional and falls back to the
//! library default; unknown keys are rejected.
//!
//! ```toml
//! [grid]
//! resolution = 1.0      # cell size, m
//! radius = 1.0          # observations within this distance of a center feed the cell
//! origin = [0.0, 0.0]   # lower-left corner; with `size`, fixes the grid
//! size = [48, 48]       # cells; otherwise the grid is fitted to the data
//!
//! [mean_shift]
//! bandwidth_theta = 0.7
//! bandwidth_rho = 0.4
//! convergence_eps = 1e-5
//! max_iter = 100
//! merge_theta = 0.35
//! merge_rho = 0.2
//! bin_seed_threshold = 256
//!
//! [em]
//! convergence_eps = 1e-5
//! max_iter = 100
//! min_weight = 1e-4
//!
//! [update]
//! decay_lambda = 0.5
//! eta_thres = 0.1
//! spawn_fit_cutoff = 0.1
//! spawn_covariance = "cluster-moments"   # or "bandwidth"
//!
//! [planner]
//! alpha = 0.5
//! nominal_speed = 1.2
//! flow_cost_cap = 20.72326583694641
//! connectivity = 8
//!
//! [experiment]
//! interval = 3600.0     # batch length, s
//! test_fraction = 0.1
//! rate_hz = 1.0         # track downsampling
//! variants = ["online", "history", "interval"]
//! ```

use std::path::Path;

use cliffmap::eval::VariantKind;
use cliffmap::ingest::BatchPlan;
use cliffmap::map::MapConfig;
use cliffmap::online::SpawnCovariance;
use cliffmap::planner::{Connectivity, PlannerConfig};
use cliffmap::synthetic::CellRegion;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub mean_shift: MeanShiftSection,
    pub em: EmSection,
    pub update: UpdateSection,
    pub planner: PlannerSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub resolution: Option<f64>,
    pub radius: Option<f64>,
    pub origin: Option<[f64; 2]>,
    pub size: Option<[usize; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanShiftSection {
    pub bandwidth_theta: Option<f64>,
    pub bandwidth_rho: Option<f64>,
    pub convergence_eps: Option<f64>,
    pub max_iter: Option<usize>,
    pub merge_theta: Option<f64>,
    pub merge_rho: Option<f64>,
    pub bin_seed_threshold: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSection {
    pub convergence_eps: Option<f64>,
    pub max_iter: Option<usize>,
    pub min_weight: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateSection {
    pub decay_lambda: Option<f64>,
    pub eta_thres: Option<f64>,
    pub spawn_fit_cutoff: Option<f64>,
    pub spawn_covariance: Option<SpawnCovarianceName>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpawnCovarianceName {
    ClusterMoments,
    Bandwidth,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub alpha: Option<f64>,
    pub nominal_speed: Option<f64>,
    pub flow_cost_cap: Option<f64>,
    pub connectivity: Option<u8>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub interval: Option<f64>,
    pub test_fraction: Option<f64>,
    pub rate_hz: Option<f64>,
    pub variants: Option<Vec<String>>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn map_config(&self) -> MapConfig {
        let mut cfg = MapConfig::default();
        let ms = &self.mean_shift;
        set(&mut cfg.mean_shift.bandwidth_theta, ms.bandwidth_theta);
        set(&mut cfg.mean_shift.bandwidth_rho, ms.bandwidth_rho);
        set(&mut cfg.mean_shift.convergence_eps, ms.convergence_eps);
        set(&mut cfg.mean_shift.max_iter, ms.max_iter);
        set(&mut cfg.mean_shift.merge_theta, ms.merge_theta);
        set(&mut cfg.mean_shift.merge_rho, ms.merge_rho);
        set(
            &mut cfg.mean_shift.bin_seed_threshold,
            ms.bin_seed_threshold,
        );
        // Spawning clusters with the same mean-shift settings as building.
        cfg.update.spawn_mean_shift = cfg.mean_shift.clone();
        set(&mut cfg.em.convergence_eps, self.em.convergence_eps);
        set(&mut cfg.em.max_iter, self.em.max_iter);
        set(&mut cfg.em.min_weight, self.em.min_weight);
        let up = &self.update;
        set(&mut cfg.update.decay_lambda, up.decay_lambda);
        set(&mut cfg.update.eta_thres, up.eta_thres);
        set(&mut cfg.update.spawn_fit_cutoff, up.spawn_fit_cutoff);
        if let Some(name) = up.spawn_covariance {
            cfg.update.spawn_covariance = match name {
                SpawnCovarianceName::ClusterMoments => SpawnCovariance::ClusterMoments,
                SpawnCovarianceName::Bandwidth => SpawnCovariance::Bandwidth,
            };
        }
        cfg
    }

    pub fn planner_config(&self) -> Result<PlannerConfig, String> {
        let mut cfg = PlannerConfig::default();
        set(&mut cfg.alpha, self.planner.alpha);
        set(&mut cfg.nominal_speed, self.planner.nominal_speed);
        set(&mut cfg.flow_cost_cap, self.planner.flow_cost_cap);
        if let Some(c) = self.planner.connectivity {
            cfg.connectivity = connectivity(c)?;
        }
        Ok(cfg)
    }

    pub fn batch_plan(&self, seed: u64) -> BatchPlan {
        let mut plan = BatchPlan {
            seed,
            ..BatchPlan::default()
        };
        set(&mut plan.interval, self.experiment.interval);
        set(&mut plan.test_fraction, self.experiment.test_fraction);
        plan
    }

    pub fn rate_hz(&self) -> f64 {
        self.experiment.rate_hz.unwrap_or(1.0)
    }

    pub fn variants(&self) -> Result<Option<Vec<VariantKind>>, String> {
        self.experiment
            .variants
            .as_ref()
            .map(|names| {
                names
                    .iter()
                    .map(|n| n.parse::<VariantKind>().map_err(|e| e.to_string()))
                    .collect()
            })
            .transpose()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    pair: Vec<RegionPair>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionPair {
    start: [usize; 4],
    goal: [usize; 4],
}

/// Start and goal regions of a two-condition scenario, paired by position.
pub fn load_regions(path: &Path) -> Result<(Vec<CellRegion>, Vec<CellRegion>), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let file: RegionFile = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let rect = |r: [usize; 4]| CellRegion::new(r[0], r[1], r[2], r[3]);
    Ok(file
        .pair
        .iter()
        .map(|p| (rect(p.start), rect(p.goal)))
        .unzip())
}

pub fn connectivity(c: u8) -> Result<Connectivity, String> {
    match c {
        4 => Ok(Connectivity::Four),
        8 => Ok(Connectivity::Eight),
        other => Err(format!("connectivity must be 4 or 8, got {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_library_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.map_config(), MapConfig::default());
        assert_eq!(cfg.planner_config().unwrap(), PlannerConfig::default());
        assert_eq!(cfg.batch_plan(0), BatchPlan::default());
    }

    #[test]
    fn documented_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let cfg: RunConfig = toml::from_str(&doc).unwrap();
        assert_eq!(cfg.map_config(), MapConfig::default());
        assert_eq!(cfg.planner_config().unwrap(), PlannerConfig::default());
        assert_eq!(cfg.variants().unwrap().unwrap().len(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[update]\nlambda = 0.3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[nonsense]\n").is_err());
    }

    #[test]
    fn values_override_defaults() {
        let cfg: RunConfig = toml::from_str("[update]\ndecay_lambda = 0.3\nspawn_covariance = \"bandwidth\"\n[planner]\nconnectivity = 4\n").unwrap();
        let m = cfg.map_config();
        assert_eq!(m.update.decay_lambda, 0.3);
        assert_eq!(m.update.spawn_covariance, SpawnCovariance::Bandwidth);
        assert_eq!(
            cfg.planner_config().unwrap().connectivity,
            Connectivity::Four
        );
    }
}
