//! Run configuration: a TOML file, then command-line overrides.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ged_core::gnn::ModelConfig;
use ged_core::learned::DistanceConfig;
use ged_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{usage, CliError, DistanceOverrides, GlobalArgs, ModelOverrides};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub graph_root: Option<PathBuf>,
    /// Share of each training class held out when a dataset has no
    /// validation split.
    pub validation_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            graph_root: None,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub distance: DistanceConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            output_dir: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            distance: DistanceConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `global.config` if given and applies the global flags.
    pub fn from_args(global: &GlobalArgs) -> Result<Self, CliError> {
        let mut cfg = match &global.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = global.seed {
            cfg.seed = s;
        }
        if let Some(j) = global.jobs {
            cfg.jobs = j;
        }
        if let Some(o) = &global.output {
            cfg.output_dir = o.clone();
        }
        if cfg.jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        cfg.train.seed = cfg.seed;
        cfg.train.jobs = cfg.jobs;
        Ok(cfg)
    }

    pub fn apply_model(&mut self, o: &ModelOverrides) {
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(k) = o.layers {
            self.model.layers = k;
        }
        if let Some(h) = o.hidden {
            self.model.hidden_dim = h;
        }
        if let Some(h) = o.heads {
            self.model.heads = h;
        }
    }

    /// Dataset location with relative paths taken against `data_root`. The
    /// path must exist.
    pub fn dataset_path(&self, flag: Option<&Path>, data_root: Option<&Path>) -> Result<PathBuf, CliError> {
        let p = flag
            .map(Path::to_path_buf)
            .or_else(|| self.dataset.path.clone())
            .ok_or_else(|| usage("no dataset given (use --dataset or [dataset] path in the config)"))?;
        let p = resolve(&p, data_root);
        if !p.exists() {
            return Err(usage(format!("dataset path {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn graph_root(&self, data_root: Option<&Path>) -> Result<Option<PathBuf>, CliError> {
        match &self.dataset.graph_root {
            None => Ok(None),
            Some(r) => {
                let r = resolve(r, data_root);
                if !r.is_dir() {
                    return Err(usage(format!("graph root {} is not a directory", r.display())));
                }
                Ok(Some(r))
            }
        }
    }
}

pub fn apply_distance(d: &mut DistanceConfig, o: &DistanceOverrides) {
    if let Some(t) = o.tau {
        d.tau_insert = t;
        d.tau_delete = t;
    }
    if o.spatial_blend {
        d.spatial_blend = true;
    }
}

fn resolve(p: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

/// Creates `base/run-<unix seconds>-seed<seed>`, adding a numeric suffix
/// instead of reusing an existing directory.
pub fn create_run_dir(base: &Path, seed: u64) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(base).map_err(|e| usage(format!("output directory {}: {e}", base.display())))?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let stem = format!("run-{stamp}-seed{seed}");
    for k in 0.. {
        let name = if k == 0 { stem.clone() } else { format!("{stem}-{k}") };
        let dir = base.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(usage(format!("cannot create {}: {e}", dir.display()))),
        }
    }
    unreachable!("run directory suffixes are unbounded")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 7\njobs = 2\n[model]\nvariant = \"gat\"\nlayers = 2\n[train]\nmargin = 10.0\n").unwrap();
        let global = GlobalArgs {
            config: Some(p),
            seed: Some(9),
            jobs: None,
            output: None,
            data_root: None,
        };
        let mut cfg = RunConfig::from_args(&global).unwrap();
        cfg.apply_model(&ModelOverrides { layers: Some(4), ..Default::default() });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.jobs, 2);
        assert_eq!(cfg.model.variant, ged_core::gnn::Variant::Gat);
        assert_eq!(cfg.model.layers, 4);
        assert_eq!(cfg.model.hidden_dim, 64);
        assert_eq!(cfg.train.margin, 10.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, "sead = 1\n").unwrap();
        let global = GlobalArgs { config: Some(p), seed: None, jobs: None, output: None, data_root: None };
        assert!(matches!(RunConfig::from_args(&global), Err(CliError::Usage(_))));
    }

    #[test]
    fn run_dirs_are_never_reused() {
        let dir = tempfile::tempdir().unwrap();
        let a = create_run_dir(dir.path(), 3).unwrap();
        let b = create_run_dir(dir.path(), 3).unwrap();
        assert_ne!(a, b);
        assert!(a.file_name().unwrap().to_str().unwrap().ends_with("seed3"));
    }
}
