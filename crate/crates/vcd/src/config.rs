//! Run configuration files and report persistence helpers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoding::{SamplingStrategy, VcdParams};
use crate::harness::PopeSetting;
use crate::toymodel::{SceneSpec, ToyModelSpec};
use crate::{Result, VcdError};

/// Where scene annotations come from: a JSON file (array of object-id
/// arrays) or a seeded generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    Path { path: PathBuf },
    Generate {
        num_scenes: usize,
        objects_per_scene: usize,
        seed: u64,
    },
}

fn default_queries_per_scene() -> usize {
    6
}

fn default_gamma() -> f64 {
    0.1
}

fn default_vcd() -> VcdParams {
    // POPE runs distort at the last step of the 999-step schedule.
    VcdParams { alpha: 1.0, beta: 0.1, noise_step_t: 999 }
}

fn default_strategy() -> String {
    "direct".to_string()
}

fn default_settings() -> Vec<PopeSetting> {
    PopeSetting::ALL.to_vec()
}

fn default_num_runs() -> usize {
    5
}

/// One experiment bundle: model, scenes, decoding knobs, and reporting
/// parameters. Command-line flags override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Path to a toy-model config; omit for the default calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub scenes: SceneSource,
    #[serde(default = "default_queries_per_scene")]
    pub queries_per_scene: usize,
    #[serde(default = "default_vcd")]
    pub vcd: VcdParams,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_settings")]
    pub settings: Vec<PopeSetting>,
    #[serde(default = "default_num_runs")]
    pub num_runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Base path for report output; `.json` and `.csv` are appended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VcdError::Config(format!("{}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| VcdError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(model) = &self.model {
            if !model.exists() {
                return Err(VcdError::Config(format!(
                    "model file not found: {}",
                    model.display()
                )));
            }
        }
        if let SceneSource::Path { path } = &self.scenes {
            if !path.exists() {
                return Err(VcdError::Config(format!(
                    "scene file not found: {}",
                    path.display()
                )));
            }
        }
        if self.queries_per_scene == 0 || !self.queries_per_scene.is_multiple_of(2) {
            return Err(VcdError::Config(format!(
                "queries_per_scene must be a positive even number, got {}",
                self.queries_per_scene
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(VcdError::Config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.num_runs == 0 {
            return Err(VcdError::Config("num_runs must be >= 1".into()));
        }
        if self.settings.is_empty() {
            return Err(VcdError::Config("settings must not be empty".into()));
        }
        self.vcd
            .validate()
            .map_err(|e| VcdError::Config(e.to_string()))?;
        self.parsed_strategy()?;
        Ok(())
    }

    pub fn parsed_strategy(&self) -> Result<SamplingStrategy> {
        self.strategy
            .parse()
            .map_err(|e: VcdError| VcdError::Config(e.to_string()))
    }

    pub fn load_model(&self) -> Result<ToyModelSpec> {
        match &self.model {
            Some(path) => ToyModelSpec::load(path),
            None => Ok(ToyModelSpec::default_calibration()),
        }
    }

    pub fn load_scenes(&self, spec: &ToyModelSpec) -> Result<Vec<SceneSpec>> {
        match &self.scenes {
            SceneSource::Path { path } => load_scene_file(path, spec),
            SceneSource::Generate {
                num_scenes,
                objects_per_scene,
                seed,
            } => crate::harness::generate_scenes_seeded(*num_scenes, *objects_per_scene, spec, *seed),
        }
    }
}

/// Reads a scene file: a JSON array of arrays of object ids.
pub fn load_scene_file(path: &Path, spec: &ToyModelSpec) -> Result<Vec<SceneSpec>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| VcdError::Config(format!("{}: {e}", path.display())))?;
    let raw: Vec<Vec<usize>> = serde_json::from_str(&text)
        .map_err(|e| VcdError::Config(format!("{}: {e}", path.display())))?;
    let m = spec.num_objects();
    raw.iter()
        .enumerate()
        .map(|(i, ids)| {
            if let Some(&bad) = ids.iter().find(|&&id| id >= m) {
                return Err(VcdError::Config(format!(
                    "scene {i}: object id {bad} out of range (m={m})"
                )));
            }
            Ok(SceneSpec::new(ids.iter().copied()))
        })
        .collect()
}

pub fn save_scene_file(path: &Path, scenes: &[SceneSpec]) -> Result<()> {
    let raw: Vec<Vec<usize>> = scenes
        .iter()
        .map(|s| s.present.iter().copied().collect())
        .collect();
    write_atomic(path, serde_json::to_string_pretty(&raw)?.as_bytes())
}

/// Writes via a temporary file in the same directory plus an atomic rename,
/// so a failed run never leaves a partial report behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_fill_in() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"scenes": {"num_scenes": 10, "objects_per_scene": 5, "seed": 1}}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.queries_per_scene, 6);
        assert_eq!(cfg.num_runs, 5);
        assert_eq!(cfg.vcd.alpha, 1.0);
        assert_eq!(cfg.vcd.beta, 0.1);
        assert_eq!(cfg.vcd.noise_step_t, 999);
        assert_eq!(cfg.gamma, 0.1);
        assert_eq!(cfg.settings.len(), 3);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(serde_json::from_str::<RunConfig>(
            r#"{"scenes": {"num_scenes": 1, "objects_per_scene": 5, "seed": 1}, "bogus": 3}"#
        )
        .is_err());
        let cfg: RunConfig = serde_json::from_str(
            r#"{"scenes": {"num_scenes": 10, "objects_per_scene": 5, "seed": 1}, "queries_per_scene": 5}"#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
        let cfg: RunConfig = serde_json::from_str(
            r#"{"scenes": {"path": "/definitely/not/here.json"}}"#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scene_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.json");
        let spec = ToyModelSpec::default_calibration();
        let scenes = vec![SceneSpec::new([0, 3, 7]), SceneSpec::new([1, 2])];
        save_scene_file(&path, &scenes).unwrap();
        let back = load_scene_file(&path, &spec).unwrap();
        assert_eq!(back, scenes);
    }

    #[test]
    fn scene_file_rejects_out_of_range_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.json");
        std::fs::write(&path, "[[0, 25]]").unwrap();
        let spec = ToyModelSpec::default_calibration();
        assert!(load_scene_file(&path, &spec).is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
