//! Pipeline configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid config. Relative
//! paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::ForestParams;
use crate::heatmap::{Overlap, CELL_SIZE, DEFAULT_REGION_THRESHOLD};
use crate::metrics::DEFAULT_FP_POINTS;
use crate::patches::{PATCH_SIZE, PATCH_STRIDE};
use crate::roi::DEFAULT_THRESHOLD;
use crate::scoring::{ScorerSpec, DEFAULT_BATCH_SIZE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of slide bundles, one subdirectory per slide id.
    pub slides: PathBuf,
    /// Directory of `<slide_id>.tmsk` tumor annotations; needed by the
    /// oracle scorer and by FROC.
    pub annotations: Option<PathBuf>,
    /// `patient_id,slide_id,node_class` reference labels.
    pub labels: PathBuf,
    /// Forest model, written in train mode and read in predict mode.
    pub model: Option<PathBuf>,
    /// Where every intermediate artifact goes.
    pub work: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            slides: "slides".into(),
            annotations: Some("annotations".into()),
            labels: "reference_slides.csv".into(),
            model: None,
            work: "work".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    pub threshold: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub size: u32,
    pub stride: u32,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            size: PATCH_SIZE,
            stride: PATCH_STRIDE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub cell: u32,
    pub overlap: Overlap,
    pub batch_size: usize,
    /// Also write a grayscale PNG next to each heatmap.
    pub png: bool,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            cell: CELL_SIZE,
            overlap: Overlap::Half,
            batch_size: DEFAULT_BATCH_SIZE,
            png: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub t: f64,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig {
            t: DEFAULT_REGION_THRESHOLD,
        }
    }
}

/// How slide classes are obtained from features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestMode {
    /// Out-of-fold predictions from patient-level cross-validation.
    #[default]
    Cv,
    /// Train on every labeled slide, save the model, predict.
    Train,
    /// Predict with an existing model.
    Predict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub froc_points: Vec<f64>,
    /// Cells at or above this value form candidate lesions for FROC.
    pub detection_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            froc_points: DEFAULT_FP_POINTS.to_vec(),
            detection_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub forest: u64,
    pub sample: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    pub mode: ForestMode,
    pub paths: Paths,
    pub roi: RoiConfig,
    pub patch: PatchConfig,
    pub heatmap: HeatmapConfig,
    pub scorer: ScorerSpec,
    pub postproc: PostprocConfig,
    pub forest: ForestParams,
    pub cv: CvConfig,
    pub eval: EvalConfig,
    pub seeds: Seeds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            workers: None,
            mode: ForestMode::Cv,
            paths: Paths::default(),
            roi: RoiConfig::default(),
            patch: PatchConfig::default(),
            heatmap: HeatmapConfig::default(),
            scorer: ScorerSpec::Oracle {
                sigma: 0.05,
                seed: 0,
            },
            postproc: PostprocConfig::default(),
            forest: ForestParams::default(),
            cv: CvConfig::default(),
            eval: EvalConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig =
            toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.slides, &mut p.labels, &mut p.work] {
            *path = base.join(&*path);
        }
        for path in [&mut p.annotations, &mut p.model].into_iter().flatten() {
            *path = base.join(&*path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.roi.threshold > 0.0 && self.roi.threshold <= 1.0) {
            return bad(format!(
                "roi.threshold {} outside (0, 1]",
                self.roi.threshold
            ));
        }
        if self.patch.size != PATCH_SIZE || self.patch.stride != PATCH_STRIDE {
            return bad(format!(
                "only {PATCH_SIZE}px patches at stride {PATCH_STRIDE} are supported"
            ));
        }
        if self.heatmap.cell != CELL_SIZE {
            return bad(format!("only {CELL_SIZE}px heatmap cells are supported"));
        }
        if self.heatmap.batch_size == 0 {
            return bad("heatmap.batch_size must be positive".into());
        }
        if !(self.postproc.t > 0.0 && self.postproc.t < 1.0) {
            return bad(format!("postproc.t {} outside (0, 1)", self.postproc.t));
        }
        let d = self.eval.detection_threshold;
        if !(d > 0.0 && d < 1.0) {
            return bad(format!("eval.detection_threshold {d} outside (0, 1)"));
        }
        let pts = &self.eval.froc_points;
        if pts.is_empty() || pts.windows(2).any(|w| w[0] >= w[1]) {
            return bad("eval.froc_points must be nonempty and ascending".into());
        }
        if self.cv.k < 2 {
            return bad("cv.k must be at least 2".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        if self.mode == ForestMode::Predict && self.paths.model.is_none() {
            return bad("predict mode needs paths.model".into());
        }
        self.forest.validate().or_else(|e| bad(e.to_string()))?;
        self.scorer.validate().or_else(|e| bad(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.roi.threshold, 0.8);
        assert_eq!((c.patch.size, c.patch.stride), (256, 128));
        assert_eq!(c.heatmap.cell, 128);
        assert_eq!(c.heatmap.overlap, Overlap::Half);
        assert_eq!(c.postproc.t, 0.9);
        assert_eq!(c.forest.n_trees, 500);
        assert_eq!(c.forest.features_per_split, 3);
        assert_eq!(c.eval.froc_points, vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig {
            mode: ForestMode::Train,
            ..Default::default()
        };
        c.paths.model = Some("m.json".into());
        c.heatmap.overlap = Overlap::None;
        assert_eq!(PipelineConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[roi]\nthreshold = 0.0",
            "[postproc]\nt = 1.0",
            "[patch]\nstride = 64",
            "[eval]\nfroc_points = [1.0, 0.5]",
            "[cv]\nk = 1",
            "mode = \"predict\"",
            "[forest]\nn_trees = 0",
            "[scorer]\nkind = \"constant\"\nvalue = 2.0",
        ] {
            assert!(
                matches!(
                    PipelineConfig::from_toml_str(text),
                    Err(ConfigError::Invalid(_))
                ),
                "{text}"
            );
        }
        assert!(matches!(
            PipelineConfig::from_toml_str("[roi]\nthreshhold = 0.5"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn paths_resolve_against_the_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.toml");
        std::fs::write(&f, "[paths]\nwork = \"out\"\n").unwrap();
        let c = PipelineConfig::load(&f).unwrap();
        assert_eq!(c.paths.work, dir.path().join("out"));
        assert_eq!(c.paths.annotations, Some(dir.path().join("annotations")));
    }
}
