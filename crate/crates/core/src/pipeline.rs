//! End-to-end orchestration: roi, heatmap, features, forest, staging and
//! evaluation, each writing its artifacts under the work directory.
//!
//! A stage whose outputs already exist is skipped, so an interrupted run
//! resumes where it stopped and a deleted artifact is rebuilt from its
//! inputs. `force` recomputes everything.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ForestMode, PipelineConfig};
use crate::forest::{cross_validate, train_forest, ForestModel, LabeledSlide};
use crate::heatmap::{
    extract_features, read_features_csv, stitch_heatmap, tissue_cells, write_features_csv, Heatmap,
    RegionFeatureVector, StitchOptions,
};
use crate::metrics::{
    auc, confusion_matrix, detections_from_heatmap, froc, ground_truth_regions,
    quadratic_weighted_kappa, EvalReport, ScoredSlide,
};
use crate::roi::{tissue_mask, TissueMask};
use crate::scoring::PatchScorer;
use crate::slide_io::{AnnotationMask, SlideBundle};
use crate::staging::{
    group_by_patient, read_slide_labels, read_stages, write_slide_labels, write_stages, SlideLabel,
    StagingRules,
};

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Roi,
    Patches,
    Heatmap,
    Features,
    Forest,
    Staging,
    Eval,
    /// Synthetic cohort generation.
    Cohort,
}

impl Stage {
    /// Process exit code reported when this stage fails.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Roi => 10,
            Stage::Heatmap => 11,
            Stage::Features => 12,
            Stage::Forest => 13,
            Stage::Staging => 14,
            Stage::Eval => 15,
            Stage::Patches => 16,
            Stage::Cohort => 17,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Roi => "roi",
            Stage::Heatmap => "heatmap",
            Stage::Features => "features",
            Stage::Forest => "forest",
            Stage::Staging => "staging",
            Stage::Eval => "eval",
            Stage::Patches => "patches",
            Stage::Cohort => "cohort",
        })
    }
}

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: BoxError,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<BoxError>) -> Self {
        PipelineError {
            stage,
            source: source.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

/// Artifact locations under the work directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub work: PathBuf,
}

impl Artifacts {
    pub fn new(work: impl Into<PathBuf>) -> Self {
        Artifacts { work: work.into() }
    }

    pub fn roi(&self, slide: &str) -> PathBuf {
        self.work.join("roi").join(format!("{slide}.tmsk"))
    }

    pub fn heatmap(&self, slide: &str) -> PathBuf {
        self.work.join("heatmaps").join(format!("{slide}.hmap"))
    }

    pub fn heatmap_png(&self, slide: &str) -> PathBuf {
        self.work.join("heatmaps").join(format!("{slide}.png"))
    }

    pub fn features(&self) -> PathBuf {
        self.work.join("features.csv")
    }

    pub fn cv(&self) -> PathBuf {
        self.work.join("cv.json")
    }

    pub fn model(&self) -> PathBuf {
        self.work.join("model.json")
    }

    pub fn predictions(&self) -> PathBuf {
        self.work.join("slide_predictions.csv")
    }

    pub fn stages(&self) -> PathBuf {
        self.work.join("stages.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.work.join("report.json")
    }
}

/// What a full run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub stages: BTreeMap<String, crate::staging::PNStage>,
    pub report: EvalReport,
}

/// A configured pipeline over the slides listed in the labels file.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub artifacts: Artifacts,
    /// Recompute artifacts even when they exist.
    pub force: bool,
    slides: Vec<SlideLabel>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate().at(Stage::Config)?;
        let file = File::open(&cfg.paths.labels)
            .map_err(|e| format!("labels {}: {e}", cfg.paths.labels.display()))
            .at(Stage::Config)?;
        let slides = read_slide_labels(BufReader::new(file)).at(Stage::Config)?;
        let artifacts = Artifacts::new(&cfg.paths.work);
        Ok(Pipeline {
            cfg,
            artifacts,
            force: false,
            slides,
        })
    }

    pub fn slides(&self) -> &[SlideLabel] {
        &self.slides
    }

    fn fresh(&self, path: &Path) -> bool {
        !self.force && path.exists()
    }

    fn bundle(&self, slide: &str) -> Result<SlideBundle, BoxError> {
        Ok(SlideBundle::open(self.cfg.paths.slides.join(slide))?)
    }

    fn annotation(&self, bundle: &SlideBundle) -> Result<Option<AnnotationMask>, BoxError> {
        let Some(dir) = &self.cfg.paths.annotations else {
            return Ok(None);
        };
        let path = dir.join(format!("{}.tmsk", bundle.id));
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(AnnotationMask::load_for(bundle, path)?))
    }

    /// Tissue masks for every slide.
    pub fn run_roi(&self) -> Result<(), PipelineError> {
        std::fs::create_dir_all(self.artifacts.work.join("roi")).at(Stage::Roi)?;
        self.slides
            .par_iter()
            .try_for_each(|s| -> Result<(), BoxError> {
                let out = self.artifacts.roi(&s.slide_id);
                if self.fresh(&out) {
                    return Ok(());
                }
                let bundle = self.bundle(&s.slide_id)?;
                let mask = tissue_mask(&bundle, self.cfg.roi.threshold)?;
                let tmp = out.with_extension("partial");
                mask.save(&tmp)?;
                std::fs::rename(tmp, out)?;
                Ok(())
            })
            .at(Stage::Roi)
    }

    fn stitch_one(
        &self,
        s: &SlideLabel,
        scorer: Option<&mut dyn PatchScorer>,
    ) -> Result<(), BoxError> {
        let out = self.artifacts.heatmap(&s.slide_id);
        if self.fresh(&out) {
            return Ok(());
        }
        let bundle = self.bundle(&s.slide_id)?;
        let tissue = TissueMask::load_for(&bundle, self.artifacts.roi(&s.slide_id))?;
        let opts = StitchOptions {
            overlap: self.cfg.heatmap.overlap,
            batch_size: self.cfg.heatmap.batch_size,
        };
        let hm = match scorer {
            Some(sc) => stitch_heatmap(&bundle, &tissue, sc, opts)?,
            None => {
                let annot = self.annotation(&bundle)?;
                let mut sc = self.cfg.scorer.build(&annot.iter().collect::<Vec<_>>())?;
                stitch_heatmap(&bundle, &tissue, sc.as_mut(), opts)?
            }
        };
        write_atomic(&out, &hm.to_bytes())?;
        if self.cfg.heatmap.png {
            hm.save_png(self.artifacts.heatmap_png(&s.slide_id), 1)?;
        }
        Ok(())
    }

    /// Heatmaps for every slide. Built-in scorers run one per slide in
    /// parallel; an external scorer is spawned once and fed slide by slide.
    pub fn run_heatmaps(&self) -> Result<(), PipelineError> {
        std::fs::create_dir_all(self.artifacts.work.join("heatmaps")).at(Stage::Heatmap)?;
        if self.cfg.scorer.is_builtin() {
            self.slides
                .par_iter()
                .try_for_each(|s| self.stitch_one(s, None))
                .at(Stage::Heatmap)
        } else {
            let pending: Vec<&SlideLabel> = self
                .slides
                .iter()
                .filter(|s| !self.fresh(&self.artifacts.heatmap(&s.slide_id)))
                .collect();
            if pending.is_empty() {
                return Ok(());
            }
            let mut scorer = self.cfg.scorer.build(&[]).at(Stage::Heatmap)?;
            for s in pending {
                self.stitch_one(s, Some(scorer.as_mut()))
                    .at(Stage::Heatmap)?;
            }
            Ok(())
        }
    }

    /// `features.csv` from the heatmaps and tissue masks.
    pub fn run_features(&self) -> Result<(), PipelineError> {
        let out = self.artifacts.features();
        if self.fresh(&out) {
            return Ok(());
        }
        let t = self.cfg.postproc.t;
        let rows = self
            .slides
            .par_iter()
            .map(|s| -> Result<(String, RegionFeatureVector), BoxError> {
                let bundle = self.bundle(&s.slide_id)?;
                let tissue = TissueMask::load_for(&bundle, self.artifacts.roi(&s.slide_id))?;
                let hm = Heatmap::load(self.artifacts.heatmap(&s.slide_id))?;
                let fv = extract_features(&hm, &tissue_cells(&bundle, &tissue), t)?;
                Ok((s.slide_id.clone(), fv))
            })
            .collect::<Result<Vec<_>, _>>()
            .at(Stage::Features)?;
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &rows).at(Stage::Features)?;
        write_atomic(&out, &buf).at(Stage::Features)
    }

    fn labeled_features(&self) -> Result<Vec<LabeledSlide>, BoxError> {
        let rows = read_features_csv(BufReader::new(File::open(self.artifacts.features())?))?;
        let by_id: HashMap<String, RegionFeatureVector> = rows.into_iter().collect();
        self.slides
            .iter()
            .map(|s| {
                let features = *by_id
                    .get(&s.slide_id)
                    .ok_or_else(|| format!("no features for slide {}", s.slide_id))?;
                Ok(LabeledSlide {
                    patient_id: s.patient_id.clone(),
                    slide_id: s.slide_id.clone(),
                    features,
                    class: s.node_class,
                })
            })
            .collect()
    }

    fn forest_predictions(&self) -> Result<Vec<SlideLabel>, BoxError> {
        let samples = self.labeled_features()?;
        let seed = self.cfg.seeds.forest;
        let predicted: Vec<_> = match self.cfg.mode {
            ForestMode::Cv => {
                let res = cross_validate(&samples, self.cfg.cv.k, &self.cfg.forest, seed)?;
                let json = serde_json::to_string_pretty(&res)? + "\n";
                write_atomic(&self.artifacts.cv(), json.as_bytes())?;
                res.predictions.into_iter().map(|(_, c)| c).collect()
            }
            ForestMode::Train | ForestMode::Predict => {
                let model = if self.cfg.mode == ForestMode::Train {
                    let train: Vec<_> = samples.iter().map(|s| (s.features, s.class)).collect();
                    let m = train_forest(&train, &self.cfg.forest, seed)?;
                    let path = self
                        .cfg
                        .paths
                        .model
                        .clone()
                        .unwrap_or_else(|| self.artifacts.model());
                    write_atomic(&path, m.to_json().as_bytes())?;
                    m
                } else {
                    let path = self
                        .cfg
                        .paths
                        .model
                        .as_ref()
                        .ok_or("predict mode needs a model path")?;
                    ForestModel::load(path).map_err(|e| format!("model {}: {e}", path.display()))?
                };
                samples
                    .iter()
                    .map(|s| Ok(model.predict(&s.features)?.class))
                    .collect::<Result<_, BoxError>>()?
            }
        };
        Ok(samples
            .iter()
            .zip(predicted)
            .map(|(s, c)| SlideLabel {
                patient_id: s.patient_id.clone(),
                slide_id: s.slide_id.clone(),
                node_class: c,
            })
            .collect())
    }

    /// `slide_predictions.csv` from the forest.
    pub fn run_forest(&self) -> Result<(), PipelineError> {
        let out = self.artifacts.predictions();
        if self.fresh(&out) {
            return Ok(());
        }
        let preds = self.forest_predictions().at(Stage::Forest)?;
        let mut buf = Vec::new();
        write_slide_labels(&mut buf, &preds).at(Stage::Forest)?;
        write_atomic(&out, &buf).at(Stage::Forest)
    }

    /// `stages.csv` from the slide predictions.
    pub fn run_staging(&self) -> Result<(), PipelineError> {
        let out = self.artifacts.stages();
        if self.fresh(&out) {
            return Ok(());
        }
        let run = || -> Result<(), BoxError> {
            let preds =
                read_slide_labels(BufReader::new(File::open(self.artifacts.predictions())?))?;
            let stages = StagingRules::default().stage_all(&group_by_patient(&preds))?;
            let mut buf = Vec::new();
            write_stages(&mut buf, &stages)?;
            write_atomic(&out, &buf)?;
            Ok(())
        };
        run().at(Stage::Staging)
    }

    fn evaluate(&self) -> Result<EvalReport, BoxError> {
        let mut report = EvalReport::default();
        let preds = read_slide_labels(BufReader::new(File::open(self.artifacts.predictions())?))?;
        let predicted: HashMap<&str, _> = preds
            .iter()
            .map(|p| (p.slide_id.as_str(), p.node_class))
            .collect();
        let pairs: Vec<_> = self
            .slides
            .iter()
            .map(|s| {
                let p = predicted
                    .get(s.slide_id.as_str())
                    .ok_or_else(|| format!("no prediction for slide {}", s.slide_id))?;
                Ok((s.node_class, *p))
            })
            .collect::<Result<_, BoxError>>()?;
        let cm = confusion_matrix(&pairs)?;
        report.slide_accuracy = Some(cm.accuracy());
        report.confusion = Some(cm);

        let reference = StagingRules::default().stage_all(&group_by_patient(&self.slides))?;
        let stages = read_stages(BufReader::new(File::open(self.artifacts.stages())?))?;
        let stage_pairs: Vec<_> = reference
            .iter()
            .map(|(p, r)| {
                Ok((
                    *r,
                    *stages.get(p).ok_or_else(|| format!("no stage for {p}"))?,
                ))
            })
            .collect::<Result<_, BoxError>>()?;
        report.kappa = Some(quadratic_weighted_kappa(&stage_pairs)?);

        let maps = self
            .slides
            .iter()
            .map(|s| Heatmap::load(self.artifacts.heatmap(&s.slide_id)))
            .collect::<Result<Vec<_>, _>>()?;
        let scored: Vec<ScoredSlide> = self
            .slides
            .iter()
            .zip(&maps)
            .map(|(s, hm)| ScoredSlide {
                slide_id: s.slide_id.clone(),
                label: s.node_class.into(),
                score: hm.max() as f64,
            })
            .collect();
        report.auc = auc(&scored).ok();

        if self.cfg.paths.annotations.is_some() {
            let mut truth = Vec::new();
            let mut detections = Vec::new();
            for hm in &maps {
                let bundle = self.bundle(&hm.slide_id)?;
                if let Some(a) = self.annotation(&bundle)? {
                    truth.extend(ground_truth_regions(
                        &a,
                        hm.cell_size,
                        hm.height(),
                        hm.width(),
                    ));
                }
                detections.extend(detections_from_heatmap(
                    hm,
                    self.cfg.eval.detection_threshold,
                ));
            }
            report.froc = froc(&detections, &truth, maps.len(), &self.cfg.eval.froc_points).ok();
        }
        Ok(report)
    }

    /// `report.json` comparing predictions with the reference labels.
    pub fn run_eval(&self) -> Result<EvalReport, PipelineError> {
        let out = self.artifacts.report();
        let report = self.evaluate().at(Stage::Eval)?;
        write_atomic(&out, report.to_json().as_bytes()).at(Stage::Eval)?;
        Ok(report)
    }

    fn run_all(&self) -> Result<RunSummary, PipelineError> {
        std::fs::create_dir_all(&self.artifacts.work).at(Stage::Config)?;
        self.run_roi()?;
        self.run_heatmaps()?;
        self.run_features()?;
        self.run_forest()?;
        self.run_staging()?;
        let report = self.run_eval()?;
        let stages = read_stages(BufReader::new(
            File::open(self.artifacts.stages()).at(Stage::Staging)?,
        ))
        .at(Stage::Staging)?;
        Ok(RunSummary { stages, report })
    }

    /// Runs every stage inside a worker pool sized by the config.
    pub fn run(&self) -> Result<RunSummary, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers.unwrap_or(0))
            .build()
            .at(Stage::Config)?;
        pool.install(|| self.run_all())
    }
}

/// Builds and runs a pipeline from a config.
pub fn run_pipeline(cfg: PipelineConfig) -> Result<RunSummary, PipelineError> {
    Pipeline::new(cfg)?.run()
}

/// Default config with paths pointing into a synthetic cohort directory.
pub fn cohort_config(cohort_dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.resolve_paths(cohort_dir);
    cfg
}

/// Writer helper for CLI subcommands.
pub fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{synth_cohort, CohortOptions};
    use crate::forest::ForestParams;
    use crate::scoring::ScorerSpec;
    use crate::staging::PNStage;

    fn tiny(dir: &Path) -> PipelineConfig {
        synth_cohort(
            &CohortOptions {
                n_patients: 6,
                seed: 3,
                ..Default::default()
            },
            dir,
        )
        .unwrap();
        let mut cfg = cohort_config(dir);
        cfg.forest = ForestParams {
            n_trees: 20,
            ..Default::default()
        };
        cfg.cv.k = 3;
        cfg
    }

    #[test]
    fn runs_resumes_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let first = run_pipeline(cfg.clone()).unwrap();
        assert_eq!(first.stages.len(), 6);
        let a = Artifacts::new(&cfg.paths.work);
        let report = std::fs::read(a.report()).unwrap();
        let hm = std::fs::read(a.heatmap("patient_000_node_0")).unwrap();
        // drop a heatmap and the report, rerun: identical bytes
        std::fs::remove_file(a.heatmap("patient_000_node_0")).unwrap();
        std::fs::remove_file(a.report()).unwrap();
        run_pipeline(cfg).unwrap();
        assert_eq!(std::fs::read(a.heatmap("patient_000_node_0")).unwrap(), hm);
        assert_eq!(std::fs::read(a.report()).unwrap(), report);
    }

    #[test]
    fn missing_model_fails_at_forest_without_stages() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.mode = ForestMode::Predict;
        cfg.paths.model = Some(dir.path().join("no_such_model.json"));
        cfg.scorer = ScorerSpec::Constant { value: 0.0 };
        let err = run_pipeline(cfg.clone()).unwrap_err();
        assert_eq!(err.stage, Stage::Forest);
        assert_eq!(err.exit_code(), 13);
        assert!(!Artifacts::new(&cfg.paths.work).stages().exists());
    }

    #[test]
    fn noiseless_oracle_on_negative_cohort_stages_pn0() {
        let dir = tempfile::tempdir().unwrap();
        synth_cohort(
            &CohortOptions {
                n_patients: 3,
                class_mix: "1,0,0,0".parse().unwrap(),
                ..Default::default()
            },
            dir.path(),
        )
        .unwrap();
        let mut cfg = cohort_config(dir.path());
        cfg.mode = ForestMode::Train;
        cfg.forest.n_trees = 5;
        let out = run_pipeline(cfg).unwrap();
        assert!(out.stages.values().all(|s| *s == PNStage::PN0));
        assert_eq!(out.report.kappa, Some(1.0));
    }
}
