//! The `pnstage` command line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cohort::{synth_cohort, ClassMix, CohortOptions};
use crate::config::{ForestMode, PipelineConfig};
use crate::forest::{
    cross_validate, train_forest, ClassWeight, ForestModel, ForestParams, LabeledSlide,
};
use crate::heatmap::{
    extract_features, read_features_csv, stitch_heatmap, tissue_cells, write_features_csv, Heatmap,
    Overlap, RegionFeatureVector, StitchOptions,
};
use crate::metrics::{
    auc, confusion_matrix, detections_from_heatmap, froc, ground_truth_regions,
    quadratic_weighted_kappa, EvalReport, ScoredSlide,
};
use crate::patches::{balanced_sample, enumerate_patches, PatchRef, SampleOptions};
use crate::pipeline::{create, AtStage, BoxError, Pipeline, PipelineError, Stage};
use crate::roi::{tissue_mask, TissueMask};
use crate::scoring::{protocol, ScorerSpec};
use crate::slide_io::{AnnotationMask, SlideBundle};
use crate::staging::{
    group_by_patient, read_slide_labels, read_stages, write_slide_labels, write_stages, SlideLabel,
    StagingRules,
};

#[derive(Debug, Parser)]
#[command(
    name = "pnstage",
    version,
    about = "Lymph-node metastasis heatmaps, slide classification and pN-staging"
)]
pub struct Cli {
    /// Pipeline config (TOML); its values are the defaults for every flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "PNSTAGE_WORKERS")]
    pub workers: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tissue mask of a slide at 32x downsample.
    Roi(RoiArgs),
    /// Labelled patch grid of a slide.
    Patches(PatchesArgs),
    /// Balanced tumor/normal patch sample.
    Sample(SampleArgs),
    /// Tumor probability heatmap of a slide.
    Heatmap(HeatmapArgs),
    /// Slide features from heatmaps.
    Features(FeaturesArgs),
    /// Train a random forest on slide features.
    TrainRf(TrainArgs),
    /// Patient-level cross-validation of the forest.
    Cv(CvArgs),
    /// Classify slides with a trained forest.
    PredictRf(PredictArgs),
    /// pN-stage per patient from slide classes.
    Stage(StageArgs),
    /// Evaluation metrics.
    Eval(EvalArgs),
    /// The whole pipeline from a config.
    Run(RunArgs),
    /// Write a synthetic patient cohort.
    SynthCohort(SynthArgs),
    /// Minimal external scorer for protocol tests.
    #[command(hide = true)]
    ScorerStub(StubArgs),
}

#[derive(Debug, Args)]
pub struct RoiArgs {
    #[arg(long)]
    pub slide: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PatchesArgs {
    #[arg(long)]
    pub slide: PathBuf,
    /// Tissue mask; computed on the fly when absent.
    #[arg(long)]
    pub tissue: Option<PathBuf>,
    /// Tumor annotation; all patches are normal when absent.
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Patch CSVs written by `patches`.
    #[arg(long = "patches", required = true, num_args = 1..)]
    pub patches: Vec<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Take normal patches only from slides without tumor.
    #[arg(long)]
    pub normals_from_normal_slides: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long, required_unless_present = "ensemble")]
    pub slide: Option<PathBuf>,
    #[arg(long)]
    pub tissue: Option<PathBuf>,
    /// Annotation for the oracle scorer.
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    /// `constant:V`, `oracle:SIGMA[:SEED]` or `external:PROGRAM ARGS...`.
    #[arg(long)]
    pub scorer: Option<ScorerSpec>,
    #[arg(long)]
    pub overlap: Option<Overlap>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seconds to wait for an external scorer's answer.
    #[arg(long)]
    pub timeout: Option<u64>,
    /// Average existing heatmaps cellwise instead of scoring.
    #[arg(long, num_args = 1.., conflicts_with = "slide")]
    pub ensemble: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a PNG rendering.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long = "heatmap", required = true, num_args = 1..)]
    pub heatmaps: Vec<PathBuf>,
    /// Directory of slide bundles named by slide id.
    #[arg(long)]
    pub slides: PathBuf,
    /// Directory of `<slide_id>.tmsk` tissue masks.
    #[arg(long)]
    pub roi: PathBuf,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub features_per_split: Option<usize>,
    /// Reweight classes inversely to their frequency.
    #[arg(long)]
    pub balanced: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// `patient_id,slide_id,node_class` reference labels.
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// JSON result; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Slide to patient mapping; otherwise the patient is the slide id up
    /// to `_node_`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Alternative staging rule table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Auc,
    Froc,
    Kappa,
    Confusion,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub task: EvalTask,
    /// Reference CSV: slide labels (auc, confusion) or stages (kappa).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Predicted CSV: slide labels (confusion) or stages (kappa).
    #[arg(long)]
    pub predicted: Option<PathBuf>,
    /// Features CSV; f7 is the slide score for auc.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Heatmaps for froc.
    #[arg(long = "heatmap", num_args = 1..)]
    pub heatmaps: Vec<PathBuf>,
    /// Directory of `<slide_id>.tmsk` annotations for froc.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Directory of slide bundles for froc.
    #[arg(long)]
    pub slides: Option<PathBuf>,
    /// Candidate lesion threshold for froc.
    #[arg(long)]
    pub t: Option<f64>,
    /// JSON report; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Recompute artifacts that already exist.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub patients: usize,
    /// `negative,itc,micro,macro` slide weights.
    #[arg(long)]
    pub mix: Option<ClassMix>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub slide_size: u32,
    #[arg(long)]
    pub annotated_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StubArgs {
    /// Answer every patch with this probability.
    #[arg(long, conflicts_with = "tint")]
    pub constant: Option<f32>,
    /// Answer 1.0 when a patch's mean green is below its mean red.
    #[arg(long)]
    pub tint: bool,
    /// Handshake magic to send back.
    #[arg(long, default_value = "PNS1")]
    pub magic: String,
}

fn read_labels(path: &Path) -> Result<Vec<SlideLabel>, BoxError> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(read_slide_labels(BufReader::new(f))?)
}

fn read_features(path: &Path) -> Result<Vec<(String, RegionFeatureVector)>, BoxError> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(read_features_csv(BufReader::new(f))?)
}

fn labeled(features: &Path, labels: &Path) -> Result<Vec<LabeledSlide>, BoxError> {
    let by_id: BTreeMap<String, RegionFeatureVector> =
        read_features(features)?.into_iter().collect();
    read_labels(labels)?
        .into_iter()
        .map(|l| {
            let features = *by_id
                .get(&l.slide_id)
                .ok_or_else(|| format!("no features for slide {}", l.slide_id))?;
            Ok(LabeledSlide {
                patient_id: l.patient_id,
                slide_id: l.slide_id,
                features,
                class: l.node_class,
            })
        })
        .collect()
}

fn write_json(out: Option<&Path>, json: &str) -> Result<(), BoxError> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(json.as_bytes())?;
            w.flush()?;
        }
        None => print!("{json}"),
    }
    Ok(())
}

struct Ctx {
    cfg: PipelineConfig,
}

impl Ctx {
    fn forest_params(&self, a: &ForestArgs) -> (ForestParams, u64) {
        let mut p = self.cfg.forest;
        p.n_trees = a.trees.unwrap_or(p.n_trees);
        p.max_depth = a.max_depth.or(p.max_depth);
        p.min_samples_leaf = a.min_samples_leaf.unwrap_or(p.min_samples_leaf);
        p.features_per_split = a.features_per_split.unwrap_or(p.features_per_split);
        if a.balanced {
            p.class_weight = ClassWeight::Balanced;
        }
        (p, a.seed.unwrap_or(self.cfg.seeds.forest))
    }

    fn roi(&self, a: &RoiArgs) -> Result<(), BoxError> {
        let bundle = SlideBundle::open(&a.slide)?;
        let mask = tissue_mask(&bundle, a.threshold.unwrap_or(self.cfg.roi.threshold))?;
        if let Some(parent) = a.out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        mask.save(&a.out)?;
        log::info!(
            "{}: {} tissue pixels at level {}",
            bundle.id,
            mask.area(),
            mask.level
        );
        Ok(())
    }

    fn patches(&self, a: &PatchesArgs) -> Result<(), BoxError> {
        let bundle = SlideBundle::open(&a.slide)?;
        let tissue = match &a.tissue {
            Some(p) => TissueMask::load_for(&bundle, p)?,
            None => tissue_mask(&bundle, self.cfg.roi.threshold)?,
        };
        let annot = a
            .annotation
            .as_ref()
            .map(|p| AnnotationMask::load_for(&bundle, p))
            .transpose()?;
        let patches = enumerate_patches(&bundle, &tissue, annot.as_ref())?;
        let mut w = csv::Writer::from_writer(create(&a.out)?);
        for p in &patches {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    fn sample(&self, a: &SampleArgs) -> Result<(), BoxError> {
        let mut by_slide: BTreeMap<String, Vec<PatchRef>> = BTreeMap::new();
        for path in &a.patches {
            let mut r = csv::Reader::from_path(path)?;
            for p in r.deserialize::<PatchRef>() {
                let p = p?;
                by_slide.entry(p.slide_id.clone()).or_default().push(p);
            }
        }
        let opts = SampleOptions {
            normals_from_tumor_slides: !a.normals_from_normal_slides,
        };
        let drawn = balanced_sample(
            &by_slide,
            a.n,
            a.seed.unwrap_or(self.cfg.seeds.sample),
            opts,
        )?;
        let mut w = csv::Writer::from_writer(create(&a.out)?);
        for p in &drawn {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    fn heatmap(&self, a: &HeatmapArgs) -> Result<(), BoxError> {
        let hm = if !a.ensemble.is_empty() {
            let maps = a
                .ensemble
                .iter()
                .map(Heatmap::load)
                .collect::<Result<Vec<_>, _>>()?;
            let mut hm = Heatmap::mean_of(&maps)?;
            if let Some(stem) = a.out.file_stem() {
                hm.slide_id = stem.to_string_lossy().into_owned();
            }
            hm
        } else {
            let slide = a.slide.as_ref().ok_or("--slide is required")?;
            let bundle = SlideBundle::open(slide)?;
            let tissue = match &a.tissue {
                Some(p) => TissueMask::load_for(&bundle, p)?,
                None => tissue_mask(&bundle, self.cfg.roi.threshold)?,
            };
            let annot = a
                .annotation
                .as_ref()
                .map(|p| AnnotationMask::load_for(&bundle, p))
                .transpose()?;
            let mut spec = a.scorer.clone().unwrap_or_else(|| self.cfg.scorer.clone());
            if let ScorerSpec::External {
                timeout_secs,
                batch_size,
                ..
            } = &mut spec
            {
                *timeout_secs = a.timeout.or(*timeout_secs);
                *batch_size = a.batch_size.or(*batch_size);
            }
            let mut scorer = spec.build(&annot.iter().collect::<Vec<_>>())?;
            let opts = StitchOptions {
                overlap: a.overlap.unwrap_or(self.cfg.heatmap.overlap),
                batch_size: a.batch_size.unwrap_or(self.cfg.heatmap.batch_size),
            };
            stitch_heatmap(&bundle, &tissue, scorer.as_mut(), opts)?
        };
        if let Some(parent) = a.out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        hm.save(&a.out)?;
        if let Some(png) = &a.png {
            hm.save_png(png, 1)?;
        }
        Ok(())
    }

    fn features(&self, a: &FeaturesArgs) -> Result<(), BoxError> {
        let t = a.t.unwrap_or(self.cfg.postproc.t);
        let mut rows = Vec::with_capacity(a.heatmaps.len());
        for path in &a.heatmaps {
            let hm = Heatmap::load(path)?;
            let bundle = SlideBundle::open(a.slides.join(&hm.slide_id))?;
            let tissue =
                TissueMask::load_for(&bundle, a.roi.join(format!("{}.tmsk", hm.slide_id)))?;
            let fv = extract_features(&hm, &tissue_cells(&bundle, &tissue), t)?;
            rows.push((hm.slide_id.clone(), fv));
        }
        let mut w = create(&a.out)?;
        write_features_csv(&mut w, &rows)?;
        Ok(())
    }

    fn train(&self, a: &TrainArgs) -> Result<(), BoxError> {
        let samples = labeled(&a.features, &a.labels)?;
        let (params, seed) = self.forest_params(&a.forest);
        let train: Vec<_> = samples.iter().map(|s| (s.features, s.class)).collect();
        let model = train_forest(&train, &params, seed)?;
        if let Some(parent) = a.out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        model.save(&a.out)?;
        Ok(())
    }

    fn cv(&self, a: &CvArgs) -> Result<(), BoxError> {
        let samples = labeled(&a.features, &a.labels)?;
        let (params, seed) = self.forest_params(&a.forest);
        let res = cross_validate(&samples, a.k.unwrap_or(self.cfg.cv.k), &params, seed)?;
        for (i, acc) in res.fold_accuracy.iter().enumerate() {
            log::info!("fold {i}: accuracy {acc:.4}");
        }
        write_json(
            a.out.as_deref(),
            &(serde_json::to_string_pretty(&res)? + "\n"),
        )
    }

    fn predict(&self, a: &PredictArgs) -> Result<(), BoxError> {
        let model = ForestModel::load(&a.model)?;
        let patients: BTreeMap<String, String> = match &a.labels {
            Some(p) => read_labels(p)?
                .into_iter()
                .map(|l| (l.slide_id, l.patient_id))
                .collect(),
            None => BTreeMap::new(),
        };
        let mut out = Vec::new();
        for (slide_id, fv) in read_features(&a.features)? {
            let patient_id = match patients.get(&slide_id) {
                Some(p) => p.clone(),
                None => slide_id
                    .rsplit_once("_node_")
                    .map(|(p, _)| p.to_string())
                    .ok_or_else(|| format!("no patient for slide {slide_id}"))?,
            };
            out.push(SlideLabel {
                patient_id,
                node_class: model.predict(&fv)?.class,
                slide_id,
            });
        }
        write_slide_labels(create(&a.out)?, &out)?;
        Ok(())
    }

    fn stage(&self, a: &StageArgs) -> Result<(), BoxError> {
        let rules = match &a.rules {
            Some(p) => StagingRules::load(p)?,
            None => StagingRules::default(),
        };
        let stages = rules.stage_all(&group_by_patient(&read_labels(&a.input)?))?;
        write_stages(create(&a.out)?, &stages)?;
        Ok(())
    }

    fn eval(&self, a: &EvalArgs) -> Result<(), BoxError> {
        let need = |p: &Option<PathBuf>, flag: &str| -> Result<PathBuf, BoxError> {
            p.clone()
                .ok_or_else(|| format!("--{flag} is required for this task").into())
        };
        let mut report = EvalReport::default();
        match a.task {
            EvalTask::Auc => {
                let reference = read_labels(&need(&a.reference, "reference")?)?;
                let scores: BTreeMap<String, RegionFeatureVector> =
                    read_features(&need(&a.features, "features")?)?
                        .into_iter()
                        .collect();
                let slides = reference
                    .iter()
                    .map(|l| {
                        let fv = scores
                            .get(&l.slide_id)
                            .ok_or_else(|| format!("no features for slide {}", l.slide_id))?;
                        Ok(ScoredSlide {
                            slide_id: l.slide_id.clone(),
                            label: l.node_class.into(),
                            score: fv.max_prob,
                        })
                    })
                    .collect::<Result<Vec<_>, BoxError>>()?;
                report.auc = Some(auc(&slides)?);
            }
            EvalTask::Froc => {
                let annotations = need(&a.annotations, "annotations")?;
                let slides = need(&a.slides, "slides")?;
                let t = a.t.unwrap_or(self.cfg.eval.detection_threshold);
                let (mut truth, mut detections) = (Vec::new(), Vec::new());
                for path in &a.heatmaps {
                    let hm = Heatmap::load(path)?;
                    let bundle = SlideBundle::open(slides.join(&hm.slide_id))?;
                    let ap = annotations.join(format!("{}.tmsk", hm.slide_id));
                    if ap.exists() {
                        let annot = AnnotationMask::load_for(&bundle, ap)?;
                        truth.extend(ground_truth_regions(
                            &annot,
                            hm.cell_size,
                            hm.height(),
                            hm.width(),
                        ));
                    }
                    detections.extend(detections_from_heatmap(&hm, t));
                }
                report.froc = Some(froc(
                    &detections,
                    &truth,
                    a.heatmaps.len(),
                    &self.cfg.eval.froc_points,
                )?);
            }
            EvalTask::Kappa => {
                let open = |p: PathBuf| -> Result<_, BoxError> {
                    Ok(read_stages(BufReader::new(
                        File::open(&p).map_err(|e| format!("{}: {e}", p.display()))?,
                    ))?)
                };
                let reference = open(need(&a.reference, "reference")?)?;
                let predicted = open(need(&a.predicted, "predicted")?)?;
                let pairs = reference
                    .iter()
                    .map(|(p, r)| {
                        Ok((
                            *r,
                            *predicted
                                .get(p)
                                .ok_or_else(|| format!("no predicted stage for {p}"))?,
                        ))
                    })
                    .collect::<Result<Vec<_>, BoxError>>()?;
                report.kappa = Some(quadratic_weighted_kappa(&pairs)?);
            }
            EvalTask::Confusion => {
                let reference = read_labels(&need(&a.reference, "reference")?)?;
                let predicted: BTreeMap<String, _> =
                    read_labels(&need(&a.predicted, "predicted")?)?
                        .into_iter()
                        .map(|l| (l.slide_id, l.node_class))
                        .collect();
                let pairs = reference
                    .iter()
                    .map(|l| {
                        Ok((
                            l.node_class,
                            *predicted
                                .get(&l.slide_id)
                                .ok_or_else(|| format!("no prediction for slide {}", l.slide_id))?,
                        ))
                    })
                    .collect::<Result<Vec<_>, BoxError>>()?;
                let cm = confusion_matrix(&pairs)?;
                report.slide_accuracy = Some(cm.accuracy());
                report.confusion = Some(cm);
            }
        }
        write_json(a.out.as_deref(), &report.to_json())
    }

    fn synth(&self, a: &SynthArgs) -> Result<(), BoxError> {
        let defaults = CohortOptions::default();
        let opts = CohortOptions {
            n_patients: a.patients,
            class_mix: a.mix.unwrap_or(defaults.class_mix),
            seed: a.seed,
            slide_size: a.slide_size,
            annotated_fraction: a.annotated_fraction.unwrap_or(defaults.annotated_fraction),
            ..defaults
        };
        let cohort = synth_cohort(&opts, &a.out)?;
        // a ready-to-run config with paths relative to the cohort
        let mut cfg = self.cfg.clone();
        cfg.paths = Default::default();
        cfg.mode = ForestMode::Cv;
        std::fs::write(a.out.join("pipeline.toml"), cfg.to_toml())?;
        log::info!(
            "wrote {} patients to {}",
            cohort.patients.len(),
            a.out.display()
        );
        Ok(())
    }
}

fn stub(a: &StubArgs) -> Result<(), BoxError> {
    let magic: [u8; 4] = a
        .magic
        .as_bytes()
        .try_into()
        .map_err(|_| "magic must be 4 bytes")?;
    let constant = a.constant;
    let tint = a.tint;
    let score = move |patches: &[image::RgbImage]| -> Vec<f32> {
        patches
            .iter()
            .map(|p| {
                if tint {
                    let (mut r, mut g) = (0u64, 0u64);
                    for px in p.pixels() {
                        r += px[0] as u64;
                        g += px[1] as u64;
                    }
                    if g < r {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    constant.unwrap_or(0.0)
                }
            })
            .collect()
    };
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    protocol::serve(
        BufReader::new(stdin),
        std::io::BufWriter::new(stdout),
        magic,
        score,
    )?;
    Ok(())
}

fn stage_of(cmd: &Command) -> Stage {
    match cmd {
        Command::Roi(_) => Stage::Roi,
        Command::Patches(_) | Command::Sample(_) => Stage::Patches,
        Command::Heatmap(_) | Command::ScorerStub(_) => Stage::Heatmap,
        Command::Features(_) => Stage::Features,
        Command::TrainRf(_) | Command::Cv(_) | Command::PredictRf(_) => Stage::Forest,
        Command::Stage(_) => Stage::Staging,
        Command::Eval(_) => Stage::Eval,
        Command::Run(_) => Stage::Config,
        Command::SynthCohort(_) => Stage::Cohort,
    }
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).at(Stage::Config)?,
        None => PipelineConfig::default(),
    };
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    cfg.validate().at(Stage::Config)?;
    if let Some(n) = cfg.workers {
        // ignore the error when a pool was already set up in-process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let stage = stage_of(&cli.command);
    let ctx = Ctx { cfg };
    let res = match &cli.command {
        Command::Roi(a) => ctx.roi(a),
        Command::Patches(a) => ctx.patches(a),
        Command::Sample(a) => ctx.sample(a),
        Command::Heatmap(a) => ctx.heatmap(a),
        Command::Features(a) => ctx.features(a),
        Command::TrainRf(a) => ctx.train(a),
        Command::Cv(a) => ctx.cv(a),
        Command::PredictRf(a) => ctx.predict(a),
        Command::Stage(a) => ctx.stage(a),
        Command::Eval(a) => ctx.eval(a),
        Command::SynthCohort(a) => ctx.synth(a),
        Command::ScorerStub(a) => stub(a),
        Command::Run(a) => {
            if cli.config.is_none() {
                return Err(PipelineError::new(Stage::Config, "run needs --config"));
            }
            let mut p = Pipeline::new(ctx.cfg)?;
            p.force = a.force;
            let summary = p.run()?;
            print!("{}", summary.report.to_json());
            return Ok(());
        }
    };
    res.at(stage)
}

/// Entry point of the `pnstage` binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pnstage: {e}");
            e.exit_code()
        }
    }
}
