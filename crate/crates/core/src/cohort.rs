//! Synthetic patient cohorts: five node slides per patient with lesions
//! sized by node class, plus reference labels and stages.
//!
//! On-disk layout under the cohort root:
//!
//! ```text
//! cohort.json
//! reference_slides.csv      patient_id,slide_id,node_class
//! reference_stages.csv      patient_id,stage
//! slides/<slide_id>/        slide bundles
//! annotations/<slide_id>.tmsk
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patches::{split_patients, SplitAssignment};
use crate::slide_io::SlideError;
use crate::slide_io::{synthesize_slide, Lesion, SyntheticSpec};
use crate::staging::{
    write_slide_labels, write_stages, NodeClass, PNStage, PatientRecord, SlideLabel, StagingError,
    StagingRules,
};

pub const COHORT_FILE: &str = "cohort.json";
pub const REFERENCE_SLIDES: &str = "reference_slides.csv";
pub const REFERENCE_STAGES: &str = "reference_stages.csv";
pub const SLIDES_PER_PATIENT: usize = 5;

/// Lesion radii in level-0 pixels for a 512-pixel slide; they scale with
/// the slide side.
pub const ITC_RADIUS: Range<f64> = 70.0..100.0;
pub const MICRO_RADIUS: Range<f64> = 130.0..165.0;
pub const MACRO_RADIUS: Range<f64> = 205.0..245.0;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("bad class mix: {0}")]
    BadMix(String),
    #[error("bad cohort options: {0}")]
    BadOptions(String),
    #[error("bad cohort file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Staging(#[from] StagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Relative frequency of each node class among slides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMix {
    pub negative: f64,
    pub itc: f64,
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_: f64,
}

impl Default for ClassMix {
    /// Reference slide class totals: mostly negative, a few ITC.
    fn default() -> Self {
        ClassMix {
            negative: 313.0,
            itc: 35.0,
            micro: 64.0,
            macro_: 88.0,
        }
    }
}

impl ClassMix {
    pub fn weights(&self) -> [f64; 4] {
        [self.negative, self.itc, self.micro, self.macro_]
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let w = self.weights();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CohortError::BadMix(format!(
                "weights must be finite and >= 0: {w:?}"
            )));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(CohortError::BadMix("weights sum to zero".into()));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> NodeClass {
        let w = self.weights();
        let mut u = rng.random_range(0.0..w.iter().sum::<f64>());
        for (c, v) in NodeClass::ALL.into_iter().zip(w) {
            if u < v {
                return c;
            }
            u -= v;
        }
        // only reachable through rounding; fall back to the last weighted class
        let last = w.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        NodeClass::ALL[last]
    }
}

impl std::str::FromStr for ClassMix {
    type Err = CohortError;

    /// `negative,itc,micro,macro` weights, e.g. `313,35,64,88`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CohortError::BadMix(format!("{s:?}: {e}")))?;
        let [negative, itc, micro, macro_] = v[..] else {
            return Err(CohortError::BadMix(format!("{s:?}: need 4 weights")));
        };
        let mix = ClassMix {
            negative,
            itc,
            micro,
            macro_,
        };
        mix.validate()?;
        Ok(mix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortOptions {
    pub n_patients: usize,
    pub class_mix: ClassMix,
    pub seed: u64,
    pub slide_size: u32,
    /// Share of all patients whose metastatic slides carry lesion-level
    /// annotations (the train-M bucket).
    pub annotated_fraction: f64,
    pub tissue_blobs: u32,
}

impl Default for CohortOptions {
    fn default() -> Self {
        CohortOptions {
            n_patients: 40,
            class_mix: ClassMix::default(),
            seed: 0,
            slide_size: 512,
            annotated_fraction: 0.43,
            tissue_blobs: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSlide {
    pub slide_id: String,
    pub node_class: NodeClass,
    pub annotated: bool,
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortPatient {
    pub patient_id: String,
    pub stage: PNStage,
    pub slides: Vec<CohortSlide>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub options: CohortOptions,
    pub patients: Vec<CohortPatient>,
}

fn lesion_for(class: NodeClass, size: u32, rng: &mut ChaCha8Rng) -> Option<Lesion> {
    let range = match class {
        NodeClass::Negative => return None,
        NodeClass::Itc => ITC_RADIUS,
        NodeClass::Micro => MICRO_RADIUS,
        NodeClass::Macro => MACRO_RADIUS,
    };
    let scale = size as f64 / 512.0;
    let radius = rng.random_range(range) * scale;
    // keep the disk on the slide, or centred when it cannot fit
    let margin = radius.min(size as f64 / 2.0);
    let mut centre = || {
        let (lo, hi) = (margin, size as f64 - margin);
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            size as f64 / 2.0
        }
    };
    let (cx, cy) = (centre(), centre());
    Some(Lesion { cx, cy, radius })
}

/// Draws the cohort layout without rendering anything.
pub fn plan_cohort(opts: &CohortOptions) -> Result<Cohort, CohortError> {
    opts.class_mix.validate()?;
    if opts.n_patients == 0 {
        return Err(CohortError::BadOptions(
            "n_patients must be positive".into(),
        ));
    }
    if opts.slide_size < 256 {
        return Err(CohortError::BadOptions(
            "slide_size must be at least 256".into(),
        ));
    }
    if !(0.0..=1.0).contains(&opts.annotated_fraction) {
        return Err(CohortError::BadOptions(
            "annotated_fraction must be in [0, 1]".into(),
        ));
    }
    let rules = StagingRules::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut patients = Vec::with_capacity(opts.n_patients);
    for p in 0..opts.n_patients {
        let patient_id = format!("patient_{p:03}");
        let slides: Vec<CohortSlide> = (0..SLIDES_PER_PATIENT)
            .map(|n| {
                let node_class = opts.class_mix.sample(&mut rng);
                let mut spec = SyntheticSpec::new(rng.random(), opts.slide_size, opts.slide_size);
                spec.tissue_blobs = opts.tissue_blobs;
                spec.tumor_lesions
                    .extend(lesion_for(node_class, opts.slide_size, &mut rng));
                CohortSlide {
                    slide_id: format!("{patient_id}_node_{n}"),
                    node_class,
                    annotated: false,
                    spec,
                }
            })
            .collect();
        let classes: Vec<NodeClass> = slides.iter().map(|s| s.node_class).collect();
        let stage = rules.stage(&patient_id, &classes)?;
        patients.push(CohortPatient {
            patient_id,
            stage,
            slides,
        });
    }
    // annotate metastatic slides of the first patients that have any
    let quota = (opts.annotated_fraction * opts.n_patients as f64).round() as usize;
    for patient in patients
        .iter_mut()
        .filter(|p| p.slides.iter().any(|s| s.node_class != NodeClass::Negative))
        .take(quota)
    {
        for s in &mut patient.slides {
            s.annotated = s.node_class != NodeClass::Negative;
        }
    }
    Ok(Cohort {
        options: *opts,
        patients,
    })
}

/// Renders and writes a cohort under `dir`.
pub fn synth_cohort(opts: &CohortOptions, dir: impl AsRef<Path>) -> Result<Cohort, CohortError> {
    let dir = dir.as_ref();
    let cohort = plan_cohort(opts)?;
    std::fs::create_dir_all(dir.join("slides"))?;
    std::fs::create_dir_all(dir.join("annotations"))?;
    let slides: Vec<&CohortSlide> = cohort.patients.iter().flat_map(|p| &p.slides).collect();
    slides
        .par_iter()
        .try_for_each(|s| -> Result<(), CohortError> {
            let (_, annot) =
                synthesize_slide(&s.spec, &s.slide_id, Cohort::bundle_dir(dir, &s.slide_id))?;
            annot.save(Cohort::annotation_path(dir, &s.slide_id))?;
            Ok(())
        })?;
    let json = serde_json::to_string_pretty(&cohort).expect("cohort serializes");
    std::fs::write(dir.join(COHORT_FILE), json + "\n")?;
    write_slide_labels(
        BufWriter::new(File::create(dir.join(REFERENCE_SLIDES))?),
        &cohort.slide_labels(),
    )?;
    write_stages(
        BufWriter::new(File::create(dir.join(REFERENCE_STAGES))?),
        &cohort
            .patients
            .iter()
            .map(|p| (p.patient_id.clone(), p.stage))
            .collect(),
    )?;
    Ok(cohort)
}

impl Cohort {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, CohortError> {
        let text = std::fs::read_to_string(dir.as_ref().join(COHORT_FILE))?;
        serde_json::from_str(&text).map_err(|e| CohortError::BadFile(e.to_string()))
    }

    pub fn bundle_dir(root: &Path, slide_id: &str) -> PathBuf {
        root.join("slides").join(slide_id)
    }

    pub fn annotation_path(root: &Path, slide_id: &str) -> PathBuf {
        root.join("annotations").join(format!("{slide_id}.tmsk"))
    }

    pub fn slide_labels(&self) -> Vec<SlideLabel> {
        self.patients
            .iter()
            .flat_map(|p| {
                p.slides.iter().map(|s| SlideLabel {
                    patient_id: p.patient_id.clone(),
                    slide_id: s.slide_id.clone(),
                    node_class: s.node_class,
                })
            })
            .collect()
    }

    pub fn records(&self) -> Vec<PatientRecord> {
        self.patients
            .iter()
            .map(|p| PatientRecord {
                patient_id: p.patient_id.clone(),
                slides: p.slides.iter().map(|s| s.node_class).collect(),
            })
            .collect()
    }

    /// train-M / train-L assignment from the annotation flags.
    pub fn split(&self) -> Vec<SplitAssignment> {
        let flags: Vec<(String, Vec<bool>)> = self
            .patients
            .iter()
            .map(|p| {
                (
                    p.patient_id.clone(),
                    p.slides.iter().map(|s| s.annotated).collect(),
                )
            })
            .collect();
        split_patients(&flags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::Bucket;

    #[test]
    fn default_mix_reproduces_the_patient_split() {
        let c = plan_cohort(&CohortOptions {
            n_patients: 100,
            ..Default::default()
        })
        .unwrap();
        let split = c.split();
        let m = split.iter().filter(|s| s.bucket == Bucket::TrainM).count();
        assert_eq!((m, split.len() - m), (43, 57));
    }

    #[test]
    fn all_negative_mix_stages_pn0() {
        let mix = ClassMix {
            negative: 1.0,
            itc: 0.0,
            micro: 0.0,
            macro_: 0.0,
        };
        let c = plan_cohort(&CohortOptions {
            n_patients: 12,
            class_mix: mix,
            ..Default::default()
        })
        .unwrap();
        assert!(c.patients.iter().all(|p| p.stage == PNStage::PN0));
        assert!(c
            .patients
            .iter()
            .flat_map(|p| &p.slides)
            .all(|s| s.spec.tumor_lesions.is_empty()));
    }

    #[test]
    fn same_seed_same_plan() {
        let o = CohortOptions {
            n_patients: 10,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(plan_cohort(&o).unwrap(), plan_cohort(&o).unwrap());
        let other = plan_cohort(&CohortOptions { seed: 6, ..o }).unwrap();
        assert_ne!(plan_cohort(&o).unwrap(), other);
    }

    #[test]
    fn bad_mixes_rejected() {
        assert!(matches!(
            "1,2,3".parse::<ClassMix>(),
            Err(CohortError::BadMix(_))
        ));
        assert!(matches!(
            "0,0,0,0".parse::<ClassMix>(),
            Err(CohortError::BadMix(_))
        ));
        assert!(matches!(
            "1,-1,0,0".parse::<ClassMix>(),
            Err(CohortError::BadMix(_))
        ));
        assert_eq!(
            "313,35,64,88".parse::<ClassMix>().unwrap(),
            ClassMix::default()
        );
    }

    #[test]
    fn lesions_stay_on_the_slide() {
        let c = plan_cohort(&CohortOptions {
            n_patients: 30,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        for s in c.patients.iter().flat_map(|p| &p.slides) {
            for l in &s.spec.tumor_lesions {
                let m = l.radius.min(256.0);
                assert!(l.cx >= m && l.cx <= 512.0 - m, "{l:?}");
            }
            assert_eq!(
                s.spec.tumor_lesions.is_empty(),
                s.node_class == NodeClass::Negative
            );
        }
    }

    #[test]
    fn written_cohort_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let o = CohortOptions {
            n_patients: 2,
            slide_size: 256,
            ..Default::default()
        };
        let c = synth_cohort(&o, dir.path()).unwrap();
        assert_eq!(Cohort::load(dir.path()).unwrap(), c);
        let labels = std::fs::read_to_string(dir.path().join(REFERENCE_SLIDES)).unwrap();
        assert_eq!(labels.lines().count(), 11);
        assert!(Cohort::annotation_path(dir.path(), "patient_001_node_4").exists());
        assert!(Cohort::bundle_dir(dir.path(), "patient_000_node_0")
            .join("manifest.json")
            .exists());
    }
}
