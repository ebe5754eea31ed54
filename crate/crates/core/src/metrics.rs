//! Evaluation: slide AUC, lesion FROC, patient kappa and slide confusion
//! matrices.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heatmap::label_regions;
use crate::heatmap::Heatmap;
use crate::slide_io::AnnotationMask;
use crate::staging::{NodeClass, PNStage};

/// Standard FROC operating points, in false positives per slide.
pub const DEFAULT_FP_POINTS: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("AUC needs both tumor and normal slides")]
    SingleClass,
    #[error("FROC needs at least one ground-truth region")]
    NoGroundTruth,
    #[error("FP points must be nonempty and ascending: {0:?}")]
    BadFpPoints(Vec<f64>),
    #[error("slide count must be positive")]
    NoSlides,
    #[error("no pairs to evaluate")]
    Empty,
    #[error("score {0} is not in [0, 1]")]
    BadScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlideTruth {
    Tumor,
    Normal,
}

impl From<NodeClass> for SlideTruth {
    fn from(c: NodeClass) -> Self {
        if c == NodeClass::Negative {
            SlideTruth::Normal
        } else {
            SlideTruth::Tumor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSlide {
    pub slide_id: String,
    pub label: SlideTruth,
    /// Maximum heatmap confidence.
    pub score: f64,
}

/// Rank-based AUC; a tie between a tumor and a normal slide counts 1/2.
pub fn auc(slides: &[ScoredSlide]) -> Result<f64, MetricsError> {
    if let Some(s) = slides.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
        return Err(MetricsError::BadScore(s.score));
    }
    let mut sorted: Vec<&ScoredSlide> = slides.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let n_pos = sorted
        .iter()
        .filter(|s| s.label == SlideTruth::Tumor)
        .count();
    let n_neg = sorted.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    // count (tumor, normal) wins in half-units so everything stays integral
    let mut half_wins: u64 = 0;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            j += 1;
        }
        let group = &sorted[i..j];
        let pos = group
            .iter()
            .filter(|s| s.label == SlideTruth::Tumor)
            .count() as u64;
        let neg = group.len() as u64 - pos;
        half_wins += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(half_wins as f64 / (2 * n_pos as u64 * n_neg as u64) as f64)
}

/// One candidate lesion: the peak cell of a predicted region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionDetection {
    pub slide_id: String,
    pub row: usize,
    pub col: usize,
    pub confidence: f64,
}

/// A ground-truth lesion as a set of heatmap cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRegion {
    pub slide_id: String,
    pub cells: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub fp_per_slide: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocResult {
    /// Operating points by decreasing threshold.
    pub curve: Vec<FrocPoint>,
    pub fp_points: Vec<f64>,
    pub sensitivities: Vec<f64>,
    pub score: f64,
}

/// One detection per region of cells `>= t`, located at the region's peak.
pub fn detections_from_heatmap(hm: &Heatmap, t: f64) -> Vec<LesionDetection> {
    label_regions(&hm.grid, t)
        .iter()
        .map(|r| {
            let (row, col) = r.peak_cell(&hm.grid);
            LesionDetection {
                slide_id: hm.slide_id.clone(),
                row,
                col,
                confidence: r.max_prob,
            }
        })
        .collect()
}

/// Ground-truth lesions on a heatmap grid of `rows x cols` cells. A cell is
/// tumor if any annotated pixel falls inside it; lesions are 8-connected.
pub fn ground_truth_regions(
    annot: &AnnotationMask,
    cell_size: u32,
    rows: usize,
    cols: usize,
) -> Vec<GroundTruthRegion> {
    let scale = (cell_size as usize) >> annot.level;
    let scale = scale.max(1);
    let mut cells = Array2::<f32>::zeros((rows, cols));
    for ((y, x), &v) in annot.grid.indexed_iter() {
        if v {
            let (r, c) = (y / scale, x / scale);
            if r < rows && c < cols {
                cells[[r, c]] = 1.0;
            }
        }
    }
    label_regions(&cells, 0.5)
        .into_iter()
        .map(|r| GroundTruthRegion {
            slide_id: annot.slide_id.clone(),
            cells: r.cells,
        })
        .collect()
}

/// Free-response ROC over a threshold sweep of the detection confidences.
///
/// Detections inside a ground-truth region hit it; all others are false
/// positives. The sensitivity at an operating point `p` is the best
/// sensitivity reached with at most `p` false positives per slide.
pub fn froc(
    detections: &[LesionDetection],
    truth: &[GroundTruthRegion],
    slide_count: usize,
    fp_points: &[f64],
) -> Result<FrocResult, MetricsError> {
    if truth.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    if slide_count == 0 {
        return Err(MetricsError::NoSlides);
    }
    if fp_points.is_empty() || fp_points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::BadFpPoints(fp_points.to_vec()));
    }
    let mut owner: HashMap<(&str, usize, usize), usize> = HashMap::new();
    for (i, r) in truth.iter().enumerate() {
        for &(row, col) in &r.cells {
            owner.insert((r.slide_id.as_str(), row, col), i);
        }
    }
    let mut order: Vec<&LesionDetection> = detections.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let mut hit = vec![false; truth.len()];
    let mut n_hit = 0usize;
    let mut n_fp = 0usize;
    let mut curve = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let theta = order[i].confidence;
        while i < order.len() && order[i].confidence == theta {
            let d = order[i];
            match owner.get(&(d.slide_id.as_str(), d.row, d.col)) {
                Some(&g) if !hit[g] => {
                    hit[g] = true;
                    n_hit += 1;
                }
                Some(_) => {}
                None => n_fp += 1,
            }
            i += 1;
        }
        curve.push(FrocPoint {
            threshold: theta,
            sensitivity: n_hit as f64 / truth.len() as f64,
            fp_per_slide: n_fp as f64 / slide_count as f64,
        });
    }
    let sensitivities: Vec<f64> = fp_points
        .iter()
        .map(|&p| {
            curve
                .iter()
                .filter(|c| c.fp_per_slide <= p)
                .map(|c| c.sensitivity)
                .fold(0.0, f64::max)
        })
        .collect();
    let score = sensitivities.iter().sum::<f64>() / sensitivities.len() as f64;
    Ok(FrocResult {
        curve,
        fp_points: fp_points.to_vec(),
        sensitivities,
        score,
    })
}

/// Quadratic weighted kappa over class indices `0..n`.
///
/// When the expected disagreement is zero (a single class on both sides)
/// the result is 1.0 for perfect agreement and 0.0 otherwise.
pub fn weighted_kappa(pairs: &[(usize, usize)], n: usize) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut obs = vec![vec![0.0f64; n]; n];
    let mut rows = vec![0.0f64; n];
    let mut cols = vec![0.0f64; n];
    for &(a, b) in pairs {
        obs[a][b] += 1.0;
        rows[a] += 1.0;
        cols[b] += 1.0;
    }
    let total = pairs.len() as f64;
    let denom_w = ((n - 1) * (n - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let d = i.abs_diff(j) as f64;
            let w = d * d / denom_w;
            num += w * obs[i][j];
            den += w * rows[i] * cols[j] / total;
        }
    }
    if den == 0.0 {
        let diagonal = pairs.iter().all(|(a, b)| a == b);
        return Ok(if diagonal { 1.0 } else { 0.0 });
    }
    Ok(1.0 - num / den)
}

/// Five-class quadratic weighted kappa over (reference, predicted) stages.
pub fn quadratic_weighted_kappa(pairs: &[(PNStage, PNStage)]) -> Result<f64, MetricsError> {
    let idx: Vec<(usize, usize)> = pairs.iter().map(|(a, b)| (a.index(), b.index())).collect();
    weighted_kappa(&idx, PNStage::ALL.len())
}

/// Slide confusion matrix; rows are reference classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
    /// Row-normalized, in percent. Empty rows are all zero.
    pub percentages: [[f64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn row_total(&self, class: NodeClass) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..4).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    pub fn from_counts(counts: [[u64; 4]; 4]) -> Self {
        let mut percentages = [[0.0; 4]; 4];
        for (row, pct) in counts.iter().zip(percentages.iter_mut()) {
            let n: u64 = row.iter().sum();
            if n > 0 {
                for (c, p) in row.iter().zip(pct.iter_mut()) {
                    *p = 100.0 * *c as f64 / n as f64;
                }
            }
        }
        ConfusionMatrix {
            counts,
            percentages,
        }
    }
}

pub fn confusion_matrix(pairs: &[(NodeClass, NodeClass)]) -> Result<ConfusionMatrix, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = [[0u64; 4]; 4];
    for (r, p) in pairs {
        counts[r.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix::from_counts(counts))
}

/// Evaluation output. Only the computed parts are serialized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub froc: Option<FrocResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slide_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
