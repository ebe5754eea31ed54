//! Slide-level morphology and confidence features of a thresholded heatmap.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::regions::{label_regions, Region};
use super::{Heatmap, HeatmapError};

pub const FEATURE_COUNT: usize = 11;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "f9", "f10", "f11",
];

/// The eleven slide features, in column order `f1..f11`. Areas are counted
/// in heatmap cells.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionFeatureVector {
    /// f1: major axis length of the largest region.
    pub largest_major_axis: f64,
    /// f2: maximum probability inside the largest region.
    pub largest_max_prob: f64,
    /// f3: mean probability inside the largest region.
    pub largest_mean_prob: f64,
    /// f4: area of the largest region.
    pub largest_area: f64,
    /// f5: unweighted mean over regions of each region's mean probability.
    pub mean_region_mean_prob: f64,
    /// f6: total area of all regions.
    pub total_region_area: f64,
    /// f7: maximum probability over tissue.
    pub max_prob: f64,
    /// f8: mean probability over tissue.
    pub mean_prob: f64,
    /// f9: number of regions.
    pub region_count: f64,
    /// f10: tissue (foreground) area.
    pub tissue_area: f64,
    /// f11: foreground to background area ratio.
    pub tissue_ratio: f64,
}

impl RegionFeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.largest_major_axis,
            self.largest_max_prob,
            self.largest_mean_prob,
            self.largest_area,
            self.mean_region_mean_prob,
            self.total_region_area,
            self.max_prob,
            self.mean_prob,
            self.region_count,
            self.tissue_area,
            self.tissue_ratio,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        RegionFeatureVector {
            largest_major_axis: a[0],
            largest_max_prob: a[1],
            largest_mean_prob: a[2],
            largest_area: a[3],
            mean_region_mean_prob: a[4],
            total_region_area: a[5],
            max_prob: a[6],
            mean_prob: a[7],
            region_count: a[8],
            tissue_area: a[9],
            tissue_ratio: a[10],
        }
    }
}

/// The largest region: most cells, then highest peak, then earliest first
/// cell in row-major order.
pub fn largest_region(regions: &[Region]) -> Option<&Region> {
    regions.iter().min_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(b.max_prob.total_cmp(&a.max_prob))
            .then(a.first_cell().cmp(&b.first_cell()))
    })
}

/// Threshold regions of a heatmap (8-connected cells with `prob >= t`).
pub fn threshold_regions(hm: &Heatmap, t: f64) -> Result<Vec<Region>, HeatmapError> {
    if !(t > 0.0 && t < 1.0) {
        return Err(HeatmapError::BadThreshold(t));
    }
    Ok(label_regions(&hm.grid, t))
}

/// Computes the slide features. `tissue` must be on the heatmap's cell grid.
pub fn extract_features(
    hm: &Heatmap,
    tissue: &Array2<bool>,
    t: f64,
) -> Result<RegionFeatureVector, HeatmapError> {
    if tissue.dim() != hm.grid.dim() {
        return Err(HeatmapError::ShapeMismatch(format!(
            "tissue grid {:?} vs heatmap {:?}",
            tissue.dim(),
            hm.grid.dim()
        )));
    }
    let regions = threshold_regions(hm, t)?;
    let mut f = RegionFeatureVector::default();
    if let Some(big) = largest_region(&regions) {
        f.largest_major_axis = big.major_axis_len;
        f.largest_max_prob = big.max_prob;
        f.largest_mean_prob = big.mean_prob;
        f.largest_area = big.area as f64;
        f.mean_region_mean_prob =
            regions.iter().map(|r| r.mean_prob).sum::<f64>() / regions.len() as f64;
        f.total_region_area = regions.iter().map(|r| r.area as f64).sum();
    }
    f.region_count = regions.len() as f64;

    let mut n_tissue = 0usize;
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for (&v, _) in hm.grid.iter().zip(tissue.iter()).filter(|(_, &t)| t) {
        n_tissue += 1;
        sum += v as f64;
        max = max.max(v as f64);
    }
    let n_background = tissue.len() - n_tissue;
    f.max_prob = max;
    f.mean_prob = if n_tissue > 0 {
        sum / n_tissue as f64
    } else {
        0.0
    };
    f.tissue_area = n_tissue as f64;
    f.tissue_ratio = if n_background > 0 {
        n_tissue as f64 / n_background as f64
    } else {
        n_tissue as f64
    };
    Ok(f)
}

/// Writes `slide_id,f1..f11` rows.
pub fn write_features_csv<W: Write>(
    w: W,
    rows: &[(String, RegionFeatureVector)],
) -> Result<(), HeatmapError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["slide_id"];
    header.extend(FEATURE_NAMES);
    out.write_record(&header)?;
    for (id, fv) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(fv.to_array().iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(
    r: R,
) -> Result<Vec<(String, RegionFeatureVector)>, HeatmapError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != FEATURE_COUNT + 1 {
            return Err(HeatmapError::BadFile(format!(
                "feature row has {} columns",
                rec.len()
            )));
        }
        let mut a = [0.0; FEATURE_COUNT];
        for (i, v) in a.iter_mut().enumerate() {
            *v = rec[i + 1]
                .trim()
                .parse()
                .map_err(|e| HeatmapError::BadFile(format!("feature f{}: {e}", i + 1)))?;
        }
        rows.push((rec[0].to_string(), RegionFeatureVector::from_array(a)));
    }
    Ok(rows)
}
