//! The eleven region features of a heatmap at a few thresholds.
//!
//! cargo run --example features

use pnstage::heatmap::{
    extract_features, stitch_heatmap, tissue_cells, StitchOptions, FEATURE_NAMES,
};

const ROLES: [&str; 11] = [
    "largest major axis",
    "largest max prob",
    "largest mean prob",
    "largest area",
    "mean region mean prob",
    "total region area",
    "max prob",
    "mean prob",
    "region count",
    "tissue area",
    "tissue ratio",
];
use pnstage::roi::tissue_mask;
use pnstage::scoring::OracleScorer;
use pnstage::slide_io::{synthesize_slide, Lesion, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let mut spec = SyntheticSpec::new(12, 1536, 1024);
    spec.tumor_lesions.push(Lesion {
        cx: 500.0,
        cy: 500.0,
        radius: 230.0,
    });
    spec.tumor_lesions.push(Lesion {
        cx: 1100.0,
        cy: 420.0,
        radius: 90.0,
    });
    let (bundle, annot) = synthesize_slide(&spec, "f", tmp.path().join("f"))?;
    let tissue = tissue_mask(&bundle, 0.8)?;
    let mut oracle = OracleScorer::new(0.05, 0).with_annotation(&annot);
    let hm = stitch_heatmap(&bundle, &tissue, &mut oracle, StitchOptions::default())?;
    let cells = tissue_cells(&bundle, &tissue);

    let thresholds = [0.5, 0.7, 0.9];
    let rows: Vec<_> = thresholds
        .iter()
        .map(|&t| extract_features(&hm, &cells, t).map(|f| f.to_array()))
        .collect::<Result<_, _>>()?;
    println!(
        "{:<30}{:>10}{:>10}{:>10}",
        "feature", "t=0.5", "t=0.7", "t=0.9"
    );
    for (i, (name, role)) in FEATURE_NAMES.iter().zip(ROLES).enumerate() {
        let label = format!("{name} {role}");
        println!(
            "{label:<30}{:>10.4}{:>10.4}{:>10.4}",
            rows[0][i], rows[1][i], rows[2][i]
        );
    }
    Ok(())
}
