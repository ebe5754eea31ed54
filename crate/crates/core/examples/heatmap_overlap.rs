//! Heatmaps of one slide with and without overlapping tiles, plus a
//! three-way ensemble.
//!
//! cargo run --example heatmap_overlap -- [sigma]

use pnstage::heatmap::{stitch_heatmap, Heatmap, Overlap, StitchOptions};
use pnstage::roi::tissue_mask;
use pnstage::scoring::OracleScorer;
use pnstage::slide_io::{synthesize_slide, Lesion, SyntheticSpec};

fn print(hm: &Heatmap) {
    for row in hm.grid.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        println!("  {}", line.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sigma: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0.0);
    let tmp = tempfile::tempdir()?;
    let mut spec = SyntheticSpec::new(4, 1024, 1024);
    spec.tumor_lesions.push(Lesion {
        cx: 560.0,
        cy: 470.0,
        radius: 190.0,
    });
    let (bundle, annot) = synthesize_slide(&spec, "hm", tmp.path().join("hm"))?;
    let tissue = tissue_mask(&bundle, 0.8)?;

    let mut maps = Vec::new();
    for (seed, overlap) in [
        (0, Overlap::None),
        (0, Overlap::Half),
        (1, Overlap::Half),
        (2, Overlap::Half),
    ] {
        let mut oracle = OracleScorer::new(sigma, seed).with_annotation(&annot);
        let hm = stitch_heatmap(
            &bundle,
            &tissue,
            &mut oracle,
            StitchOptions {
                overlap,
                ..Default::default()
            },
        )?;
        if seed == 0 {
            let nonzero = hm.grid.iter().filter(|&&v| v > 0.0).count();
            println!("overlap {overlap:?}: {nonzero} nonzero cells");
            print(&hm);
        }
        if overlap == Overlap::Half {
            maps.push(hm);
        }
    }
    let ensemble = Heatmap::mean_of(&maps)?;
    println!(
        "ensemble of {} half-overlap maps, max {:.3}",
        maps.len(),
        ensemble.max()
    );
    Ok(())
}
