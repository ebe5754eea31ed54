//! Tissue detection on a synthetic slide at the 32x-downsampled level.
//!
//! cargo run --example roi_mask -- [threshold]

use pnstage::roi::{tissue_mask, DEFAULT_THRESHOLD};
use pnstage::slide_io::{synthesize_slide, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let threshold: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(DEFAULT_THRESHOLD);
    let tmp = tempfile::tempdir()?;
    let (bundle, _) = synthesize_slide(
        &SyntheticSpec::new(3, 2048, 1536),
        "roi",
        tmp.path().join("roi"),
    )?;
    let mask = tissue_mask(&bundle, threshold)?;
    let (rows, cols) = mask.grid.dim();
    println!(
        "threshold {threshold}: {} of {} mask pixels are tissue ({}x downsample)",
        mask.area(),
        rows * cols,
        mask.downsample()
    );
    for row in mask.grid.rows() {
        let line: String = row.iter().map(|&t| if t { '#' } else { '.' }).collect();
        println!("{line}");
    }
    let out = tmp.path().join("roi.tmsk");
    mask.save(&out)?;
    println!("saved {} bytes", std::fs::metadata(&out)?.len());
    Ok(())
}
