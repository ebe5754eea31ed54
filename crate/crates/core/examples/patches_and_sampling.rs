//! Labels the patch grid of a few slides and draws a balanced sample.
//!
//! cargo run --example patches_and_sampling -- [n] [seed]

use std::collections::BTreeMap;

use pnstage::patches::{balanced_sample, enumerate_patches, PatchLabel, SampleOptions};
use pnstage::roi::tissue_mask;
use pnstage::slide_io::{synthesize_slide, Lesion, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let tmp = tempfile::tempdir()?;

    let mut by_slide = BTreeMap::new();
    for (i, radius) in [0.0, 150.0, 260.0].into_iter().enumerate() {
        let mut spec = SyntheticSpec::new(i as u64, 1024, 1024);
        if radius > 0.0 {
            spec.tumor_lesions.push(Lesion {
                cx: 512.0,
                cy: 512.0,
                radius,
            });
        }
        let id = format!("slide_{i}");
        let (bundle, annot) = synthesize_slide(&spec, &id, tmp.path().join(&id))?;
        let tissue = tissue_mask(&bundle, 0.8)?;
        let patches = enumerate_patches(&bundle, &tissue, Some(&annot))?;
        let count = |l| patches.iter().filter(|p| p.label == l).count();
        println!(
            "{id}: {} patches, {} tumor, {} normal, {} excluded",
            patches.len(),
            count(PatchLabel::Tumor),
            count(PatchLabel::Normal),
            count(PatchLabel::Excluded)
        );
        by_slide.insert(id, patches);
    }

    let sample = balanced_sample(&by_slide, n, seed, SampleOptions::default())?;
    let tumor = sample
        .iter()
        .filter(|p| p.label == PatchLabel::Tumor)
        .count();
    println!("sampled {n}: {tumor} tumor, {} normal", n - tumor);
    for p in sample.iter().take(6) {
        println!(
            "  {} ({}, {}) {:?} {:.3}",
            p.slide_id, p.x, p.y, p.label, p.tumor_fraction
        );
    }
    Ok(())
}
