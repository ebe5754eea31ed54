//! Renders one synthetic slide with a lesion, writes it as a pyramid bundle
//! and reads a region back.
//!
//! cargo run --example synth_slide -- [out_dir]

use pnstage::slide_io::{synthesize_slide, Lesion, SlideBundle, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().join("demo"));

    let mut spec = SyntheticSpec::new(7, 1024, 768);
    spec.tumor_lesions.push(Lesion {
        cx: 520.0,
        cy: 360.0,
        radius: 180.0,
    });
    let (bundle, annot) = synthesize_slide(&spec, "demo", &dir)?;
    println!("bundle {} at {}", bundle.id, bundle.path.display());
    for l in &bundle.levels {
        println!(
            "  level {} {}x{} ({}x down) {}",
            l.level,
            l.width,
            l.height,
            l.downsample(),
            l.file
        );
    }
    let tumor = annot.grid.iter().filter(|&&t| t).count();
    println!("annotated tumor pixels at level 0: {tumor}");

    let reopened = SlideBundle::open(&dir)?;
    let region = reopened.read_region(0, 400, 240, 256, 256)?;
    println!(
        "read a {}x{} region from (400, 240)",
        region.width(),
        region.height()
    );
    // regions past the edge come back padded with white
    let edge = reopened.read_region(0, 900, 700, 256, 256)?;
    println!(
        "corner pixel past the edge: {:?}",
        edge.get_pixel(255, 255).0
    );
    Ok(())
}
