//! Random geometric and color augmentation of a patch context, written out
//! as PNGs.
//!
//! cargo run --example augmentation -- [out_dir] [count]

use image::imageops;
use pnstage::augment::{augment, AugmentationParams, MIN_CONTEXT};
use pnstage::slide_io::{synthesize_slide, Lesion, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let tmp = tempfile::tempdir()?;
    let out = args
        .next()
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().to_path_buf());
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    std::fs::create_dir_all(&out)?;

    let mut spec = SyntheticSpec::new(2, 768, 768);
    spec.tumor_lesions.push(Lesion {
        cx: 384.0,
        cy: 384.0,
        radius: 120.0,
    });
    let (bundle, _) = synthesize_slide(&spec, "aug", tmp.path().join("aug"))?;
    let c = MIN_CONTEXT as i64;
    let context = bundle.read_region(0, 384 - c / 2, 384 - c / 2, MIN_CONTEXT, MIN_CONTEXT)?;
    let off = (MIN_CONTEXT - 256) / 2;
    imageops::crop_imm(&context, off, off, 256, 256)
        .to_image()
        .save(out.join("original.png"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..count {
        let p = AugmentationParams::sample(&mut rng);
        println!(
            "#{i}: shift ({}, {}) flip {} angle {:.1} hue {:+.3} sat {:.2} bright {:+.2} contrast {:.2}",
            p.dx, p.dy, p.flip, p.angle, p.hue_delta, p.sat_factor, p.bright_delta, p.contrast_factor
        );
        augment(&context, &p)?.save(out.join(format!("augmented_{i}.png")))?;
    }
    println!("wrote {} images to {}", count + 1, out.display());
    Ok(())
}
