//! Scores a slide through an out-of-process scorer speaking the framed
//! stdio protocol.
//!
//! With no arguments this re-runs itself as the scorer (`--serve`), which
//! marks a patch as tumor when its red channel outweighs green. Pass a
//! command line to use another scorer:
//!
//! cargo run --example external_scorer -- python3 my_scorer.py

use std::io::{stdin, stdout};
use std::time::Duration;

use pnstage::heatmap::{stitch_heatmap, StitchOptions};
use pnstage::roi::tissue_mask;
use pnstage::scoring::protocol::{serve, MAGIC};
use pnstage::scoring::ExternalScorer;
use pnstage::slide_io::{synthesize_slide, Lesion, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    if args.get(1).map(String::as_str) == Some("--serve") {
        serve(stdin().lock(), stdout().lock(), MAGIC, |patches| {
            patches
                .iter()
                .map(|p| {
                    let (r, g) = p.pixels().fold((0u64, 0u64), |(r, g), px| {
                        (r + px[0] as u64, g + px[1] as u64)
                    });
                    if g < r {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })?;
        return Ok(());
    }
    let argv = if args.len() > 1 {
        args[1..].to_vec()
    } else {
        vec![args[0].clone(), "--serve".into()]
    };

    let tmp = tempfile::tempdir()?;
    let mut spec = SyntheticSpec::new(6, 1024, 768);
    spec.tumor_lesions.push(Lesion {
        cx: 420.0,
        cy: 380.0,
        radius: 210.0,
    });
    let (bundle, _) = synthesize_slide(&spec, "ext", tmp.path().join("ext"))?;
    let tissue = tissue_mask(&bundle, 0.8)?;

    let mut scorer = ExternalScorer::spawn(&argv, Duration::from_secs(30))?;
    scorer.batch_size = 8;
    let hm = stitch_heatmap(
        &bundle,
        &tissue,
        &mut scorer,
        StitchOptions {
            batch_size: 8,
            ..Default::default()
        },
    )?;
    for row in hm.grid.rows() {
        let line: String = row
            .iter()
            .map(|&v| {
                if v >= 0.5 {
                    '#'
                } else if v > 0.0 {
                    '+'
                } else {
                    '.'
                }
            })
            .collect();
        println!("{line}");
    }
    Ok(())
}
