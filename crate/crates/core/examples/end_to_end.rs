//! Synthesizes a 40-patient cohort, runs the whole pipeline with the noisy
//! oracle scorer and 5-fold patient cross-validation, and prints the report.
//!
//! cargo run --release --example end_to_end -- [out_dir] [seed]

use std::time::Instant;

use pnstage::cohort::{synth_cohort, CohortOptions};
use pnstage::pipeline::{cohort_config, run_pipeline};
use pnstage::scoring::ScorerSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(std::path::PathBuf::from);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(17);
    let tmp;
    let dir = match out {
        Some(d) => d,
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_path_buf()
        }
    };

    let start = Instant::now();
    let cohort = synth_cohort(
        &CohortOptions {
            n_patients: 40,
            seed,
            ..Default::default()
        },
        &dir,
    )?;
    println!(
        "cohort: {} patients in {:.1?}",
        cohort.patients.len(),
        start.elapsed()
    );

    let mut cfg = cohort_config(&dir);
    cfg.scorer = ScorerSpec::Oracle { sigma: 0.05, seed };
    let summary = run_pipeline(cfg)?;
    let r = &summary.report;
    println!("slide accuracy {:.4}", r.slide_accuracy.unwrap_or(f64::NAN));
    println!("patient kappa  {:.4}", r.kappa.unwrap_or(f64::NAN));
    if let Some(auc) = r.auc {
        println!("slide AUC      {auc:.4}");
    }
    if let Some(f) = &r.froc {
        println!("FROC score     {:.4}", f.score);
    }
    if let Some(cm) = &r.confusion {
        println!("confusion (rows reference, columns predicted):");
        for row in cm.counts {
            println!("  {row:?}");
        }
    }
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
