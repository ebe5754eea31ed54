//! The external scorer client against the bundled stub process.

use std::time::Duration;

use pnstage::heatmap::{stitch_heatmap, StitchOptions};
use pnstage::roi::tissue_mask;
use pnstage::scoring::{ExternalScorer, PatchInput, PatchScorer, ScoreError};
use pnstage::slide_io::{synthesize_slide, Lesion, SyntheticSpec};

fn stub(args: &[&str]) -> Vec<String> {
    let mut v = vec![
        env!("CARGO_BIN_EXE_pnstage").to_string(),
        "scorer-stub".into(),
    ];
    v.extend(args.iter().map(|s| s.to_string()));
    v
}

fn sh(script: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), script.into()]
}

const WAIT: Duration = Duration::from_secs(30);

#[test]
fn handshake_mismatch_is_reported() {
    let err = ExternalScorer::spawn(&stub(&["--magic", "PNS2"]), WAIT).unwrap_err();
    match err {
        ScoreError::HandshakeMismatch { expected, got } => {
            assert_eq!((expected.as_str(), got.as_str()), ("PNS1", "PNS2"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn silent_scorer_times_out() {
    let mut s =
        ExternalScorer::spawn(&sh("printf PNS1; sleep 10"), Duration::from_millis(300)).unwrap();
    let p = PatchInput {
        slide_id: "s".into(),
        x: 0,
        y: 0,
        raster: image::RgbImage::new(256, 256),
    };
    assert!(matches!(s.score_batch(&[p]), Err(ScoreError::Timeout(_))));
}

#[test]
fn exiting_scorer_is_a_crash() {
    let mut s = ExternalScorer::spawn(&sh("printf PNS1"), WAIT).unwrap();
    let p = PatchInput {
        slide_id: "s".into(),
        x: 0,
        y: 0,
        raster: image::RgbImage::new(256, 256),
    };
    assert!(matches!(
        s.score_batch(&[p]),
        Err(ScoreError::ScorerCrashed(_))
    ));
}

#[test]
fn heatmaps_do_not_depend_on_batching() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SyntheticSpec::new(4, 768, 640);
    spec.tumor_lesions.push(Lesion {
        cx: 380.0,
        cy: 300.0,
        radius: 150.0,
    });
    let (bundle, _) = synthesize_slide(&spec, "s", dir.path().join("s")).unwrap();
    let tissue = tissue_mask(&bundle, 0.8).unwrap();

    let mut zero = ExternalScorer::spawn(&stub(&["--constant", "0.0"]), WAIT).unwrap();
    let hm = stitch_heatmap(&bundle, &tissue, &mut zero, StitchOptions::default()).unwrap();
    assert!(hm.grid.iter().all(|&v| v == 0.0));

    let mut maps = Vec::new();
    for batch in [1, 7, 32] {
        let mut s = ExternalScorer::spawn(&stub(&["--tint"]), WAIT).unwrap();
        s.batch_size = batch;
        let opts = StitchOptions {
            batch_size: batch,
            ..Default::default()
        };
        maps.push(stitch_heatmap(&bundle, &tissue, &mut s, opts).unwrap());
    }
    assert!(maps[0].max() > 0.0, "tint stub should find the lesion");
    assert_eq!(maps[0], maps[1]);
    assert_eq!(maps[0], maps[2]);
}
