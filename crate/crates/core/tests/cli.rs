//! The `pnstage` binary driven through its subcommands.

use std::path::Path;
use std::process::{Command, Output};

fn pnstage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnstage"))
        .args(args)
        .env("PNSTAGE_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pnstage(args);
    assert!(
        out.status.success(),
        "pnstage {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cohort(dir: &Path, patients: &str) {
    ok(&[
        "synth-cohort",
        "--out",
        s(dir),
        "--patients",
        patients,
        "--seed",
        "3",
    ]);
}

#[test]
fn run_from_generated_config() {
    let dir = tempfile::tempdir().unwrap();
    cohort(dir.path(), "6");
    let cfg = dir.path().join("pipeline.toml");
    ok(&["run", "--config", s(&cfg)]);
    let work = dir.path().join("work");
    for f in [
        "features.csv",
        "cv.json",
        "slide_predictions.csv",
        "stages.csv",
        "report.json",
    ] {
        assert!(work.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(work.join("report.json")).unwrap()).unwrap();
    assert!(report["kappa"].is_number());

    // a second run reuses everything and gives the same report
    let before = std::fs::read(work.join("report.json")).unwrap();
    ok(&["run", "--config", s(&cfg)]);
    assert_eq!(std::fs::read(work.join("report.json")).unwrap(), before);
}

#[test]
fn failing_stages_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    cohort(dir.path(), "2");
    let cfg = dir.path().join("predict.toml");
    std::fs::write(
        &cfg,
        "mode = \"predict\"\n[paths]\nmodel = \"missing.json\"\n",
    )
    .unwrap();
    let out = pnstage(&["run", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(13));
    assert!(!dir.path().join("work/stages.csv").exists());

    std::fs::write(&cfg, "[roi]\nthreshold = 7.0\n").unwrap();
    assert_eq!(
        pnstage(&["run", "--config", s(&cfg)]).status.code(),
        Some(2)
    );

    let bad = dir.path().join("five.csv");
    std::fs::write(&bad, "patient_id,slide_id,node_class\np,p_node_0,macro\n").unwrap();
    let out = pnstage(&[
        "stage",
        "--in",
        s(&bad),
        "--out",
        s(&dir.path().join("o.csv")),
    ]);
    assert_eq!(out.status.code(), Some(14));
}

#[test]
fn subcommands_chain_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d, "5");
    let labels = d.join("reference_slides.csv");
    let text = std::fs::read_to_string(&labels).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let ids: Vec<String> = rows.iter().map(|r| r[1].clone()).collect();
    assert_eq!(ids.len(), 25);

    let roi = d.join("roi");
    let hm = d.join("hm");
    let mut heatmaps = Vec::new();
    for id in &ids {
        let slide = d.join("slides").join(id);
        let tissue = roi.join(format!("{id}.tmsk"));
        let annot = d.join("annotations").join(format!("{id}.tmsk"));
        ok(&["roi", "--slide", s(&slide), "--out", s(&tissue)]);
        let out = hm.join(format!("{id}.hmap"));
        ok(&[
            "heatmap",
            "--slide",
            s(&slide),
            "--tissue",
            s(&tissue),
            "--annotation",
            s(&annot),
            "--scorer",
            "oracle:0.05:1",
            "--out",
            s(&out),
        ]);
        heatmaps.push(out);
    }

    // patches and sampling on a slide with a macro-metastasis
    let first = &rows
        .iter()
        .find(|r| r[2] == "macro")
        .expect("cohort has a macro slide")[1];
    let patches = d.join("p.csv");
    ok(&[
        "patches",
        "--slide",
        s(&d.join("slides").join(first)),
        "--annotation",
        s(&d.join("annotations").join(format!("{first}.tmsk"))),
        "--out",
        s(&patches),
    ]);
    let negative = &rows
        .iter()
        .find(|r| r[2] == "negative")
        .expect("cohort has a negative slide")[1];
    let normal_patches = d.join("n.csv");
    ok(&[
        "patches",
        "--slide",
        s(&d.join("slides").join(negative)),
        "--out",
        s(&normal_patches),
    ]);
    let sample = d.join("sample.csv");
    ok(&[
        "sample",
        "--patches",
        s(&patches),
        s(&normal_patches),
        "--n",
        "4",
        "--seed",
        "1",
        "--out",
        s(&sample),
    ]);
    assert!(std::fs::read_to_string(&sample).unwrap().lines().count() > 1);

    let features = d.join("features.csv");
    let mut args = vec!["features".to_string()];
    for h in &heatmaps {
        args.extend(["--heatmap".into(), s(h).into()]);
    }
    args.extend(
        [
            "--slides",
            s(&d.join("slides")),
            "--roi",
            s(&roi),
            "--out",
            s(&features),
        ]
        .map(String::from),
    );
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    let model = d.join("model.json");
    let common = [
        "--features",
        s(&features),
        "--labels",
        s(&labels),
        "--trees",
        "50",
        "--seed",
        "2",
    ];
    ok(&[&["train-rf"][..], &common, &["--out", s(&model)]].concat());
    let cv = ok(&[&["cv"][..], &common, &["--k", "5"]].concat());
    assert!(cv.contains("mean_accuracy"));

    let preds = d.join("pred.csv");
    ok(&[
        "predict-rf",
        "--model",
        s(&model),
        "--features",
        s(&features),
        "--out",
        s(&preds),
    ]);
    let stages = d.join("stages.csv");
    ok(&["stage", "--in", s(&preds), "--out", s(&stages)]);

    let reference = d.join("reference_stages.csv");
    let kappa = ok(&[
        "eval",
        "--task",
        "kappa",
        "--reference",
        s(&reference),
        "--predicted",
        s(&stages),
    ]);
    let v: serde_json::Value = serde_json::from_str(&kappa).unwrap();
    // trained and scored on the same slides, so the fit is exact
    assert_eq!(v["kappa"].as_f64(), Some(1.0));
    let conf = ok(&[
        "eval",
        "--task",
        "confusion",
        "--reference",
        s(&labels),
        "--predicted",
        s(&preds),
    ]);
    assert!(conf.contains("counts"));
}
