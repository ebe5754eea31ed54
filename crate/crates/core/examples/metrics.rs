//! Slide AUC, lesion FROC, patient kappa and the slide confusion matrix on
//! small hand-made inputs.
//!
//! cargo run --example metrics

use pnstage::metrics::{
    auc, confusion_matrix, froc, quadratic_weighted_kappa, GroundTruthRegion, LesionDetection,
    ScoredSlide, SlideTruth, DEFAULT_FP_POINTS,
};
use pnstage::staging::{NodeClass, PNStage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let slides: Vec<ScoredSlide> = [
        (true, 0.97),
        (true, 0.62),
        (false, 0.62),
        (false, 0.10),
        (true, 0.88),
        (false, 0.35),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(tumor, score))| ScoredSlide {
        slide_id: format!("s{i}"),
        label: if tumor {
            SlideTruth::Tumor
        } else {
            SlideTruth::Normal
        },
        score,
    })
    .collect();
    println!("AUC {:.4}", auc(&slides)?);

    // two slides, three true lesions, one detected twice and one false alarm
    let truth = vec![
        GroundTruthRegion {
            slide_id: "a".into(),
            cells: vec![(1, 1), (1, 2)],
        },
        GroundTruthRegion {
            slide_id: "a".into(),
            cells: vec![(5, 5)],
        },
        GroundTruthRegion {
            slide_id: "b".into(),
            cells: vec![(3, 0)],
        },
    ];
    let det = |s: &str, row, col, confidence| LesionDetection {
        slide_id: s.into(),
        row,
        col,
        confidence,
    };
    let detections = vec![
        det("a", 1, 2, 0.95),
        det("a", 1, 1, 0.90),
        det("b", 7, 7, 0.80),
        det("b", 3, 0, 0.60),
    ];
    let f = froc(&detections, &truth, 2, &DEFAULT_FP_POINTS)?;
    for (p, s) in f.fp_points.iter().zip(&f.sensitivities) {
        println!("  sensitivity at {p} FP/slide: {s:.3}");
    }
    println!("FROC score {:.4}", f.score);

    use PNStage::*;
    let stages = [
        (PN0, PN0),
        (PN1, PN1),
        (PN2, PN1),
        (PN1mi, PN0ItcPlus),
        (PN0ItcPlus, PN0ItcPlus),
        (PN2, PN2),
    ];
    println!("kappa {:.4}", quadratic_weighted_kappa(&stages)?);
    println!(
        "kappa of full disagreement {:.4}",
        quadratic_weighted_kappa(&[(PN0, PN2), (PN2, PN0)])?
    );

    use NodeClass::*;
    let pairs = [
        (Negative, Negative),
        (Negative, Itc),
        (Itc, Itc),
        (Micro, Macro),
        (Macro, Macro),
        (Macro, Macro),
    ];
    let cm = confusion_matrix(&pairs)?;
    println!("confusion (rows reference), accuracy {:.3}", cm.accuracy());
    for (c, row) in NodeClass::ALL.iter().zip(cm.percentages) {
        println!("  {:<9}{:?}", c.as_str(), row);
    }
    Ok(())
}
