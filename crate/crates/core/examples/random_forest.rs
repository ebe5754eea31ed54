//! Trains the slide classifier on noisy synthetic features, cross-validates
//! it by patient and round-trips the model through JSON.
//!
//! cargo run --release --example random_forest -- [trees]

use pnstage::forest::{cross_validate, train_forest, ForestModel, ForestParams, LabeledSlide};
use pnstage::heatmap::{RegionFeatureVector, FEATURE_COUNT};
use pnstage::staging::NodeClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trees: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(200);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // class shifts every feature; the noise makes neighbouring classes overlap
    let slides: Vec<LabeledSlide> = (0..300)
        .map(|i| {
            let c = rng.random_range(0..4);
            let f: [f64; FEATURE_COUNT] =
                std::array::from_fn(|_| c as f64 + rng.random_range(-2.0..2.0));
            LabeledSlide {
                patient_id: format!("p{:02}", i / 5),
                slide_id: format!("p{:02}_node_{}", i / 5, i % 5),
                features: RegionFeatureVector::from_array(f),
                class: NodeClass::ALL[c],
            }
        })
        .collect();

    let params = ForestParams {
        n_trees: trees,
        ..Default::default()
    };
    let cv = cross_validate(&slides, 5, &params, 1)?;
    for (i, acc) in cv.fold_accuracy.iter().enumerate() {
        println!(
            "fold {i}: {} patients, accuracy {acc:.3}",
            cv.folds[i].len()
        );
    }
    println!("mean accuracy {:.3}", cv.mean_accuracy);

    let train: Vec<_> = slides.iter().map(|s| (s.features, s.class)).collect();
    let model = train_forest(&train, &params, 1)?;
    let json = model.to_json();
    let back = ForestModel::from_json(&json)?;
    let probe = RegionFeatureVector::from_array([1.6; FEATURE_COUNT]);
    let p = back.predict(&probe)?;
    println!(
        "model {} bytes; probe -> {} {:?}",
        json.len(),
        p.class.as_str(),
        p.probabilities
    );
    let depth = model.trees.iter().map(|t| t.depth()).max().unwrap_or(0);
    println!("{} trees, deepest {depth}", model.trees.len());
    Ok(())
}
