//! pN-stages for a handful of patients, with the bundled rule table and a
//! custom one.
//!
//! cargo run --example staging

use pnstage::staging::{NodeClass, StagingRules};

use NodeClass::{Itc, Macro, Micro, Negative};

const STRICT: &str = r#"
slides_per_patient = 5
positive_classes = ["micro", "macro"]

[[rule]]
stage = "pN2"
any_of = ["macro"]
min_positive = 3

[[rule]]
stage = "pN1"
any_of = ["macro"]

[[rule]]
stage = "pN1mi"
any_of = ["micro"]

[[rule]]
stage = "pN0(i+)"
any_of = ["itc"]

[[rule]]
stage = "pN0"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let patients = [
        [Negative; 5],
        [Itc, Negative, Negative, Negative, Negative],
        [Micro, Micro, Negative, Negative, Negative],
        [Macro, Micro, Micro, Negative, Negative],
        [Macro, Micro, Micro, Micro, Negative],
    ];
    let bundled = StagingRules::default();
    let strict = StagingRules::from_toml_str(STRICT)?;
    println!("{:<46}{:>10}{:>10}", "slides", "bundled", "strict");
    for (i, slides) in patients.iter().enumerate() {
        let names: Vec<&str> = slides.iter().map(|c| c.as_str()).collect();
        let id = format!("patient_{i}");
        println!(
            "{:<46}{:>10}{:>10}",
            names.join(","),
            bundled.stage(&id, slides)?.to_string(),
            strict.stage(&id, slides)?.to_string()
        );
    }
    match bundled.stage("short", &[Macro, Macro]) {
        Err(e) => println!("two slides: {e}"),
        Ok(s) => println!("two slides staged {s}"),
    }
    Ok(())
}
