//! Lymph-node classes and the patient-level pN-stage rule.
//!
//! The rule table lives in `data/pn_staging.toml` and is compiled in as the
//! default; a different table can be loaded at runtime.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_RULES: &str = include_str!("../data/pn_staging.toml");

#[derive(Debug, Error)]
pub enum StagingError {
    #[error("patient {patient} has {count} slides, expected {expected}")]
    WrongSlideCount {
        patient: String,
        count: usize,
        expected: usize,
    },
    #[error("unknown label {0:?}")]
    BadLabel(String),
    #[error("invalid staging rules: {0}")]
    BadRules(String),
    #[error("no rule matched slides {0:?}")]
    NoRuleMatched(Vec<NodeClass>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Slide-level metastasis class, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeClass {
    Negative,
    Itc,
    Micro,
    Macro,
}

impl NodeClass {
    pub const ALL: [NodeClass; 4] = [
        NodeClass::Negative,
        NodeClass::Itc,
        NodeClass::Micro,
        NodeClass::Macro,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeClass::Negative => "negative",
            NodeClass::Itc => "itc",
            NodeClass::Micro => "micro",
            NodeClass::Macro => "macro",
        }
    }
}

impl std::fmt::Display for NodeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeClass {
    type Err = StagingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" | "normal" => Ok(NodeClass::Negative),
            "itc" => Ok(NodeClass::Itc),
            "micro" => Ok(NodeClass::Micro),
            "macro" => Ok(NodeClass::Macro),
            _ => Err(StagingError::BadLabel(s.to_string())),
        }
    }
}

/// Simplified five-class pN-stage, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PNStage {
    #[serde(rename = "pN0")]
    PN0,
    #[serde(rename = "pN0(i+)", alias = "pN0i+")]
    PN0ItcPlus,
    #[serde(rename = "pN1mi")]
    PN1mi,
    #[serde(rename = "pN1")]
    PN1,
    #[serde(rename = "pN2")]
    PN2,
}

impl PNStage {
    pub const ALL: [PNStage; 5] = [
        PNStage::PN0,
        PNStage::PN0ItcPlus,
        PNStage::PN1mi,
        PNStage::PN1,
        PNStage::PN2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PNStage::PN0 => "pN0",
            PNStage::PN0ItcPlus => "pN0(i+)",
            PNStage::PN1mi => "pN1mi",
            PNStage::PN1 => "pN1",
            PNStage::PN2 => "pN2",
        }
    }
}

impl std::fmt::Display for PNStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PNStage {
    type Err = StagingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "pN0" => Ok(PNStage::PN0),
            "pN0(i+)" | "pN0i+" => Ok(PNStage::PN0ItcPlus),
            "pN1mi" => Ok(PNStage::PN1mi),
            "pN1" => Ok(PNStage::PN1),
            "pN2" => Ok(PNStage::PN2),
            _ => Err(StagingError::BadLabel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub slides: Vec<NodeClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagingRule {
    pub stage: PNStage,
    #[serde(default)]
    pub any_of: Vec<NodeClass>,
    #[serde(default)]
    pub min_positive: Option<usize>,
    #[serde(default)]
    pub max_positive: Option<usize>,
}

impl StagingRule {
    fn is_unconditional(&self) -> bool {
        self.any_of.is_empty() && self.min_positive.is_none() && self.max_positive.is_none()
    }
}

/// Ordered first-match rule table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagingRules {
    pub slides_per_patient: usize,
    pub positive_classes: Vec<NodeClass>,
    #[serde(rename = "rule")]
    pub rules: Vec<StagingRule>,
}

impl Default for StagingRules {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_RULES).expect("bundled staging rules are valid")
    }
}

impl StagingRules {
    pub fn from_toml_str(s: &str) -> Result<Self, StagingError> {
        let rules: StagingRules =
            toml::from_str(s).map_err(|e| StagingError::BadRules(e.to_string()))?;
        match rules.rules.last() {
            Some(last) if last.is_unconditional() => Ok(rules),
            _ => Err(StagingError::BadRules(
                "the last rule must be unconditional".into(),
            )),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StagingError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn stage(&self, patient: &str, slides: &[NodeClass]) -> Result<PNStage, StagingError> {
        if slides.len() != self.slides_per_patient {
            return Err(StagingError::WrongSlideCount {
                patient: patient.to_string(),
                count: slides.len(),
                expected: self.slides_per_patient,
            });
        }
        let positive = slides
            .iter()
            .filter(|s| self.positive_classes.contains(s))
            .count();
        self.rules
            .iter()
            .find(|r| {
                (r.any_of.is_empty() || slides.iter().any(|s| r.any_of.contains(s)))
                    && r.min_positive.is_none_or(|m| positive >= m)
                    && r.max_positive.is_none_or(|m| positive <= m)
            })
            .map(|r| r.stage)
            .ok_or_else(|| StagingError::NoRuleMatched(slides.to_vec()))
    }

    pub fn stage_patient(&self, rec: &PatientRecord) -> Result<PNStage, StagingError> {
        self.stage(&rec.patient_id, &rec.slides)
    }

    pub fn stage_all(
        &self,
        records: &[PatientRecord],
    ) -> Result<BTreeMap<String, PNStage>, StagingError> {
        records
            .iter()
            .map(|r| Ok((r.patient_id.clone(), self.stage_patient(r)?)))
            .collect()
    }
}

/// Stages one patient with the bundled rule table.
pub fn stage_patient(rec: &PatientRecord) -> Result<PNStage, StagingError> {
    StagingRules::default().stage_patient(rec)
}

pub fn stage_all(records: &[PatientRecord]) -> Result<BTreeMap<String, PNStage>, StagingError> {
    StagingRules::default().stage_all(records)
}

/// One `patient_id,slide_id,node_class` row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideLabel {
    pub patient_id: String,
    pub slide_id: String,
    pub node_class: NodeClass,
}

pub fn read_slide_labels<R: Read>(r: R) -> Result<Vec<SlideLabel>, StagingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(StagingError::BadLabel(format!("row {:?}", rec)));
        }
        out.push(SlideLabel {
            patient_id: rec[0].to_string(),
            slide_id: rec[1].to_string(),
            node_class: rec[2].parse()?,
        });
    }
    Ok(out)
}

pub fn write_slide_labels<W: Write>(w: W, labels: &[SlideLabel]) -> Result<(), StagingError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["patient_id", "slide_id", "node_class"])?;
    for l in labels {
        out.write_record([
            l.patient_id.as_str(),
            l.slide_id.as_str(),
            l.node_class.as_str(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Groups slide rows into patient records, slides sorted by slide id.
pub fn group_by_patient(labels: &[SlideLabel]) -> Vec<PatientRecord> {
    let mut by: BTreeMap<&str, Vec<(&str, NodeClass)>> = BTreeMap::new();
    for l in labels {
        by.entry(&l.patient_id)
            .or_default()
            .push((&l.slide_id, l.node_class));
    }
    by.into_iter()
        .map(|(p, mut slides)| {
            slides.sort();
            PatientRecord {
                patient_id: p.to_string(),
                slides: slides.into_iter().map(|s| s.1).collect(),
            }
        })
        .collect()
}

pub fn write_stages<W: Write>(
    w: W,
    stages: &BTreeMap<String, PNStage>,
) -> Result<(), StagingError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["patient_id", "stage"])?;
    for (p, s) in stages {
        out.write_record([p.as_str(), s.as_str()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_stages<R: Read>(r: R) -> Result<BTreeMap<String, PNStage>, StagingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(StagingError::BadLabel(format!("row {:?}", rec)));
        }
        out.insert(rec[0].to_string(), rec[1].parse()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use NodeClass::*;

    fn rec(slides: &[NodeClass]) -> PatientRecord {
        PatientRecord {
            patient_id: "p".into(),
            slides: slides.to_vec(),
        }
    }

    #[test]
    fn worked_cases() {
        let cases = [
            (
                [Negative, Negative, Negative, Negative, Negative],
                PNStage::PN0,
            ),
            (
                [Itc, Negative, Negative, Negative, Negative],
                PNStage::PN0ItcPlus,
            ),
            ([Micro, Micro, Negative, Negative, Negative], PNStage::PN1mi),
            ([Macro, Micro, Micro, Micro, Negative], PNStage::PN2),
            ([Macro, Micro, Micro, Itc, Itc], PNStage::PN1),
            ([Itc, Itc, Itc, Itc, Micro], PNStage::PN1mi),
        ];
        for (slides, expect) in cases {
            assert_eq!(stage_patient(&rec(&slides)).unwrap(), expect, "{slides:?}");
        }
    }

    #[test]
    fn wrong_count_rejected() {
        assert!(matches!(
            stage_patient(&rec(&[Macro; 4])),
            Err(StagingError::WrongSlideCount { count: 4, .. })
        ));
        assert!(stage_all(&[]).unwrap().is_empty());
    }

    #[test]
    fn rules_need_a_fallback() {
        let bad = "slides_per_patient = 5\npositive_classes = [\"macro\"]\n[[rule]]\nstage = \"pN2\"\nany_of = [\"macro\"]\n";
        assert!(matches!(
            StagingRules::from_toml_str(bad),
            Err(StagingError::BadRules(_))
        ));
    }

    #[test]
    fn labels_parse() {
        assert_eq!("ITC".parse::<NodeClass>().unwrap(), Itc);
        assert_eq!("pN0i+".parse::<PNStage>().unwrap(), PNStage::PN0ItcPlus);
        assert_eq!(PNStage::PN0ItcPlus.to_string(), "pN0(i+)");
        assert!("pN3".parse::<PNStage>().is_err());
    }

    #[test]
    fn csv_grouping_and_output() {
        let input = "patient_id,slide_id,node_class\np1,p1_n1,micro\np1,p1_n0,macro\np1,p1_n2,negative\np1,p1_n3,negative\np1,p1_n4,itc\np0,p0_n0,negative\np0,p0_n1,negative\np0,p0_n2,negative\np0,p0_n3,negative\np0,p0_n4,negative\n";
        let labels = read_slide_labels(input.as_bytes()).unwrap();
        let recs = group_by_patient(&labels);
        assert_eq!(recs[1].slides, vec![Macro, Micro, Negative, Negative, Itc]);
        let stages = stage_all(&recs).unwrap();
        let mut out = Vec::new();
        write_stages(&mut out, &stages).unwrap();
        assert_eq!(
            String::from_utf8(out.clone()).unwrap(),
            "patient_id,stage\np0,pN0\np1,pN1\n"
        );
        assert_eq!(read_stages(out.as_slice()).unwrap(), stages);
    }
}
