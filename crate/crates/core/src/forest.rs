//! Bagged CART random forest over slide feature vectors.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heatmap::{RegionFeatureVector, FEATURE_COUNT};
use crate::staging::NodeClass;

pub const MODEL_VERSION: &str = "pnstage-forest/1";
const N_CLASSES: usize = 4;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("need at least {k} patients for {k}-fold cross-validation, got {patients}")]
    TooFewPatients { k: usize, patients: usize },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model version {found:?}, expected {MODEL_VERSION:?}")]
    VersionMismatch { found: String },
    #[error("model expects {expected} features, input has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid hyperparameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeight {
    #[default]
    None,
    /// Weights each class by `n / (classes_present * n_class)`.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub class_weight: ClassWeight,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: 3,
            class_weight: ClassWeight::None,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::BadParams("n_trees must be positive".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::BadParams(
                "min_samples_leaf must be positive".into(),
            ));
        }
        if !(1..=FEATURE_COUNT).contains(&self.features_per_split) {
            return Err(ForestError::BadParams(format!(
                "features_per_split must be in 1..={FEATURE_COUNT}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    /// `left` is taken when `x[feature] <= threshold`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        dist: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Root first.
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf_dist(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                TreeNode::Leaf { dist } => return dist,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: String,
    pub n_classes: usize,
    pub feature_count: usize,
    pub seed: u64,
    pub params: ForestParams,
    pub trees: Vec<DecisionTree>,
}

/// Gini impurity of a (weighted) class histogram.
pub fn gini(hist: &[f64]) -> f64 {
    let total: f64 = hist.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - hist.iter().map(|&h| (h / total) * (h / total)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [[f64; FEATURE_COUNT]],
    y: &'a [usize],
    w: &'a [f64],
    params: &'a ForestParams,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn hist(&self, idx: &[usize]) -> [f64; N_CLASSES] {
        let mut h = [0.0; N_CLASSES];
        for &i in idx {
            h[self.y[i]] += self.w[i];
        }
        h
    }

    fn leaf(&mut self, h: &[f64; N_CLASSES]) -> usize {
        let total: f64 = h.iter().sum();
        self.nodes.push(TreeNode::Leaf {
            dist: h.iter().map(|v| v / total).collect(),
        });
        self.nodes.len() - 1
    }

    /// Best split of `idx` on `feature`, if any respects `min_samples_leaf`.
    fn best_on(
        &self,
        idx: &mut [usize],
        feature: usize,
        total: &[f64; N_CLASSES],
    ) -> Option<BestSplit> {
        idx.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf;
        let w_total: f64 = total.iter().sum();
        let mut left = [0.0; N_CLASSES];
        let mut best: Option<BestSplit> = None;
        for k in 0..n - 1 {
            let i = idx[k];
            left[self.y[i]] += self.w[i];
            let (a, b) = (self.x[i][feature], self.x[idx[k + 1]][feature]);
            if a == b || k + 1 < min_leaf || n - k - 1 < min_leaf {
                continue;
            }
            let mut right = *total;
            for (r, l) in right.iter_mut().zip(left.iter()) {
                *r -= l;
            }
            let wl: f64 = left.iter().sum();
            let wr = w_total - wl;
            let impurity = (wl * gini(&left) + wr * gini(&right)) / w_total;
            let mut threshold = a + (b - a) / 2.0;
            if threshold >= b {
                threshold = a;
            }
            // strict improvement keeps the lowest threshold on ties
            if best.as_ref().is_none_or(|s| impurity < s.impurity) {
                best = Some(BestSplit {
                    impurity,
                    feature,
                    threshold,
                });
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let h = self.hist(idx);
        let parent = gini(&h);
        let depth_done = self.params.max_depth.is_some_and(|d| depth >= d);
        if parent == 0.0 || depth_done || idx.len() < 2 * self.params.min_samples_leaf {
            return self.leaf(&h);
        }
        let mut order: Vec<usize> = (0..FEATURE_COUNT).collect();
        order.shuffle(rng);
        // constant features do not count towards features_per_split
        let mut tried = 0;
        let mut chosen = Vec::with_capacity(self.params.features_per_split);
        for f in order {
            if tried == self.params.features_per_split {
                break;
            }
            let first = self.x[idx[0]][f];
            if idx.iter().all(|&i| self.x[i][f] == first) {
                continue;
            }
            tried += 1;
            chosen.push(f);
        }
        chosen.sort_unstable();
        let mut best: Option<BestSplit> = None;
        for f in chosen {
            if let Some(s) = self.best_on(idx, f, &h) {
                if best.as_ref().is_none_or(|b| s.impurity < b.impurity) {
                    best = Some(s);
                }
            }
        }
        let Some(best) = best.filter(|b| b.impurity < parent - 1e-12) else {
            return self.leaf(&h);
        };
        let (f, t) = (best.feature, best.threshold);
        // partition in place: left side first, original order kept within sides
        let mut l: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][f] <= t).collect();
        let mut r: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][f] > t).collect();
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { dist: Vec::new() });
        let left = self.grow(&mut l, depth + 1, rng);
        let right = self.grow(&mut r, depth + 1, rng);
        self.nodes[me] = TreeNode::Split {
            feature: f,
            threshold: t,
            left,
            right,
        };
        me
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

fn sample_weights(y: &[usize], cw: ClassWeight) -> Vec<f64> {
    match cw {
        ClassWeight::None => vec![1.0; y.len()],
        ClassWeight::Balanced => {
            let mut counts = [0usize; N_CLASSES];
            for &c in y {
                counts[c] += 1;
            }
            let present = counts.iter().filter(|&&c| c > 0).count() as f64;
            y.iter()
                .map(|&c| y.len() as f64 / (present * counts[c] as f64))
                .collect()
        }
    }
}

/// Trains a forest. Trees are grown in parallel from independent RNG
/// streams, so the model does not depend on the thread count.
pub fn train_forest(
    samples: &[(RegionFeatureVector, NodeClass)],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel, ForestError> {
    params.validate()?;
    if samples.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    let x: Vec<[f64; FEATURE_COUNT]> = samples.iter().map(|(f, _)| f.to_array()).collect();
    let y: Vec<usize> = samples.iter().map(|(_, c)| c.index()).collect();
    let mut model = ForestModel {
        version: MODEL_VERSION.to_string(),
        n_classes: N_CLASSES,
        feature_count: FEATURE_COUNT,
        seed,
        params: *params,
        trees: Vec::new(),
    };
    if y.iter().all(|&c| c == y[0]) {
        log::warn!("training set has a single class; returning a constant model");
        let mut dist = vec![0.0; N_CLASSES];
        dist[y[0]] = 1.0;
        model.trees.push(DecisionTree {
            nodes: vec![TreeNode::Leaf { dist }],
        });
        return Ok(model);
    }
    let w = sample_weights(&y, params.class_weight);
    let n = samples.len();
    model.trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder {
                x: &x,
                y: &y,
                w: &w,
                params,
                nodes: Vec::new(),
            };
            b.grow(&mut idx, 0, &mut rng);
            DecisionTree { nodes: b.nodes }
        })
        .collect();
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: NodeClass,
    pub probabilities: [f64; N_CLASSES],
}

impl ForestModel {
    pub fn predict_slice(&self, x: &[f64]) -> Result<Prediction, ForestError> {
        if x.len() != self.feature_count {
            return Err(ForestError::DimensionMismatch {
                expected: self.feature_count,
                actual: x.len(),
            });
        }
        let mut p = [0.0; N_CLASSES];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.leaf_dist(x)) {
                *acc += v;
            }
        }
        for v in &mut p {
            *v /= self.trees.len() as f64;
        }
        let mut best = 0;
        for c in 1..N_CLASSES {
            if p[c] > p[best] {
                best = c;
            }
        }
        Ok(Prediction {
            class: NodeClass::ALL[best],
            probabilities: p,
        })
    }

    pub fn predict(&self, fv: &RegionFeatureVector) -> Result<Prediction, ForestError> {
        self.predict_slice(&fv.to_array())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ForestError> {
        let v: serde_json::Value =
            serde_json::from_str(s).map_err(|e| ForestError::CorruptModel(e.to_string()))?;
        match v.get("version").and_then(|v| v.as_str()) {
            Some(MODEL_VERSION) => {}
            Some(other) => {
                return Err(ForestError::VersionMismatch {
                    found: other.to_string(),
                })
            }
            None => return Err(ForestError::CorruptModel("missing version".into())),
        }
        let m: ForestModel =
            serde_json::from_value(v).map_err(|e| ForestError::CorruptModel(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), ForestError> {
        let bad = |msg: String| Err(ForestError::CorruptModel(msg));
        if self.n_classes != N_CLASSES {
            return bad(format!("{} classes", self.n_classes));
        }
        if self.trees.is_empty() {
            return bad("no trees".into());
        }
        for (ti, t) in self.trees.iter().enumerate() {
            if t.nodes.is_empty() {
                return bad(format!("tree {ti} is empty"));
            }
            for (ni, node) in t.nodes.iter().enumerate() {
                match node {
                    TreeNode::Split {
                        feature,
                        left,
                        right,
                        ..
                    } => {
                        // children always follow their parent, which rules out cycles
                        if *feature >= self.feature_count
                            || *left <= ni
                            || *right <= ni
                            || *left >= t.nodes.len()
                            || *right >= t.nodes.len()
                        {
                            return bad(format!("tree {ti} node {ni} is malformed"));
                        }
                    }
                    TreeNode::Leaf { dist } => {
                        let s: f64 = dist.iter().sum();
                        if dist.len() != N_CLASSES || (s - 1.0).abs() > 1e-9 {
                            return bad(format!("tree {ti} leaf {ni} is not a distribution"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForestError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A training example tied to its patient.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSlide {
    pub patient_id: String,
    pub slide_id: String,
    pub features: RegionFeatureVector,
    pub class: NodeClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    /// Patient ids per fold.
    pub folds: Vec<Vec<String>>,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Out-of-fold prediction for every input slide, in input order.
    pub predictions: Vec<(String, NodeClass)>,
}

/// Assigns patients to `k` folds, stratified by each patient's most severe
/// slide class. Within a class, patients are shuffled and dealt round-robin.
pub fn patient_folds(
    samples: &[LabeledSlide],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>, ForestError> {
    let mut worst: BTreeMap<&str, NodeClass> = BTreeMap::new();
    for s in samples {
        let e = worst.entry(&s.patient_id).or_insert(s.class);
        *e = (*e).max(s.class);
    }
    if k < 2 || k > worst.len() {
        return Err(ForestError::TooFewPatients {
            k,
            patients: worst.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in NodeClass::ALL {
        let mut group: Vec<&str> = worst
            .iter()
            .filter(|(_, &c)| c == class)
            .map(|(p, _)| *p)
            .collect();
        group.shuffle(&mut rng);
        for p in group {
            folds[next % k].push(p.to_string());
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

/// Patient-level k-fold cross-validation with slide-level accuracy.
pub fn cross_validate(
    samples: &[LabeledSlide],
    k: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<CvResult, ForestError> {
    let folds = patient_folds(samples, k, seed)?;
    let mut predicted: Vec<Option<NodeClass>> = vec![None; samples.len()];
    let mut fold_accuracy = Vec::with_capacity(k);
    for fold in &folds {
        let held = |s: &LabeledSlide| fold.binary_search(&s.patient_id).is_ok();
        let train: Vec<(RegionFeatureVector, NodeClass)> = samples
            .iter()
            .filter(|s| !held(s))
            .map(|s| (s.features, s.class))
            .collect();
        let model = train_forest(&train, params, seed)?;
        let (mut right, mut total) = (0usize, 0usize);
        for (i, s) in samples.iter().enumerate().filter(|(_, s)| held(s)) {
            let p = model.predict(&s.features)?.class;
            predicted[i] = Some(p);
            total += 1;
            right += (p == s.class) as usize;
        }
        fold_accuracy.push(right as f64 / total as f64);
    }
    let mean_accuracy = fold_accuracy.iter().sum::<f64>() / k as f64;
    Ok(CvResult {
        k,
        folds,
        fold_accuracy,
        mean_accuracy,
        predictions: samples
            .iter()
            .zip(predicted)
            .map(|(s, p)| (s.slide_id.clone(), p.expect("every patient is in a fold")))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn fv(vals: &[(usize, f64)]) -> RegionFeatureVector {
        let mut a = [0.0; FEATURE_COUNT];
        for &(i, v) in vals {
            a[i] = v;
        }
        RegionFeatureVector::from_array(a)
    }

    fn small() -> ForestParams {
        ForestParams {
            n_trees: 25,
            ..Default::default()
        }
    }

    /// Four classes separated along f4 with noise on the other features.
    fn separable(n: usize, seed: u64) -> Vec<(RegionFeatureVector, NodeClass)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = i % 4;
                let mut a = [0.0; FEATURE_COUNT];
                for v in a.iter_mut() {
                    *v = rng.random_range(0.0..1.0);
                }
                a[3] = c as f64 * 10.0 + rng.random_range(0.0..5.0);
                (RegionFeatureVector::from_array(a), NodeClass::ALL[c])
            })
            .collect()
    }

    #[test]
    fn pure_node_gini_is_zero() {
        assert_eq!(gini(&[5.0, 0.0, 0.0, 0.0]), 0.0);
        assert_eq!(gini(&[1.0, 1.0, 0.0, 0.0]), 0.5);
    }

    #[test]
    fn single_class_gives_constant_model() {
        let data = vec![(fv(&[(0, 1.0)]), NodeClass::Micro); 3];
        let m = train_forest(&data, &small(), 1).unwrap();
        let p = m.predict(&fv(&[(0, 7.0)])).unwrap();
        assert_eq!(p.class, NodeClass::Micro);
        assert_eq!(p.probabilities[2], 1.0);
        assert!(matches!(
            train_forest(&[], &small(), 1),
            Err(ForestError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn separable_data_is_learned_exactly() {
        let data = separable(80, 3);
        let m = train_forest(&data, &small(), 7).unwrap();
        for (f, c) in &data {
            assert_eq!(m.predict(f).unwrap().class, *c);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let data = separable(60, 4);
        let a = train_forest(&data, &small(), 11).unwrap().to_json();
        let b = train_forest(&data, &small(), 11).unwrap().to_json();
        assert_eq!(a, b);
        let c = train_forest(&data, &small(), 12).unwrap().to_json();
        assert_ne!(a, c);
    }

    #[test]
    fn hand_traced_tree() {
        // f4 <= 2.5 ? (f7 <= 0.5 ? Negative : Itc) : Macro
        let leaf = |c: usize| {
            let mut dist = vec![0.0; 4];
            dist[c] = 1.0;
            TreeNode::Leaf { dist }
        };
        let tree = DecisionTree {
            nodes: vec![
                TreeNode::Split {
                    feature: 3,
                    threshold: 2.5,
                    left: 1,
                    right: 4,
                },
                TreeNode::Split {
                    feature: 6,
                    threshold: 0.5,
                    left: 2,
                    right: 3,
                },
                leaf(0),
                leaf(1),
                leaf(3),
            ],
        };
        let m = ForestModel {
            version: MODEL_VERSION.into(),
            n_classes: 4,
            feature_count: FEATURE_COUNT,
            seed: 0,
            params: small(),
            trees: vec![tree],
        };
        assert_eq!(
            m.predict(&fv(&[(3, 2.5), (6, 0.7)])).unwrap().class,
            NodeClass::Itc
        );
        assert_eq!(
            m.predict(&fv(&[(3, 1.0), (6, 0.5)])).unwrap().class,
            NodeClass::Negative
        );
        assert_eq!(m.predict(&fv(&[(3, 2.6)])).unwrap().class, NodeClass::Macro);
        assert_eq!(m.trees[0].depth(), 2);
    }

    #[test]
    fn model_file_errors() {
        let m = train_forest(&separable(40, 1), &small(), 1).unwrap();
        let json = m.to_json();
        assert!(matches!(
            ForestModel::from_json(&json[..json.len() / 2]),
            Err(ForestError::CorruptModel(_))
        ));
        let old = json.replace(MODEL_VERSION, "pnstage-forest/0");
        assert!(matches!(
            ForestModel::from_json(&old),
            Err(ForestError::VersionMismatch { .. })
        ));
        let mut narrow = m.clone();
        narrow.feature_count = 9;
        assert!(matches!(
            narrow.predict(&fv(&[])),
            Err(ForestError::DimensionMismatch {
                expected: 9,
                actual: 11
            })
        ));
        assert_eq!(ForestModel::from_json(&json).unwrap(), m);
    }

    #[test]
    fn tree_order_does_not_matter() {
        let data = separable(40, 9);
        let m = train_forest(&data, &small(), 2).unwrap();
        let mut rev = m.clone();
        rev.trees.reverse();
        for (f, _) in &data {
            let (a, b) = (m.predict(f).unwrap(), rev.predict(f).unwrap());
            assert_eq!(a.class, b.class);
            for (x, y) in a.probabilities.iter().zip(b.probabilities) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicating_majority_does_not_lower_its_probability() {
        let base: Vec<_> = [(0.1, 0), (0.2, 0), (0.3, 1), (0.8, 1), (0.9, 1)]
            .iter()
            .map(|&(v, c)| (fv(&[(0, v)]), NodeClass::ALL[c]))
            .collect();
        let mut more = base.clone();
        more.extend(base.iter().filter(|s| s.1 == NodeClass::Itc).cloned());
        let p = ForestParams {
            n_trees: 200,
            features_per_split: 1,
            ..Default::default()
        };
        let probe = fv(&[(0, 0.85)]);
        let a = train_forest(&base, &p, 5)
            .unwrap()
            .predict(&probe)
            .unwrap()
            .probabilities[1];
        let b = train_forest(&more, &p, 5)
            .unwrap()
            .predict(&probe)
            .unwrap()
            .probabilities[1];
        assert!(b >= a, "{b} < {a}");
    }

    /// Every feature carries the class with a margin.
    fn separable_everywhere(n: usize, seed: u64) -> Vec<(RegionFeatureVector, NodeClass)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = (i / 5 + i) % 4;
                let mut a = [0.0; FEATURE_COUNT];
                for v in a.iter_mut() {
                    *v = c as f64 * 10.0 + rng.random_range(0.0..5.0);
                }
                (RegionFeatureVector::from_array(a), NodeClass::ALL[c])
            })
            .collect()
    }

    fn slides(n_patients: usize) -> Vec<LabeledSlide> {
        let data = separable_everywhere(n_patients * 5, 21);
        data.into_iter()
            .enumerate()
            .map(|(i, (features, class))| LabeledSlide {
                patient_id: format!("p{:02}", i / 5),
                slide_id: format!("p{:02}_n{}", i / 5, i % 5),
                features,
                class,
            })
            .collect()
    }

    #[test]
    fn cross_validation_on_separable_data() {
        let s = slides(20);
        let r = cross_validate(&s, 5, &small(), 3).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
        assert_eq!(r.folds.iter().map(Vec::len).sum::<usize>(), 20);
        assert_eq!(r, cross_validate(&s, 5, &small(), 3).unwrap());
        // leave one patient out
        let loo = patient_folds(&s, 20, 1).unwrap();
        assert!(loo.iter().all(|f| f.len() == 1));
        assert!(matches!(
            patient_folds(&s, 21, 1),
            Err(ForestError::TooFewPatients {
                k: 21,
                patients: 20
            })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn probabilities_are_normalized(v in proptest::collection::vec(-5.0f64..50.0, FEATURE_COUNT)) {
            let m = train_forest(&separable(40, 2), &small(), 4).unwrap();
            let p = m.predict_slice(&v).unwrap();
            prop_assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
