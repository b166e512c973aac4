//! Multiclass gradient-boosted trees with softmax output.

pub mod loss;
pub mod tree;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureLayout;
pub use loss::{ce_from_logits, ce_loss, grad_hess, softmax, softmax_in_place, PROB_EPS};
pub use tree::{Node, Tree};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("class {0} has no training rows")]
    DegenerateData(usize),
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("feature count mismatch: model expects {expected}, got {found}")]
    FeatureCountMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub n_iterations: usize,
    pub num_classes: usize,
    pub feature_subsample: f64,
    pub data_subsample: f64,
    pub data_resample_period: usize,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub lambda: f64,
    /// Histogram resolution used for split search.
    pub max_bins: usize,
    pub class_weights: Vec<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(num_classes: usize, n_iterations: usize) -> Self {
        TrainConfig {
            eta: 0.01,
            n_iterations,
            num_classes,
            feature_subsample: 0.8,
            data_subsample: 0.7,
            data_resample_period: 10,
            max_leaves: 31,
            min_samples_leaf: 20,
            lambda: 1.0,
            max_bins: 64,
            class_weights: vec![1.0; num_classes],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GbtError> {
        let bad = |m: &str| Err(GbtError::InvalidConfig(m.to_string()));
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must be in (0, 1]");
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0)
            || !(self.data_subsample > 0.0 && self.data_subsample <= 1.0)
        {
            return bad("subsample fractions must be in (0, 1]");
        }
        if self.num_classes < 2 {
            return bad("need at least two classes");
        }
        if self.class_weights.len() != self.num_classes
            || self.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0))
        {
            return bad("class_weights must hold one positive weight per class");
        }
        if self.data_resample_period == 0 {
            return bad("data_resample_period must be at least 1");
        }
        // nested JSON depth grows with leaf count
        if !(2..=100).contains(&self.max_leaves) {
            return bad("max_leaves must be in 2..=100");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad("max_bins must be in 2..=256");
        }
        Ok(())
    }
}

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub n_rows: usize,
    pub n_features: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl LabeledMatrix {
    pub fn new(n_features: usize) -> Self {
        LabeledMatrix {
            n_rows: 0,
            n_features,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<usize>) -> Result<Self, GbtError> {
        let n_features = rows.first().map_or(0, Vec::len);
        let mut m = LabeledMatrix::new(n_features);
        if rows.len() != y.len() {
            return Err(GbtError::InvalidConfig(format!(
                "{} rows but {} labels",
                rows.len(),
                y.len()
            )));
        }
        for (r, label) in rows.iter().zip(y) {
            m.push(r, label)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[f64], label: usize) -> Result<(), GbtError> {
        if row.len() != self.n_features {
            return Err(GbtError::FeatureCountMismatch {
                expected: self.n_features,
                found: row.len(),
            });
        }
        self.x.extend_from_slice(row);
        self.y.push(label);
        self.n_rows += 1;
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn check(&self, num_classes: usize) -> Result<(), GbtError> {
        if self.x.len() != self.n_rows * self.n_features || self.y.len() != self.n_rows {
            return Err(GbtError::InvalidConfig("matrix shape does not match labels".into()));
        }
        if let Some(&label) = self.y.iter().find(|&&l| l >= num_classes) {
            return Err(GbtError::LabelOutOfRange { label, num_classes });
        }
        if let Some(i) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(GbtError::NonFiniteFeature {
                row: i / self.n_features,
                col: i % self.n_features,
            });
        }
        Ok(())
    }
}

/// Descriptive metadata stored alongside the trees.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub task: String,
    pub variant: String,
    pub class_names: Vec<String>,
    pub epoch_len_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format_version: u32,
    pub num_classes: usize,
    pub feature_count: usize,
    pub base_score: Vec<f64>,
    /// `trees[iteration][class]`; leaf values already include the learning rate.
    pub trees: Vec<Vec<Tree>>,
    pub config: Option<TrainConfig>,
    pub layout: Option<FeatureLayout>,
    #[serde(default)]
    pub info: ModelInfo,
}

impl GbtModel {
    /// A model with no trees; predictions come from `base_score` alone.
    pub fn constant(base_score: Vec<f64>, feature_count: usize) -> Self {
        GbtModel {
            format_version: MODEL_FORMAT_VERSION,
            num_classes: base_score.len(),
            feature_count,
            base_score,
            trees: Vec::new(),
            config: None,
            layout: None,
            info: ModelInfo::default(),
        }
    }

    pub fn n_iterations(&self) -> usize {
        self.trees.len()
    }

    fn check_row(&self, x: &[f64]) -> Result<(), GbtError> {
        if x.len() != self.feature_count {
            return Err(GbtError::FeatureCountMismatch {
                expected: self.feature_count,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.base_score.clone();
        for round in &self.trees {
            for (k, tree) in round.iter().enumerate() {
                z[k] += tree.predict(x);
            }
        }
        z
    }

    pub fn predict_logits(&self, x: &[f64]) -> Result<Vec<f64>, GbtError> {
        self.check_row(x)?;
        Ok(self.logits_unchecked(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, GbtError> {
        let mut z = self.predict_logits(x)?;
        softmax_in_place(&mut z);
        Ok(z)
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<usize, GbtError> {
        Ok(argmax(&self.predict_logits(x)?))
    }

    /// Labels for every row of a row-major matrix, in parallel.
    pub fn predict_labels(&self, x: &[f64], n_features: usize) -> Result<Vec<usize>, GbtError> {
        if n_features != self.feature_count {
            return Err(GbtError::FeatureCountMismatch {
                expected: self.feature_count,
                found: n_features,
            });
        }
        if n_features == 0 {
            return Ok(Vec::new());
        }
        Ok(x.par_chunks(n_features)
            .map(|row| argmax(&self.logits_unchecked(row)))
            .collect())
    }

    pub fn validate(&self) -> Result<(), GbtError> {
        let bad = |m: String| Err(GbtError::InvalidModel(m));
        if self.format_version != MODEL_FORMAT_VERSION {
            return bad(format!("unsupported format version {}", self.format_version));
        }
        if self.num_classes < 2 || self.base_score.len() != self.num_classes {
            return bad("base_score must hold one value per class".into());
        }
        if self.base_score.iter().any(|v| !v.is_finite()) {
            return bad("non-finite base score".into());
        }
        for (i, round) in self.trees.iter().enumerate() {
            if round.len() != self.num_classes {
                return bad(format!("iteration {i} has {} trees", round.len()));
            }
            for t in round {
                if t.nodes.is_empty() || !t.all_finite() {
                    return bad(format!("iteration {i} has an invalid tree"));
                }
                if t.max_feature().is_some_and(|f| f >= self.feature_count) {
                    return bad(format!("iteration {i} references a missing feature"));
                }
            }
        }
        if let Some(layout) = &self.layout {
            if layout.len() != self.feature_count {
                return bad("layout length differs from feature_count".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, GbtError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, GbtError> {
        let m: GbtModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fits a model and discards the loss trace.
pub fn fit(data: &LabeledMatrix, cfg: &TrainConfig) -> Result<GbtModel, GbtError> {
    fit_with_trace(data, cfg).map(|(m, _)| m)
}

/// Fits a model; the trace holds the summed training cross-entropy before
/// the first iteration and after each one (`n_iterations + 1` values).
pub fn fit_with_trace(
    data: &LabeledMatrix,
    cfg: &TrainConfig,
) -> Result<(GbtModel, Vec<f64>), GbtError> {
    cfg.validate()?;
    data.check(cfg.num_classes)?;
    let k_classes = cfg.num_classes;
    let n = data.n_rows;

    let mut counts = vec![0usize; k_classes];
    for &y in &data.y {
        counts[y] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(GbtError::DegenerateData(k));
    }
    let base_score: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();

    let binned = tree::BinnedMatrix::build(&data.x, n, data.n_features, cfg.max_bins);
    let params = tree::GrowParams {
        max_leaves: cfg.max_leaves,
        min_samples_leaf: cfg.min_samples_leaf,
        lambda: cfg.lambda,
    };
    let weights: Vec<f64> = data.y.iter().map(|&y| cfg.class_weights[y]).collect();
    let n_feat_pick = ((cfg.feature_subsample * data.n_features as f64).round() as usize)
        .clamp(1, data.n_features.max(1));
    let n_row_pick = ((cfg.data_subsample * n as f64).round() as usize).clamp(1, n);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logits: Vec<f64> = (0..n).flat_map(|_| base_score.iter().copied()).collect();
    let mut probs = vec![0.0; n * k_classes];
    let mut trace = Vec::with_capacity(cfg.n_iterations + 1);
    let mut trees: Vec<Vec<Tree>> = Vec::with_capacity(cfg.n_iterations);
    let mut rows: Vec<u32> = Vec::new();
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    let refresh = |logits: &[f64], probs: &mut [f64]| {
        probs.copy_from_slice(logits);
        probs.par_chunks_mut(k_classes).for_each(softmax_in_place);
    };
    refresh(&logits, &mut probs);
    trace.push(ce_loss(&probs, &data.y, k_classes));

    for it in 0..cfg.n_iterations {
        if it % cfg.data_resample_period == 0 {
            rows = if n_row_pick == n {
                (0..n as u32).collect()
            } else {
                let mut r: Vec<u32> = index::sample(&mut rng, n, n_row_pick)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                r.sort_unstable();
                r
            };
        }
        let mut round = Vec::with_capacity(k_classes);
        for k in 0..k_classes {
            let mut features: Vec<usize> = if n_feat_pick == data.n_features {
                (0..data.n_features).collect()
            } else {
                index::sample(&mut rng, data.n_features, n_feat_pick).into_vec()
            };
            features.sort_unstable();
            for i in 0..n {
                let p = probs[i * k_classes + k];
                let y = if data.y[i] == k { 1.0 } else { 0.0 };
                grad[i] = weights[i] * (p - y);
                hess[i] = weights[i] * p * (1.0 - p);
            }
            let mut t = tree::grow_tree(&binned, rows.clone(), &grad, &hess, &features, &params);
            t.scale_leaves(cfg.eta);
            round.push(t);
        }
        logits
            .par_chunks_mut(k_classes)
            .enumerate()
            .for_each(|(i, z)| {
                let x = data.row(i);
                for (k, t) in round.iter().enumerate() {
                    z[k] += t.predict(x);
                }
            });
        trees.push(round);
        refresh(&logits, &mut probs);
        let l = ce_loss(&probs, &data.y, k_classes);
        log::debug!("iteration {}: loss {l}", it + 1);
        trace.push(l);
    }

    let model = GbtModel {
        format_version: MODEL_FORMAT_VERSION,
        num_classes: k_classes,
        feature_count: data.n_features,
        base_score,
        trees,
        config: Some(cfg.clone()),
        layout: None,
        info: ModelInfo::default(),
    };
    Ok((model, trace))
}
