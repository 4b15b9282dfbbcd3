//! Training, evaluation and the comparison / ablation harness.

mod ablation;
mod metrics;
mod report;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureSet, FeatureWidths};
use crate::graph::{CitationGraph, TrendLabels, YearSplit};
use crate::models::{build_neighborhoods, ModelConfig, ModelInputs};

pub use ablation::{ablate_edges, AblationCurve, AblationPoint};
pub use metrics::{evaluate, lambda_from_counts, lambda_predictivity, Confusion, EvalReport};
pub use report::{format_fixed, write_ablation_csv, write_eval_csv, ABLATION_HEADER, EVAL_HEADER};
pub use train::{compare_models, fit, predict_targets_cached, run_model, train, EvalRow, TrainOutcome};

/// How positive examples are up-weighted in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosWeight {
    /// negatives / positives over the training rows, 1 when either is absent.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub percentile: f64,
    pub window_years: i32,
    pub seed: u64,
    pub pos_weight: PosWeight,
    /// Keep the latest prior year out of the loss and report on it instead.
    pub holdout_latest_prior_year: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            dropout: 0.1,
            leaky_slope: 0.01,
            percentile: 0.9,
            window_years: 10,
            seed: 0,
            pos_weight: PosWeight::Auto,
            holdout_latest_prior_year: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return bad("percentile must lie in (0, 1)");
        }
        if self.window_years < 1 {
            return bad("window must be at least one year");
        }
        if let PosWeight::Fixed(w) = self.pos_weight {
            if !(w > 0.0) {
                return bad("positive weight must be positive");
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
            ..ModelConfig::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// A split with everything derived from it: features, labels, model inputs
/// and the row sets used for training and evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: YearSplit,
    pub features: FeatureSet,
    pub labels: TrendLabels,
    pub inputs: ModelInputs,
    pub train_rows: Vec<usize>,
    pub train_labels: Vec<bool>,
    pub validation_rows: Vec<usize>,
    pub validation_labels: Vec<bool>,
    /// Target rows.
    pub eval_rows: Vec<usize>,
    pub eval_labels: Vec<bool>,
}

impl Dataset {
    pub fn prepare(
        graph: &CitationGraph,
        target_year: i32,
        cfg: &TrainConfig,
        features: FeatureConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let split = graph.split_by_year(target_year, cfg.window_years)?;
        let (features, _, _) = FeatureSet::build(graph, &split, features)?;
        let labels = graph.label_by_percentile(&split.all_nodes(), cfg.percentile);
        Self::assemble(graph, split, features, labels, cfg.holdout_latest_prior_year)
    }

    /// Builds row sets for already computed features and labels.
    pub fn assemble(
        graph: &CitationGraph,
        split: YearSplit,
        features: FeatureSet,
        labels: TrendLabels,
        holdout: bool,
    ) -> Result<Self> {
        let neighborhoods = build_neighborhoods(&split, &features)?;
        let inputs = ModelInputs::new(&features, neighborhoods);
        let latest_prior = split.prior_nodes.iter().map(|&n| graph.node(n).year).max();
        let row = |n: &usize| features.row_of(*n).expect("split node has a feature row");

        let (mut train_rows, mut validation_rows) = (Vec::new(), Vec::new());
        for n in &split.prior_nodes {
            if holdout && Some(graph.node(*n).year) == latest_prior {
                validation_rows.push(row(n));
            } else {
                train_rows.push(row(n));
            }
        }
        // A single prior year would leave nothing to train on.
        if train_rows.is_empty() {
            train_rows = std::mem::take(&mut validation_rows);
        }
        let eval_rows: Vec<usize> = split.target_nodes.iter().map(row).collect();
        let labels_of = |rows: &[usize]| labels.for_nodes(&rows.iter().map(|&r| features.nodes[r]).collect::<Vec<_>>());
        Ok(Self {
            train_labels: labels_of(&train_rows),
            validation_labels: labels_of(&validation_rows),
            eval_labels: labels_of(&eval_rows),
            split,
            labels,
            inputs,
            train_rows,
            validation_rows,
            eval_rows,
            features,
        })
    }

    pub fn widths(&self) -> FeatureWidths {
        self.features.widths()
    }

    pub fn lambda(&self) -> f64 {
        lambda_predictivity(&self.split)
    }

    /// Same dataset over a split with fewer edges.
    pub fn with_split(&self, split: YearSplit) -> Result<Self> {
        let neighborhoods = build_neighborhoods(&split, &self.features)?;
        Ok(Self {
            inputs: self.inputs.with_neighborhoods(neighborhoods),
            split,
            ..self.clone()
        })
    }
}
