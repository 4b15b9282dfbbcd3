use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::error::{Error, Result};
use crate::models::{Binder, Mode, ModelInputs, ModelRegistry, TrendModel, TrendPredictor};

use super::{evaluate, Dataset, EvalReport, PosWeight, TrainConfig};

/// Dropout draws come from their own stream so that changing the model size
/// does not shift the masks of an otherwise identical run.
const DROPOUT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Training loss before each update.
    pub loss_trace: Vec<f64>,
    /// Score on the held-out prior year, if there was one.
    pub validation: Option<EvalReport>,
}

fn pos_weight(mode: PosWeight, labels: &[bool]) -> f64 {
    match mode {
        PosWeight::Fixed(w) => w,
        PosWeight::Auto => {
            let pos = labels.iter().filter(|&&l| l).count();
            let neg = labels.len() - pos;
            if pos == 0 || neg == 0 {
                1.0
            } else {
                neg as f64 / pos as f64
            }
        }
    }
}

/// Full-batch training on `rows` of `inputs`. Returns the per-epoch loss.
pub fn fit(
    model: &mut dyn TrendPredictor,
    inputs: &ModelInputs,
    rows: &[usize],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    assert_eq!(rows.len(), labels.len(), "one label per training row");
    let weight = pos_weight(cfg.pos_weight, labels);
    let targets: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let rows = Rc::new(rows.to_vec());
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(DROPOUT_STREAM);

    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let tape = Tape::new();
        let mut binder = Binder::new(&tape);
        let logits = model.forward(&mut binder, inputs, Mode::Train, &mut rng)?;
        let loss = logits
            .gather_rows(Rc::clone(&rows))?
            .bce_with_logits(&targets, weight)?;
        let value = loss.scalar();
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, loss: value });
        }
        trace.push(value);
        let grads = tape.backward(loss)?;
        let vars = binder.vars().to_vec();
        let mut params = model.parameters_mut();
        for (p, v) in params.iter_mut().zip(&vars) {
            if let Some(g) = grads.get(*v) {
                p.accumulate_grad(g);
            }
        }
        adam.step(&mut params);
    }
    Ok(trace)
}

/// Trains on the dataset's training rows and scores the validation rows.
pub fn train(model: &mut dyn TrendPredictor, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let loss_trace = fit(model, &data.inputs, &data.train_rows, &data.train_labels, cfg)?;
    let validation = if data.validation_rows.is_empty() {
        None
    } else {
        let logits = model.predict(&data.inputs)?;
        Some(evaluate(&logits, &data.validation_labels, &data.validation_rows)?)
    };
    Ok(TrainOutcome { loss_trace, validation })
}

/// Target logits computed in two stages: the prior block once, then only
/// the target rows on top of the cached prior results. Logits follow the
/// dataset's target order.
pub fn predict_targets_cached(model: &TrendModel, data: &Dataset) -> Result<Vec<f64>> {
    let n_prior = data.split.prior_nodes.len();
    let prior_rows: Vec<usize> = (0..n_prior).collect();
    let prior = data.features.select(&prior_rows);
    let cache = model.prior_stage(&prior, &data.inputs.neighborhoods.truncate(n_prior))?;
    let targets = data.features.select(&data.eval_rows);
    Ok(model.predict_targets(&cache, &targets, &data.split.target_edges)?)
}

/// One line of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub seed: u64,
    pub params: usize,
    pub report: EvalReport,
}

/// Builds `name` from `cfg.seed`, trains it and scores the target rows.
pub fn run_model(
    registry: &ModelRegistry,
    name: &str,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Box<dyn TrendPredictor>, EvalRow)> {
    let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = registry.create(name, &cfg.model_config(), data.widths(), &mut init)?;
    let outcome = train(model.as_mut(), data, cfg)?;
    let logits = model.predict(&data.inputs)?;
    let mut report = evaluate(&logits, &data.eval_labels, &data.eval_rows)?;
    report.lambda = data.lambda();
    report.loss_trace = outcome.loss_trace;
    let row = EvalRow {
        model: name.to_owned(),
        seed: cfg.seed,
        params: model.count_parameters(),
        report,
    };
    Ok((model, row))
}

/// Every named model trained with the same seed, features and budget.
pub fn compare_models(
    registry: &ModelRegistry,
    names: &[&str],
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EvalRow>> {
    names
        .iter()
        .map(|name| run_model(registry, name, data, cfg).map(|(_, row)| row))
        .collect()
}
