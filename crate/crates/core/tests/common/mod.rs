#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use citetrend::autodiff::Tape;
use citetrend::experiments::{Dataset, TrainConfig};
use citetrend::features::{FeatureConfig, FeatureSet};
use citetrend::graph::CitationGraph;
use citetrend::io::{generate_synthetic, SyntheticConfig, VocabularyModel};
use citetrend::models::{build_neighborhoods, Binder, Mode, ModelConfig, ModelInputs, TrendPredictor};
use citetrend::sparse::CsrMatrix;

/// Narrow layers so tests run in milliseconds.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        text_units: 4,
        affiliation_units: 3,
        year_units: 2,
        layer1_units: None,
        layer2_units: 5,
        dropout: 0.1,
        leaky_slope: 0.01,
    }
}

pub fn tiny_vocabulary() -> VocabularyModel {
    VocabularyModel {
        topics: 3,
        words_per_topic: 6,
        background_words: 8,
        doc_length: 8,
        topic_share: 0.6,
        hot_share: 0.5,
    }
}

/// Synthetic graph with `n` documents spread over `years` years ending in
/// 2015.
pub fn synthetic_graph(n: usize, years: i32, seed: u64) -> CitationGraph {
    let cfg = SyntheticConfig {
        n_nodes: n,
        start_year: 2016 - years,
        end_year: 2015,
        affiliations: 6,
        vocabulary: tiny_vocabulary(),
        seed,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg).unwrap().to_graph().unwrap()
}

pub fn dataset(graph: &CitationGraph, cfg: &TrainConfig) -> Dataset {
    let year = graph.year_range().unwrap().1;
    Dataset::prepare(graph, year, cfg, FeatureConfig::default()).unwrap()
}

/// Weighted BCE over every row, with a fresh dropout stream per call so
/// repeated evaluations see the same masks.
pub fn loss_of(model: &dyn TrendPredictor, inputs: &ModelInputs, labels: &[f64], pos_weight: f64, mode: Mode) -> f64 {
    let tape = Tape::new();
    let mut b = Binder::new(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = model.forward(&mut b, inputs, mode, &mut rng).unwrap();
    logits.bce_with_logits(labels, pos_weight).unwrap().scalar()
}

pub fn analytic_grads(
    model: &dyn TrendPredictor,
    inputs: &ModelInputs,
    labels: &[f64],
    pos_weight: f64,
    mode: Mode,
) -> Vec<Vec<f64>> {
    let tape = Tape::new();
    let mut b = Binder::new(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = model.forward(&mut b, inputs, mode, &mut rng).unwrap();
    let loss = logits.bce_with_logits(labels, pos_weight).unwrap();
    let grads = tape.backward(loss).unwrap();
    let params = model.parameters();
    b.vars()
        .iter()
        .zip(&params)
        .map(|(v, p)| grads.get(*v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
        .collect()
}

/// Largest norm-wise relative error between analytic and central-difference
/// gradients over all parameter tensors, plus the number of entries checked.
pub fn gradient_error(
    model: &mut dyn TrendPredictor,
    inputs: &ModelInputs,
    labels: &[f64],
    pos_weight: f64,
    mode: Mode,
) -> (f64, usize) {
    gradient_error_sampled(model, inputs, labels, pos_weight, mode, usize::MAX)
}

/// As [`gradient_error`], but checks at most `per_tensor` randomly chosen
/// entries of each parameter tensor.
pub fn gradient_error_sampled(
    model: &mut dyn TrendPredictor,
    inputs: &ModelInputs,
    labels: &[f64],
    pos_weight: f64,
    mode: Mode,
    per_tensor: usize,
) -> (f64, usize) {
    let analytic = analytic_grads(model, inputs, labels, pos_weight, mode);
    let mut pick = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, a) in analytic.iter().enumerate() {
        let entries: Vec<usize> = if a.len() <= per_tensor {
            (0..a.len()).collect()
        } else {
            rand::seq::index::sample(&mut pick, a.len(), per_tensor).into_vec()
        };
        let mut exact = Vec::with_capacity(entries.len());
        let mut numeric = Vec::with_capacity(entries.len());
        for &i in &entries {
            let orig = model.parameters()[k].data()[i];
            model.parameters_mut()[k].data_mut()[i] = orig + h;
            let up = loss_of(model, inputs, labels, pos_weight, mode);
            model.parameters_mut()[k].data_mut()[i] = orig - h;
            let down = loss_of(model, inputs, labels, pos_weight, mode);
            model.parameters_mut()[k].data_mut()[i] = orig;
            exact.push(a[i]);
            numeric.push((up - down) / (2.0 * h));
            checked += 1;
        }
        let diff: f64 = exact.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = norm(&exact).max(norm(&numeric));
        if scale > 1e-10 {
            worst = worst.max(diff / scale);
        }
    }
    (worst, checked)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn random_labels(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.3)))).collect()
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn scramble_rows(m: &CsrMatrix, rows: &HashSet<usize>, rng: &mut impl Rng) -> CsrMatrix {
    let mut out = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        if rows.contains(&r) {
            let mut row = Vec::new();
            for c in 0..m.cols() {
                if rng.gen_bool(0.4) {
                    row.push((c, rng.gen_range(-2.0..2.0)));
                }
            }
            out.push(row);
        } else {
            out.push(m.row(r).collect());
        }
    }
    CsrMatrix::from_rows(m.cols(), out)
}

/// Same features with every target row replaced by noise.
pub fn scramble_targets(data: &Dataset, rng: &mut impl Rng) -> FeatureSet {
    let rows: HashSet<usize> = data.eval_rows.iter().copied().collect();
    let f = &data.features;
    let mut year = f.year.clone();
    for &r in &rows {
        for c in 0..year.cols {
            year.data[r * year.cols + c] = rng.gen_range(-5.0..5.0);
        }
    }
    FeatureSet::from_blocks(
        f.nodes.clone(),
        scramble_rows(&f.text, &rows, rng),
        scramble_rows(&f.affiliations, &rows, rng),
        year,
    )
}

/// Inputs with scrambled target features and a reshuffled set of target
/// citations. Prior rows and prior edges are left as they were.
pub fn perturb_targets(data: &Dataset, rng: &mut impl Rng) -> ModelInputs {
    let n_prior = data.split.prior_nodes.len();
    let features = scramble_targets(data, rng);
    let mut split = data.split.clone();
    split.target_edges.retain(|_| rng.gen_bool(0.5));
    for &t in &split.target_nodes.clone() {
        for _ in 0..rng.gen_range(0..4) {
            split.target_edges.push((t, split.prior_nodes[rng.gen_range(0..n_prior)]));
        }
    }
    split.target_edges.sort_unstable();
    split.target_edges.dedup();
    let nb = build_neighborhoods(&split, &features).unwrap();
    ModelInputs::new(&features, nb)
}
