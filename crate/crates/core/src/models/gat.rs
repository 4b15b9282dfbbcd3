//! Causality-masked graph attention model.
//!
//! Each layer projects node features with a shared kernel `W`, scores every
//! (node, neighbor) pair with a single dense unit over `[W f_i, W f_j]`,
//! normalizes the scores over the neighborhood with a softmax and sums the
//! weighted neighbor projections. Because prior nodes only ever cite prior
//! nodes, everything computed for the prior block is independent of the
//! target block and can be cached once.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, RngCore};

use crate::autodiff::{Reduction, Tape, Tensor, Var};
use crate::features::{FeatureSet, FeatureWidths};

use super::layers::{activate, EmbeddingStacks, Linear};
use super::{Binder, Mode, ModelConfig, ModelError, ModelInputs, Neighborhoods, TrendPredictor};

/// One attention layer.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub kernel: Linear,
    /// `2 * out x 1`: the first half scores the node, the second its neighbor.
    pub scorer: Tensor,
    pub scorer_bias: Tensor,
}

struct BoundGat<'t> {
    weight: Var<'t>,
    bias: Var<'t>,
    score_self: Var<'t>,
    score_neighbor: Var<'t>,
    score_bias: Var<'t>,
}

/// Projected rows of a layer: `W f`, and the node / neighbor halves of the
/// attention score.
struct Projection<'t> {
    projected: Var<'t>,
    self_scores: Var<'t>,
    neighbor_scores: Var<'t>,
}

impl GatLayer {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            kernel: Linear::new(input, output, rng),
            scorer: Tensor::glorot(2 * output, 1, rng),
            scorer_bias: Tensor::zeros(vec![1, 1]).trainable(),
        }
    }

    pub fn output_width(&self) -> usize {
        self.kernel.output_width()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.kernel.weight, &self.kernel.bias, &self.scorer, &self.scorer_bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.kernel.weight,
            &mut self.kernel.bias,
            &mut self.scorer,
            &mut self.scorer_bias,
        ]
    }

    fn bind<'t>(&self, b: &mut Binder<'t>) -> Result<BoundGat<'t>, ModelError> {
        let out = self.output_width();
        let weight = b.bind(&self.kernel.weight);
        let bias = b.bind(&self.kernel.bias);
        let scorer = b.bind(&self.scorer);
        let score_bias = b.bind(&self.scorer_bias);
        Ok(BoundGat {
            weight,
            bias,
            score_self: scorer.gather_rows(Rc::new((0..out).collect()))?,
            score_neighbor: scorer.gather_rows(Rc::new((out..2 * out).collect()))?,
            score_bias,
        })
    }
}

impl<'t> BoundGat<'t> {
    fn project(&self, x: Var<'t>) -> Result<Projection<'t>, ModelError> {
        let projected = x.matmul(self.weight)?;
        Ok(Projection {
            projected,
            self_scores: projected.matmul(self.score_self)?,
            neighbor_scores: projected.matmul(self.score_neighbor)?,
        })
    }

    /// Aggregates the segments of `nb` over the rows of `proj`. Returns the
    /// pre-activation output (one row per segment) and the attention weights
    /// (one per neighborhood entry).
    fn aggregate(
        &self,
        proj: &Projection<'t>,
        nb: &Neighborhoods,
        slope: f64,
    ) -> Result<(Var<'t>, Var<'t>), ModelError> {
        let scores = proj
            .self_scores
            .gather_rows(Rc::clone(&nb.owners))?
            .add(proj.neighbor_scores.gather_rows(Rc::clone(&nb.members))?)?
            .add_row(self.score_bias)?
            .leaky_relu(slope);
        let alpha = scores.segment_softmax(Rc::clone(&nb.offsets))?;
        let messages = proj
            .projected
            .gather_rows(Rc::clone(&nb.members))?
            .scale_rows(alpha)?;
        let out = messages
            .scatter_reduce(Rc::clone(&nb.groups), nb.segments(), Reduction::Sum)?
            .add_row(self.bias)?;
        Ok((out, alpha))
    }
}

/// Embedding stacks, two attention layers and a one-logit head.
#[derive(Debug)]
pub struct TrendModel {
    pub config: ModelConfig,
    pub stacks: EmbeddingStacks,
    pub layer1: GatLayer,
    pub layer2: GatLayer,
    pub head: Linear,
    layer1_rows: AtomicUsize,
}

impl Clone for TrendModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            stacks: self.stacks.clone(),
            layer1: self.layer1.clone(),
            layer2: self.layer2.clone(),
            head: self.head.clone(),
            layer1_rows: AtomicUsize::new(self.layer1_rows()),
        }
    }
}

/// Eval-mode activations of a full forward pass, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub layer1: Vec<f64>,
    pub layer2: Vec<f64>,
    pub logits: Vec<f64>,
    /// Attention weights of both layers, one per neighborhood entry.
    pub attention: [Vec<f64>; 2],
}

struct LayerOutputs<'t> {
    hidden1: Var<'t>,
    hidden2: Var<'t>,
    logits: Var<'t>,
    alpha1: Var<'t>,
    alpha2: Var<'t>,
}

/// Prior-stage results for the prior block, in the prior row order the cache
/// was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCache {
    pub nodes: Vec<usize>,
    pub widths: FeatureWidths,
    pub layer1_projected: Vec<f64>,
    pub layer1_neighbor_scores: Vec<f64>,
    /// Post-activation output of the first layer.
    pub layer1_activations: Vec<f64>,
    pub layer2_projected: Vec<f64>,
    pub layer2_neighbor_scores: Vec<f64>,
    rows: HashMap<usize, usize>,
}

impl PriorCache {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.rows.get(&node).copied()
    }
}

impl TrendModel {
    pub const NAME: &'static str = "gnn";

    pub fn new<R: Rng + ?Sized>(config: ModelConfig, widths: FeatureWidths, rng: &mut R) -> Self {
        let stacks = EmbeddingStacks::new(&config, widths, rng);
        let h1 = config.layer1_width();
        let layer1 = GatLayer::new(stacks.output_width(), h1, rng);
        let layer2 = GatLayer::new(h1, config.layer2_units, rng);
        let head = Linear::new(config.layer2_units, 1, rng);
        Self {
            config,
            stacks,
            layer1,
            layer2,
            head,
            layer1_rows: AtomicUsize::new(0),
        }
    }

    /// Rows pushed through the first layer's kernel since construction.
    pub fn layer1_rows(&self) -> usize {
        self.layer1_rows.load(Ordering::Relaxed)
    }

    fn forward_layers<'t>(
        &self,
        b: &mut Binder<'t>,
        inputs: &ModelInputs,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<LayerOutputs<'t>, ModelError> {
        let cfg = &self.config;
        let nb = &inputs.neighborhoods;
        let x = self.stacks.forward(b, inputs, cfg, mode, rng)?;

        let l1 = self.layer1.bind(b)?;
        let p1 = l1.project(x)?;
        self.layer1_rows.fetch_add(inputs.rows(), Ordering::Relaxed);
        let (agg1, alpha1) = l1.aggregate(&p1, nb, cfg.leaky_slope)?;
        let hidden1 = activate(agg1, cfg, mode, rng);

        let l2 = self.layer2.bind(b)?;
        let p2 = l2.project(hidden1)?;
        let (agg2, alpha2) = l2.aggregate(&p2, nb, cfg.leaky_slope)?;
        let hidden2 = activate(agg2, cfg, mode, rng);

        let logits = self.head.forward(b, hidden2)?;
        Ok(LayerOutputs {
            hidden1,
            hidden2,
            logits,
            alpha1,
            alpha2,
        })
    }

    /// Full eval-mode pass keeping every intermediate.
    pub fn activations(&self, inputs: &ModelInputs) -> Result<Activations, ModelError> {
        let tape = Tape::new();
        let mut b = Binder::new(&tape);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = self.forward_layers(&mut b, inputs, Mode::Eval, &mut rng)?;
        Ok(Activations {
            layer1: out.hidden1.to_vec(),
            layer2: out.hidden2.to_vec(),
            logits: out.logits.to_vec(),
            attention: [out.alpha1.to_vec(), out.alpha2.to_vec()],
        })
    }

    /// Runs the prior block once in eval mode and keeps what target
    /// prediction needs. `features` must hold exactly the prior rows and
    /// `neighborhoods` may only reference them.
    pub fn prior_stage(&self, features: &FeatureSet, neighborhoods: &Neighborhoods) -> Result<PriorCache, ModelError> {
        let inputs = ModelInputs::new(features, neighborhoods.clone());
        let cfg = &self.config;
        let tape = Tape::new();
        let mut b = Binder::new(&tape);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);

        let x = self.stacks.forward(&mut b, &inputs, cfg, Mode::Eval, &mut rng)?;
        let l1 = self.layer1.bind(&mut b)?;
        let p1 = l1.project(x)?;
        self.layer1_rows.fetch_add(inputs.rows(), Ordering::Relaxed);
        let (agg1, _) = l1.aggregate(&p1, neighborhoods, cfg.leaky_slope)?;
        let hidden1 = activate(agg1, cfg, Mode::Eval, &mut rng);
        let l2 = self.layer2.bind(&mut b)?;
        let p2 = l2.project(hidden1)?;

        Ok(PriorCache {
            nodes: features.nodes.clone(),
            widths: features.widths(),
            layer1_projected: p1.projected.to_vec(),
            layer1_neighbor_scores: p1.neighbor_scores.to_vec(),
            layer1_activations: hidden1.to_vec(),
            layer2_projected: p2.projected.to_vec(),
            layer2_neighbor_scores: p2.neighbor_scores.to_vec(),
            rows: features.row_index.clone(),
        })
    }

    /// Logits for new nodes from a populated prior cache. `target_edges` are
    /// `(citing target, cited prior)` node pairs; their order within each
    /// target fixes the neighborhood order.
    pub fn predict_targets(
        &self,
        cache: &PriorCache,
        targets: &FeatureSet,
        target_edges: &[(usize, usize)],
    ) -> Result<Vec<f64>, ModelError> {
        if targets.widths() != cache.widths {
            return Err(ModelError::CacheShapeMismatch {
                expected: cache.widths,
                found: targets.widths(),
            });
        }
        let n_prior = cache.len();
        let mut lists = vec![Vec::new(); targets.len()];
        for &(t, cited) in target_edges {
            let local = targets
                .row_of(t)
                .ok_or(ModelError::CausalityViolation { citing: t, cited })?;
            let row = cache
                .row_of(cited)
                .ok_or(ModelError::UnknownCitedNode { target: t, cited })?;
            lists[local].push(row);
        }
        let owners: Vec<usize> = (0..targets.len()).map(|t| n_prior + t).collect();
        let nb = Neighborhoods::from_lists(&owners, &lists);
        let inputs = ModelInputs::new(targets, Neighborhoods::self_only(targets.len()));

        let cfg = &self.config;
        let tape = Tape::new();
        let mut b = Binder::new(&tape);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let x = self.stacks.forward(&mut b, &inputs, cfg, Mode::Eval, &mut rng)?;

        let h1 = self.layer1.output_width();
        let l1 = self.layer1.bind(&mut b)?;
        let p1t = l1.project(x)?;
        self.layer1_rows.fetch_add(targets.len(), Ordering::Relaxed);
        let p1 = with_prior(&tape, &p1t, n_prior, h1, &cache.layer1_projected, &cache.layer1_neighbor_scores)?;
        let (agg1, _) = l1.aggregate(&p1, &nb, cfg.leaky_slope)?;
        let hidden1 = activate(agg1, cfg, Mode::Eval, &mut rng);

        let h2 = self.layer2.output_width();
        let l2 = self.layer2.bind(&mut b)?;
        let p2t = l2.project(hidden1)?;
        let p2 = with_prior(&tape, &p2t, n_prior, h2, &cache.layer2_projected, &cache.layer2_neighbor_scores)?;
        let (agg2, _) = l2.aggregate(&p2, &nb, cfg.leaky_slope)?;
        let hidden2 = activate(agg2, cfg, Mode::Eval, &mut rng);
        Ok(self.head.forward(&mut b, hidden2)?.to_vec())
    }
}

/// Stacks cached prior rows on top of freshly computed target rows. Prior
/// self scores are never read (prior nodes own no segment here), so zeros
/// stand in for them.
fn with_prior<'t>(
    tape: &'t Tape,
    targets: &Projection<'t>,
    n_prior: usize,
    width: usize,
    projected: &[f64],
    neighbor_scores: &[f64],
) -> Result<Projection<'t>, ModelError> {
    let stack = |cached: Var<'t>, fresh: Var<'t>| Var::vstack(&[cached, fresh]);
    Ok(Projection {
        projected: stack(tape.constant(n_prior, width, projected.to_vec()), targets.projected)?,
        self_scores: stack(tape.constant(n_prior, 1, vec![0.0; n_prior]), targets.self_scores)?,
        neighbor_scores: stack(tape.constant(n_prior, 1, neighbor_scores.to_vec()), targets.neighbor_scores)?,
    })
}

impl TrendPredictor for TrendModel {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn forward<'t>(
        &self,
        binder: &mut Binder<'t>,
        inputs: &ModelInputs,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var<'t>, ModelError> {
        Ok(self.forward_layers(binder, inputs, mode, rng)?.logits)
    }

    fn parameters(&self) -> Vec<&Tensor> {
        let mut out = self.stacks.params();
        out.extend(self.layer1.params());
        out.extend(self.layer2.params());
        out.extend(self.head.params());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let Self {
            stacks,
            layer1,
            layer2,
            head,
            ..
        } = self;
        let mut out = stacks.params_mut();
        out.extend(layer1.params_mut());
        out.extend(layer2.params_mut());
        out.extend(head.params_mut());
        out
    }

    fn as_trend_model(&self) -> Option<&TrendModel> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DenseMatrix;
    use crate::sparse::CsrMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            text_units: 3,
            affiliation_units: 2,
            year_units: 2,
            layer1_units: None,
            layer2_units: 4,
            dropout: 0.1,
            leaky_slope: 0.01,
        }
    }

    /// Rows 0..3 are prior, 3..5 target.
    fn toy() -> (FeatureSet, Neighborhoods) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 5;
        let dense = |cols: usize, rng: &mut ChaCha8Rng| {
            let data: Vec<f64> = (0..n * cols).map(|_| rng.gen_range(0.0..1.0)).collect();
            CsrMatrix::from_dense(n, cols, &data)
        };
        let text = dense(6, &mut rng);
        let affs = dense(3, &mut rng);
        let year = DenseMatrix {
            rows: n,
            cols: 2,
            data: (0..2 * n).map(|i| i as f64 / 10.0).collect(),
        };
        let fs = FeatureSet::from_blocks((10..15).collect(), text, affs, year);
        let nb = Neighborhoods::from_lists(&[0, 1, 2, 3, 4], &[vec![], vec![0], vec![0, 1], vec![2, 0], vec![]]);
        (fs, nb)
    }

    #[test]
    fn attention_sums_to_one_per_neighborhood() {
        let (fs, nb) = toy();
        let model = TrendModel::new(small_config(), fs.widths(), &mut ChaCha8Rng::seed_from_u64(2));
        let acts = model.activations(&ModelInputs::new(&fs, nb.clone())).unwrap();
        for alpha in &acts.attention {
            assert_eq!(alpha.len(), nb.entries());
            for g in 0..nb.segments() {
                let s: f64 = alpha[nb.offsets[g]..nb.offsets[g + 1]].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        // A lone node attends only to itself.
        assert_eq!(acts.attention[0][0], 1.0);
    }

    #[test]
    fn cached_targets_match_full_pass() {
        let (fs, nb) = toy();
        let model = TrendModel::new(small_config(), fs.widths(), &mut ChaCha8Rng::seed_from_u64(3));
        let full = model.predict(&ModelInputs::new(&fs, nb.clone())).unwrap();
        let cache = model.prior_stage(&fs.select(&[0, 1, 2]), &nb.truncate(3)).unwrap();
        let targets = fs.select(&[3, 4]);
        let logits = model.predict_targets(&cache, &targets, &[(13, 12), (13, 10)]).unwrap();
        assert_eq!(logits.len(), 2);
        for (a, b) in logits.iter().zip(&full[3..]) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
    }

    #[test]
    fn target_stage_only_projects_target_rows() {
        let (fs, nb) = toy();
        let model = TrendModel::new(small_config(), fs.widths(), &mut ChaCha8Rng::seed_from_u64(4));
        let cache = model.prior_stage(&fs.select(&[0, 1, 2]), &nb.truncate(3)).unwrap();
        assert_eq!(model.layer1_rows(), 3);
        for _ in 0..4 {
            model.predict_targets(&cache, &fs.select(&[3, 4]), &[(13, 12)]).unwrap();
        }
        assert_eq!(model.layer1_rows(), 3 + 4 * 2);
    }

    #[test]
    fn target_stage_rejects_unknown_citations() {
        let (fs, nb) = toy();
        let model = TrendModel::new(small_config(), fs.widths(), &mut ChaCha8Rng::seed_from_u64(5));
        let cache = model.prior_stage(&fs.select(&[0, 1, 2]), &nb.truncate(3)).unwrap();
        let targets = fs.select(&[3, 4]);
        assert!(matches!(
            model.predict_targets(&cache, &targets, &[(13, 14)]),
            Err(ModelError::UnknownCitedNode { .. })
        ));
        assert!(matches!(
            model.predict_targets(&cache, &targets, &[(11, 10)]),
            Err(ModelError::CausalityViolation { .. })
        ));
    }

    #[test]
    fn zero_features_and_zero_biases_give_zero_logit() {
        let widths = FeatureWidths {
            text: 3,
            affiliations: 2,
            year: 2,
        };
        let fs = FeatureSet::from_blocks(
            vec![0],
            CsrMatrix::zeros(1, 3),
            CsrMatrix::zeros(1, 2),
            DenseMatrix {
                rows: 1,
                cols: 2,
                data: vec![0.0; 2],
            },
        );
        let model = TrendModel::new(small_config(), widths, &mut ChaCha8Rng::seed_from_u64(6));
        let logits = model.predict(&ModelInputs::new(&fs, Neighborhoods::self_only(1))).unwrap();
        assert_eq!(logits, vec![0.0]);
    }

    #[test]
    fn eval_forward_is_repeatable() {
        let (fs, nb) = toy();
        let model = TrendModel::new(small_config(), fs.widths(), &mut ChaCha8Rng::seed_from_u64(7));
        let inputs = ModelInputs::new(&fs, nb);
        let a: Vec<u64> = model.predict(&inputs).unwrap().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = model.predict(&inputs).unwrap().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_targets_get_identical_logits() {
        let (fs, nb) = toy();
        let model = TrendModel::new(small_config(), fs.widths(), &mut ChaCha8Rng::seed_from_u64(8));
        let cache = model.prior_stage(&fs.select(&[0, 1, 2]), &nb.truncate(3)).unwrap();
        // Row 3 twice under two different ids.
        let mut twins = fs.select(&[3, 3]);
        twins.nodes = vec![20, 21];
        twins.row_index = [(20, 0), (21, 1)].into_iter().collect();
        let logits = model
            .predict_targets(&cache, &twins, &[(20, 10), (20, 12), (21, 10), (21, 12)])
            .unwrap();
        assert_eq!(logits[0].to_bits(), logits[1].to_bits());
        // Citing nothing is the same as attending to oneself only.
        let alone = model.predict_targets(&cache, &fs.select(&[4]), &[]).unwrap();
        let full = model.predict(&ModelInputs::new(&fs, nb)).unwrap();
        assert_eq!(alone[0].to_bits(), full[4].to_bits());
    }
}

