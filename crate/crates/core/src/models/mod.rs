//! Trend predictors. Every model implements [`TrendPredictor`] and is
//! registered by name in a [`ModelRegistry`]; the training loop, the
//! experiment harness and the CLI only ever see `dyn TrendPredictor`.

mod checkpoint;
mod gat;
mod layers;
mod logistic;
mod mlp;
mod neighborhood;

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::features::{DenseMatrix, FeatureSet, FeatureWidths};
use crate::sparse::CsrMatrix;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use gat::{Activations, GatLayer, PriorCache, TrendModel};
pub use layers::{activate, EmbeddingStacks, Linear};
pub use logistic::LogisticBaseline;
pub use mlp::{solve_parity_widths, MlpBaseline};
pub use neighborhood::{build_neighborhoods, Neighborhoods};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("edge {citing} -> {cited} would leak target information into the prior graph")]
    CausalityViolation { citing: usize, cited: usize },
    #[error("prior cache was built for feature widths {expected:?}, got {found:?}")]
    CacheShapeMismatch {
        expected: FeatureWidths,
        found: FeatureWidths,
    },
    #[error("target {target} cites node {cited}, which is not in the cached prior set")]
    UnknownCitedNode { target: usize, cited: usize },
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("no baseline widths give exactly {target} parameters")]
    ParameterParity { target: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture hyperparameters shared by every registered model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub text_units: usize,
    pub affiliation_units: usize,
    pub year_units: usize,
    /// Width of the first graph layer; `None` keeps the concatenated
    /// embedding width.
    pub layer1_units: Option<usize>,
    pub layer2_units: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            text_units: 100,
            affiliation_units: 100,
            year_units: 2,
            layer1_units: None,
            layer2_units: 30,
            dropout: 0.1,
            leaky_slope: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn embedding_width(&self) -> usize {
        self.text_units + self.affiliation_units + self.year_units
    }

    pub fn layer1_width(&self) -> usize {
        self.layer1_units.unwrap_or_else(|| self.embedding_width())
    }
}

/// Per-forward view of the feature blocks and graph structure, in feature
/// row order.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub text: Rc<CsrMatrix>,
    pub affiliations: Rc<CsrMatrix>,
    pub year: Rc<DenseMatrix>,
    /// All three blocks side by side, for models without embeddings.
    pub flat: Rc<CsrMatrix>,
    pub neighborhoods: Neighborhoods,
}

impl ModelInputs {
    pub fn new(features: &FeatureSet, neighborhoods: Neighborhoods) -> Self {
        assert_eq!(neighborhoods.segments(), features.len(), "one neighborhood per feature row");
        let year_sparse = CsrMatrix::from_dense(features.year.rows, features.year.cols, &features.year.data);
        let flat = CsrMatrix::hstack(&[&features.text, &features.affiliations, &year_sparse]);
        Self {
            text: Rc::new(features.text.clone()),
            affiliations: Rc::new(features.affiliations.clone()),
            year: Rc::new(features.year.clone()),
            flat: Rc::new(flat),
            neighborhoods,
        }
    }

    pub fn rows(&self) -> usize {
        self.text.rows()
    }

    pub fn widths(&self) -> FeatureWidths {
        FeatureWidths {
            text: self.text.cols(),
            affiliations: self.affiliations.cols(),
            year: self.year.cols,
        }
    }

    /// Same features with a different graph.
    pub fn with_neighborhoods(&self, neighborhoods: Neighborhoods) -> Self {
        assert_eq!(neighborhoods.segments(), self.rows());
        Self {
            neighborhoods,
            ..self.clone()
        }
    }
}

/// Records parameters on a tape in bind order so gradients can be routed back
/// to the tensors afterwards.
pub struct Binder<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        Self {
            tape,
            vars: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn bind(&mut self, t: &Tensor) -> Var<'t> {
        let v = self.tape.leaf(t);
        self.vars.push(v);
        v
    }

    /// Bound parameters, in the order they were bound.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

/// A binary trend classifier producing one logit per feature row.
///
/// `forward` must bind parameters in exactly the order `parameters` lists
/// them.
pub trait TrendPredictor: Send + Sync {
    /// Registry name.
    fn name(&self) -> &'static str;

    fn config(&self) -> &ModelConfig;

    fn forward<'t>(
        &self,
        binder: &mut Binder<'t>,
        inputs: &ModelInputs,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var<'t>, ModelError>;

    fn parameters(&self) -> Vec<&Tensor>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn count_parameters(&self) -> usize {
        self.parameters()
            .iter()
            .filter(|p| p.requires_grad())
            .map(|p| p.numel())
            .sum()
    }

    /// The graph model, when this predictor supports the cached two-stage
    /// evaluation.
    fn as_trend_model(&self) -> Option<&TrendModel> {
        None
    }

    /// Eval-mode logits as plain numbers.
    fn predict(&self, inputs: &ModelInputs) -> Result<Vec<f64>, ModelError> {
        let tape = Tape::new();
        let mut binder = Binder::new(&tape);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self.forward(&mut binder, inputs, Mode::Eval, &mut rng)?.to_vec())
    }
}

pub type ModelFactory =
    fn(&ModelConfig, FeatureWidths, &mut dyn RngCore) -> Result<Box<dyn TrendPredictor>, ModelError>;

/// Name to constructor map used to select models at run time.
#[derive(Clone)]
pub struct ModelRegistry {
    factories: BTreeMap<&'static str, ModelFactory>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: ModelFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(
        &self,
        name: &str,
        cfg: &ModelConfig,
        widths: FeatureWidths,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn TrendPredictor>, ModelError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| ModelError::UnknownModel(name.to_owned()))?;
        factory(cfg, widths, rng)
    }
}

impl Default for ModelRegistry {
    /// `gnn`, `mlp` and `logistic`.
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(TrendModel::NAME, |cfg, w, rng| Ok(Box::new(TrendModel::new(*cfg, w, rng))));
        r.register(MlpBaseline::NAME, |cfg, w, rng| Ok(Box::new(MlpBaseline::new(*cfg, w, rng)?)));
        r.register(LogisticBaseline::NAME, |cfg, w, rng| Ok(Box::new(LogisticBaseline::new(*cfg, w, rng))));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registry_knows_builtin_models() {
        let reg = ModelRegistry::default();
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["gnn", "logistic", "mlp"]);
        let widths = FeatureWidths {
            text: 5,
            affiliations: 3,
            year: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for name in ["gnn", "mlp", "logistic"] {
            let m = reg.create(name, &ModelConfig::default(), widths, &mut rng).unwrap();
            assert_eq!(m.name(), name);
        }
        assert!(matches!(
            reg.create("forest", &ModelConfig::default(), widths, &mut rng),
            Err(ModelError::UnknownModel(_))
        ));
    }
}
