use rand::{Rng, RngCore};

use crate::autodiff::{Tensor, Var};
use crate::features::FeatureWidths;

use super::layers::{activate, EmbeddingStacks, Linear};
use super::{Binder, Mode, ModelConfig, ModelError, ModelInputs, TrendModel, TrendPredictor};

/// How far past the graph model's widths the search looks.
const PARITY_SEARCH_SPAN: usize = 512;

/// Graph-free twin of [`TrendModel`]: the same embedding stacks followed by
/// two dense layers, widened so the trainable parameter count matches the
/// graph model exactly.
#[derive(Debug, Clone)]
pub struct MlpBaseline {
    pub config: ModelConfig,
    pub stacks: EmbeddingStacks,
    pub dense1: Linear,
    pub dense2: Linear,
    pub head: Linear,
}

fn dense_params(input: usize, output: usize) -> usize {
    input * output + output
}

fn gat_params(input: usize, output: usize) -> usize {
    dense_params(input, output) + 2 * output + 1
}

/// Widths `(h1, h2)` of the two dense layers, with `h1 >= layer1`,
/// `h2 >= layer2`, whose dense stack has exactly as many parameters as the
/// two attention layers plus head. Smallest `h2` wins.
pub fn solve_parity_widths(embedding: usize, layer1: usize, layer2: usize) -> Result<(usize, usize), ModelError> {
    let target = gat_params(embedding, layer1) + gat_params(layer1, layer2) + dense_params(layer2, 1);
    for h2 in layer2..=layer2 + PARITY_SEARCH_SPAN {
        // dense(e, h1) + dense(h1, h2) + dense(h2, 1) = h1 (e + 1 + h2) + 2 h2 + 1
        let fixed = 2 * h2 + 1;
        let per_h1 = embedding + 1 + h2;
        if target < fixed {
            break;
        }
        let rest = target - fixed;
        if rest % per_h1 == 0 && rest / per_h1 >= layer1 {
            return Ok((rest / per_h1, h2));
        }
    }
    Err(ModelError::ParameterParity { target })
}

impl MlpBaseline {
    pub const NAME: &'static str = "mlp";

    pub fn new<R: Rng + ?Sized>(config: ModelConfig, widths: FeatureWidths, rng: &mut R) -> Result<Self, ModelError> {
        let stacks = EmbeddingStacks::new(&config, widths, rng);
        let e = stacks.output_width();
        let (h1, h2) = solve_parity_widths(e, config.layer1_width(), config.layer2_units)?;
        let dense1 = Linear::new(e, h1, rng);
        let dense2 = Linear::new(h1, h2, rng);
        let head = Linear::new(h2, 1, rng);
        Ok(Self {
            config,
            stacks,
            dense1,
            dense2,
            head,
        })
    }

    /// Baseline computing exactly what `gnn` computes on a graph without
    /// edges: kernels copied into the leading block, widened units zeroed.
    pub fn from_trend_model(gnn: &TrendModel) -> Result<Self, ModelError> {
        let cfg = gnn.config;
        let e = gnn.stacks.output_width();
        let (d1, d2) = (gnn.layer1.output_width(), gnn.layer2.output_width());
        let (h1, h2) = solve_parity_widths(e, d1, d2)?;
        Ok(Self {
            config: cfg,
            stacks: gnn.stacks.clone(),
            dense1: embed(&gnn.layer1.kernel, e, h1),
            dense2: embed(&gnn.layer2.kernel, h1, h2),
            head: embed(&gnn.head, h2, 1),
        })
    }

    pub fn hidden_widths(&self) -> (usize, usize) {
        (self.dense1.output_width(), self.dense2.output_width())
    }
}

/// Copies `src` into the top-left corner of a zero `input x output` layer.
fn embed(src: &Linear, input: usize, output: usize) -> Linear {
    let (si, so) = src.weight.dims();
    let mut w = vec![0.0; input * output];
    for r in 0..si {
        w[r * output..r * output + so].copy_from_slice(&src.weight.data()[r * so..(r + 1) * so]);
    }
    let mut bias = vec![0.0; output];
    bias[..so].copy_from_slice(src.bias.data());
    Linear {
        weight: Tensor::matrix(input, output, w).trainable(),
        bias: Tensor::matrix(1, output, bias).trainable(),
    }
}

impl TrendPredictor for MlpBaseline {
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
        let cfg = &self.config;
        let x = self.stacks.forward(binder, inputs, cfg, mode, rng)?;
        let h1 = activate(self.dense1.forward(binder, x)?, cfg, mode, rng);
        let h2 = activate(self.dense2.forward(binder, h1)?, cfg, mode, rng);
        self.head.forward(binder, h2)
    }

    fn parameters(&self) -> Vec<&Tensor> {
        let mut out = self.stacks.params();
        out.extend(self.dense1.params());
        out.extend(self.dense2.params());
        out.extend(self.head.params());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let Self {
            stacks,
            dense1,
            dense2,
            head,
            ..
        } = self;
        let mut out = stacks.params_mut();
        out.extend(dense1.params_mut());
        out.extend(dense2.params_mut());
        out.extend(head.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_widths_audit() {
        // Attention layers: 202*202+202 + 405 and 202*30+30 + 61, head 31.
        let gat_side = 41_411 + 6_151 + 31;
        assert_eq!(gat_params(202, 202) + gat_params(202, 30) + dense_params(30, 1), gat_side);
        // 204 * (202 + 1 + 30) + 2 * 30 + 1 = 47_593
        assert_eq!(solve_parity_widths(202, 202, 30).unwrap(), (204, 30));
    }

    #[test]
    fn counts_match_for_default_config() {
        let widths = FeatureWidths {
            text: 1000,
            affiliations: 300,
            year: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gnn = TrendModel::new(ModelConfig::default(), widths, &mut rng);
        let mlp = MlpBaseline::new(ModelConfig::default(), widths, &mut rng).unwrap();
        assert_eq!(gnn.count_parameters(), mlp.count_parameters());
        assert_eq!(mlp.hidden_widths(), (204, 30));
    }
}
