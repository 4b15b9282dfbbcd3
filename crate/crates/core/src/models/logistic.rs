use rand::{Rng, RngCore};

use crate::autodiff::{Tensor, Var};
use crate::features::FeatureWidths;

use super::layers::Linear;
use super::{Binder, Mode, ModelConfig, ModelError, ModelInputs, TrendPredictor};

/// One linear unit over the raw, concatenated feature blocks.
#[derive(Debug, Clone)]
pub struct LogisticBaseline {
    pub config: ModelConfig,
    pub linear: Linear,
}

impl LogisticBaseline {
    pub const NAME: &'static str = "logistic";

    pub fn new<R: Rng + ?Sized>(config: ModelConfig, widths: FeatureWidths, rng: &mut R) -> Self {
        let input = widths.text + widths.affiliations + widths.year;
        Self {
            config,
            linear: Linear::new(input, 1, rng),
        }
    }
}

impl TrendPredictor for LogisticBaseline {
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
        _mode: Mode,
        _rng: &mut dyn RngCore,
    ) -> Result<Var<'t>, ModelError> {
        self.linear.forward_sparse(binder, &inputs.flat)
    }

    fn parameters(&self) -> Vec<&Tensor> {
        self.linear.params()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.linear.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{fit, TrainConfig};
    use crate::features::{DenseMatrix, FeatureSet};
    use crate::models::Neighborhoods;
    use crate::sparse::CsrMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Rows 0..4 carry text column 0, rows 4..8 text column 1.
    fn separable() -> ModelInputs {
        let rows = (0..8).map(|r| vec![(usize::from(r >= 4), 1.0)]).collect();
        let text = CsrMatrix::from_rows(2, rows);
        let affs = CsrMatrix::zeros(8, 1);
        let year = DenseMatrix {
            rows: 8,
            cols: 2,
            data: vec![0.5; 16],
        };
        let fs = FeatureSet::from_blocks((0..8).collect(), text, affs, year);
        ModelInputs::new(&fs, Neighborhoods::self_only(8))
    }

    fn trained(labels: &[bool]) -> Vec<f64> {
        let inputs = separable();
        let mut model = LogisticBaseline::new(ModelConfig::default(), inputs.widths(), &mut ChaCha8Rng::seed_from_u64(0));
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let rows: Vec<usize> = (0..8).collect();
        fit(&mut model, &inputs, &rows, labels, &cfg).unwrap();
        model.predict(&inputs).unwrap()
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let labels: Vec<bool> = (0..8).map(|r| r < 4).collect();
        let logits = trained(&labels);
        for (z, y) in logits.iter().zip(&labels) {
            assert_eq!(*z > 0.0, *y);
        }
    }

    #[test]
    fn single_class_data_predicts_that_class() {
        assert!(trained(&[true; 8]).iter().all(|&z| z > 0.0));
        assert!(trained(&[false; 8]).iter().all(|&z| z < 0.0));
    }

    #[test]
    fn one_weight_per_input_column_plus_bias() {
        let inputs = separable();
        let model = LogisticBaseline::new(ModelConfig::default(), inputs.widths(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(model.count_parameters(), 2 + 1 + 2 + 1);
    }
}
