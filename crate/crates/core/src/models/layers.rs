use std::rc::Rc;

use rand::{Rng, RngCore};

use crate::autodiff::{Tensor, Var};
use crate::sparse::CsrMatrix;

use super::{Binder, Mode, ModelConfig, ModelError, ModelInputs};

/// Affine map `x W + b` with `W: in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::glorot(input, output, rng),
            bias: Tensor::zeros(vec![1, output]).trainable(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.dims().0
    }

    pub fn output_width(&self) -> usize {
        self.weight.dims().1
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn forward<'t>(&self, b: &mut Binder<'t>, x: Var<'t>) -> Result<Var<'t>, ModelError> {
        let w = b.bind(&self.weight);
        let bias = b.bind(&self.bias);
        Ok(x.matmul(w)?.add_row(bias)?)
    }

    pub fn forward_sparse<'t>(&self, b: &mut Binder<'t>, x: &Rc<CsrMatrix>) -> Result<Var<'t>, ModelError> {
        let w = b.bind(&self.weight);
        let bias = b.bind(&self.bias);
        Ok(w.sparse_lmul(Rc::clone(x))?.add_row(bias)?)
    }
}

/// leaky ReLU followed by dropout in train mode.
pub fn activate<'t>(x: Var<'t>, cfg: &ModelConfig, mode: Mode, rng: &mut dyn RngCore) -> Var<'t> {
    let y = x.leaky_relu(cfg.leaky_slope);
    match mode {
        Mode::Train => y.dropout(cfg.dropout, rng),
        Mode::Eval => y,
    }
}

/// Separate dense embeddings for the text, affiliation and year blocks,
/// concatenated column-wise.
#[derive(Debug, Clone)]
pub struct EmbeddingStacks {
    pub text: Linear,
    pub affiliation: Linear,
    pub year: Linear,
}

impl EmbeddingStacks {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, widths: crate::features::FeatureWidths, rng: &mut R) -> Self {
        Self {
            text: Linear::new(widths.text, cfg.text_units, rng),
            affiliation: Linear::new(widths.affiliations, cfg.affiliation_units, rng),
            year: Linear::new(widths.year, cfg.year_units, rng),
        }
    }

    pub fn output_width(&self) -> usize {
        self.text.output_width() + self.affiliation.output_width() + self.year.output_width()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        [&self.text, &self.affiliation, &self.year]
            .into_iter()
            .flat_map(Linear::params)
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let Self {
            text,
            affiliation,
            year,
        } = self;
        let mut out = text.params_mut();
        out.extend(affiliation.params_mut());
        out.extend(year.params_mut());
        out
    }

    pub fn forward<'t>(
        &self,
        b: &mut Binder<'t>,
        inputs: &ModelInputs,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var<'t>, ModelError> {
        let text = activate(self.text.forward_sparse(b, &inputs.text)?, cfg, mode, rng);
        let aff = activate(self.affiliation.forward_sparse(b, &inputs.affiliations)?, cfg, mode, rng);
        let (rows, cols) = (inputs.year.rows, inputs.year.cols);
        let year_in = b.tape().constant(rows, cols, inputs.year.data.clone());
        let year = activate(self.year.forward(b, year_in)?, cfg, mode, rng);
        Ok(Var::concat(&[text, aff, year])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_layer_parameter_count() {
        let l = Linear::new(7, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let n: usize = l.params().iter().map(|p| p.numel()).sum();
        assert_eq!(n, 7 * 3 + 3);
    }

    #[test]
    fn glorot_bounds() {
        let l = Linear::new(10, 6, &mut ChaCha8Rng::seed_from_u64(3));
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(l.weight.data().iter().all(|w| w.abs() <= bound));
        assert!(l.bias.data().iter().all(|&b| b == 0.0));
    }
}
