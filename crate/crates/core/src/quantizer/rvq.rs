use crate::error::{Error, Result};
use crate::quantizer::{Codebook, TokenSequence};
use crate::tensor::{Matrix, Real};

/// M codebooks where layer `i` quantizes what layers `0..i` left over.
/// With one layer this is plain VQ.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqStack<F> {
    layers: Vec<Codebook<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqOutput<F> {
    pub tokens: TokenSequence,
    /// Sum of the selected entries over all layers.
    pub quantized_sum: Matrix<F>,
    /// Σ over layers of each layer's mean normalised squared error.
    pub loss: f64,
    /// Per-layer loss terms; they sum to `loss`.
    pub layer_losses: Vec<f64>,
    /// The residual each layer quantized (layer 0 sees the latents themselves).
    pub layer_inputs: Vec<Matrix<F>>,
    /// The entries each layer selected.
    pub layer_quantized: Vec<Matrix<F>>,
}

impl<F: Real> RvqStack<F> {
    pub fn new(layers: Vec<Codebook<F>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Config("residual quantizer needs at least one layer".into()))?;
        let (k, h) = (first.size(), first.dim());
        if let Some(i) = layers.iter().position(|l| l.size() != k || l.dim() != h) {
            return Err(Error::Config(format!(
                "layer {i} codebook shape differs from layer 0 ({k}x{h})"
            )));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Codebook<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Codebook<F>] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn codebook_size(&self) -> usize {
        self.layers[0].size()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dim()
    }

    pub fn quantize(&self, latents: &Matrix<F>) -> Result<RvqOutput<F>> {
        let mut residual = latents.clone();
        let mut quantized_sum = Matrix::zeros(latents.rows(), latents.cols());
        let mut token_layers = Vec::with_capacity(self.layers.len());
        let mut layer_losses = Vec::with_capacity(self.layers.len());
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut layer_quantized = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let out = layer.quantize(&residual)?;
            quantized_sum.add_assign(&out.quantized);
            let next = residual.sub(&out.quantized);
            layer_inputs.push(std::mem::replace(&mut residual, next));
            token_layers.push(out.assignment.indices);
            layer_losses.push(out.loss);
            layer_quantized.push(out.quantized);
        }
        Ok(RvqOutput {
            tokens: TokenSequence::from_layers(self.codebook_size() as u32, token_layers)?,
            quantized_sum,
            loss: layer_losses.iter().sum(),
            layer_losses,
            layer_inputs,
            layer_quantized,
        })
    }

    /// EMA-updates every layer from the residuals it saw and the tokens it chose.
    pub fn ema_update(&mut self, layer_inputs: &[Matrix<F>], tokens: &TokenSequence) -> Result<()> {
        if layer_inputs.len() != self.layers.len() || tokens.num_layers() != self.layers.len() {
            return Err(Error::Contract(format!(
                "EMA update for {} layers got {} inputs and {} token layers",
                self.layers.len(),
                layer_inputs.len(),
                tokens.num_layers()
            )));
        }
        for (i, (layer, input)) in self.layers.iter_mut().zip(layer_inputs).enumerate() {
            let assignment = crate::quantizer::Assignment {
                indices: tokens.layer(i).to_vec(),
            };
            layer.ema_update(input, &assignment)?;
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> RvqStack<G> {
        RvqStack {
            layers: self.layers.iter().map(Codebook::cast).collect(),
        }
    }
}

pub fn quantize_rvq<F: Real>(stack: &RvqStack<F>, latents: &Matrix<F>) -> Result<RvqOutput<F>> {
    stack.quantize(latents)
}
