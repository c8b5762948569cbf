//! Convolutional encoder/decoder around the quantizer.
//!
//! Both stacks keep the sequence length (stride 1, same padding) and the
//! channel count `H`:
//!
//! ```text
//! encoder: Conv → [Res → Res → Conv] × enc_blocks → Conv
//! decoder: Conv → [Conv → Res → Res] × dec_blocks → Conv
//! Res(x) = x + elu(Conv(elu(Conv(x))))
//! ```
//!
//! Every convolution is followed by ELU except the last one of each stack.
//! An architecture with zero encoder and zero decoder blocks has no
//! convolutions at all; both stacks are then the identity, which gives the
//! encoderless VQ and k-means baselines.

use crate::error::{Error, Result};
use crate::numkernel::{
    conv1d_backward, conv1d_forward, init_conv_params, Activation, ConvLayerParams, ConvLayerSpec,
    Rng,
};
use crate::quantizer::{mean_normalized_sq_error, straight_through, RvqOutput, RvqStack};
use crate::tensor::{Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchSpec {
    pub dim: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub kernel: usize,
    pub clusters: usize,
    pub rvq_layers: usize,
}

impl ArchSpec {
    /// Two encoder and two decoder blocks, kernel 3, single-layer VQ.
    pub fn regular(dim: usize, clusters: usize) -> Self {
        Self {
            dim,
            enc_blocks: 2,
            dec_blocks: 2,
            kernel: 3,
            clusters,
            rvq_layers: 1,
        }
    }

    /// Eight encoder blocks.
    pub fn large(dim: usize, clusters: usize) -> Self {
        Self {
            enc_blocks: 8,
            ..Self::regular(dim, clusters)
        }
    }

    /// No convolutions; the quantizer sees the raw frames.
    pub fn encoderless(dim: usize, clusters: usize) -> Self {
        Self {
            enc_blocks: 0,
            dec_blocks: 0,
            ..Self::regular(dim, clusters)
        }
    }

    pub fn is_encoderless(&self) -> bool {
        self.enc_blocks == 0 && self.dec_blocks == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.clusters == 0 || self.rvq_layers == 0 {
            return Err(Error::Config(
                "dimension, cluster count and quantizer layers must be positive".into(),
            ));
        }
        if (self.enc_blocks == 0) != (self.dec_blocks == 0) {
            return Err(Error::Config(
                "encoder and decoder blocks must both be zero (encoderless) or both positive"
                    .into(),
            ));
        }
        if !self.is_encoderless() {
            self.layer_spec().validate()?;
        }
        Ok(())
    }

    pub fn layer_spec(&self) -> ConvLayerSpec {
        ConvLayerSpec::same(self.dim, self.dim, self.kernel)
    }

    pub fn encoder_convs(&self) -> usize {
        if self.is_encoderless() {
            0
        } else {
            2 + 5 * self.enc_blocks
        }
    }

    pub fn decoder_convs(&self) -> usize {
        if self.is_encoderless() {
            0
        } else {
            2 + 5 * self.dec_blocks
        }
    }

    pub fn conv_count(&self) -> usize {
        self.encoder_convs() + self.decoder_convs()
    }

    pub fn param_count(&self) -> usize {
        self.conv_count() * self.layer_spec().param_count()
    }

    fn encoder_plan(&self) -> Vec<Stage> {
        if self.is_encoderless() {
            return Vec::new();
        }
        let mut plan = Plan::default();
        plan.conv(Activation::Elu);
        for _ in 0..self.enc_blocks {
            plan.residual();
            plan.residual();
            plan.conv(Activation::Elu);
        }
        plan.conv(Activation::Identity);
        plan.stages
    }

    fn decoder_plan(&self) -> Vec<Stage> {
        if self.is_encoderless() {
            return Vec::new();
        }
        let mut plan = Plan::default();
        plan.conv(Activation::Elu);
        for _ in 0..self.dec_blocks {
            plan.conv(Activation::Elu);
            plan.residual();
            plan.residual();
        }
        plan.conv(Activation::Identity);
        plan.stages
    }
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Conv { layer: usize, activation: Activation },
    Residual { first: usize, second: usize },
}

#[derive(Default)]
struct Plan {
    stages: Vec<Stage>,
    next: usize,
}

impl Plan {
    fn conv(&mut self, activation: Activation) {
        self.stages.push(Stage::Conv {
            layer: self.next,
            activation,
        });
        self.next += 1;
    }

    fn residual(&mut self) {
        self.stages.push(Stage::Residual {
            first: self.next,
            second: self.next + 1,
        });
        self.next += 2;
    }
}

/// All convolution weights of a codec, encoder layers first in forward order,
/// then decoder layers. That order is also the checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecParameters<F> {
    pub arch: ArchSpec,
    pub encoder: Vec<ConvLayerParams<F>>,
    pub decoder: Vec<ConvLayerParams<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

impl<F: Real> CodecParameters<F> {
    pub fn from_layers(
        arch: ArchSpec,
        encoder: Vec<ConvLayerParams<F>>,
        decoder: Vec<ConvLayerParams<F>>,
    ) -> Result<Self> {
        arch.validate()?;
        if encoder.len() != arch.encoder_convs() || decoder.len() != arch.decoder_convs() {
            return Err(Error::Contract(format!(
                "architecture needs {}+{} convs, got {}+{}",
                arch.encoder_convs(),
                arch.decoder_convs(),
                encoder.len(),
                decoder.len()
            )));
        }
        let spec = arch.layer_spec();
        for layer in encoder.iter().chain(&decoder) {
            layer.check(&spec)?;
        }
        Ok(Self {
            arch,
            encoder,
            decoder,
        })
    }

    /// Zero-initialised parameters of the right shape (also used as gradient accumulators).
    pub fn zeros(arch: ArchSpec) -> Self {
        let spec = arch.layer_spec();
        Self {
            arch,
            encoder: vec![ConvLayerParams::zeros(&spec); arch.encoder_convs()],
            decoder: vec![ConvLayerParams::zeros(&spec); arch.decoder_convs()],
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayerParams<F>> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayerParams<F>> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    /// `encoder.conv{i}` / `decoder.conv{i}` in enumeration order.
    pub fn layer_names(&self) -> Vec<String> {
        (0..self.encoder.len())
            .map(|i| layer_name(Side::Encoder, i))
            .chain((0..self.decoder.len()).map(|i| layer_name(Side::Decoder, i)))
            .collect()
    }

    pub fn cast<G: Real>(&self) -> CodecParameters<G> {
        CodecParameters {
            arch: self.arch,
            encoder: self.encoder.iter().map(ConvLayerParams::cast).collect(),
            decoder: self.decoder.iter().map(ConvLayerParams::cast).collect(),
        }
    }

    fn check_input(&self, x: &Matrix<F>, what: &str) -> Result<()> {
        if x.cols() != self.arch.dim {
            return Err(Error::Contract(format!(
                "{what}: input dimension {} does not match codec dimension {}",
                x.cols(),
                self.arch.dim
            )));
        }
        Ok(())
    }
}

pub fn layer_name(side: Side, index: usize) -> String {
    match side {
        Side::Encoder => format!("encoder.conv{index}"),
        Side::Decoder => format!("decoder.conv{index}"),
    }
}

/// Instantiates every layer with [`init_conv_params`], encoder layers first.
pub fn build_codec<F: Real>(arch: ArchSpec, rng: &mut Rng) -> Result<CodecParameters<F>> {
    arch.validate()?;
    let spec = arch.layer_spec();
    let encoder = (0..arch.encoder_convs())
        .map(|_| init_conv_params(&spec, rng))
        .collect::<Result<Vec<_>>>()?;
    let decoder = (0..arch.decoder_convs())
        .map(|_| init_conv_params(&spec, rng))
        .collect::<Result<Vec<_>>>()?;
    CodecParameters::from_layers(arch, encoder, decoder)
}

enum Tape<F> {
    Conv {
        input: Matrix<F>,
        pre: Matrix<F>,
        activation: Activation,
        layer: usize,
    },
    Residual {
        input: Matrix<F>,
        pre1: Matrix<F>,
        hidden: Matrix<F>,
        pre2: Matrix<F>,
        first: usize,
        second: usize,
    },
}

fn run_forward<F: Real>(
    plan: &[Stage],
    layers: &[ConvLayerParams<F>],
    spec: &ConvLayerSpec,
    x: &Matrix<F>,
    mut tape: Option<&mut Vec<Tape<F>>>,
) -> Result<Matrix<F>> {
    let mut h = x.clone();
    for stage in plan {
        match *stage {
            Stage::Conv { layer, activation } => {
                let pre = conv1d_forward(&h, spec, &layers[layer])?;
                let out = activation.forward(&pre);
                if let Some(t) = tape.as_deref_mut() {
                    t.push(Tape::Conv {
                        input: h,
                        pre,
                        activation,
                        layer,
                    });
                }
                h = out;
            }
            Stage::Residual { first, second } => {
                let pre1 = conv1d_forward(&h, spec, &layers[first])?;
                let hidden = Activation::Elu.forward(&pre1);
                let pre2 = conv1d_forward(&hidden, spec, &layers[second])?;
                let mut out = Activation::Elu.forward(&pre2);
                out.add_assign(&h);
                if let Some(t) = tape.as_deref_mut() {
                    t.push(Tape::Residual {
                        input: h,
                        pre1,
                        hidden,
                        pre2,
                        first,
                        second,
                    });
                }
                h = out;
            }
        }
    }
    Ok(h)
}

fn accumulate<F: Real>(dst: &mut ConvLayerParams<F>, grad_weights: &[F], grad_bias: &[F]) {
    for (d, &g) in dst.weights.iter_mut().zip(grad_weights) {
        *d += g;
    }
    for (d, &g) in dst.bias.iter_mut().zip(grad_bias) {
        *d += g;
    }
}

/// Back-propagates `grad_out` through a recorded forward pass, adding layer
/// gradients into `grads`. Returns the gradient with respect to the stack input.
fn run_backward<F: Real>(
    layers: &[ConvLayerParams<F>],
    spec: &ConvLayerSpec,
    tape: Vec<Tape<F>>,
    grad_out: Matrix<F>,
    grads: &mut [ConvLayerParams<F>],
) -> Result<Matrix<F>> {
    let mut g = grad_out;
    for entry in tape.into_iter().rev() {
        match entry {
            Tape::Conv {
                input,
                pre,
                activation,
                layer,
            } => {
                let g_pre = activation.backward(&pre, &g);
                let cg = conv1d_backward(&g_pre, &input, spec, &layers[layer])?;
                accumulate(&mut grads[layer], &cg.grad_weights, &cg.grad_bias);
                g = cg.grad_input;
            }
            Tape::Residual {
                input,
                pre1,
                hidden,
                pre2,
                first,
                second,
            } => {
                let g_pre2 = Activation::Elu.backward(&pre2, &g);
                let cg2 = conv1d_backward(&g_pre2, &hidden, spec, &layers[second])?;
                accumulate(&mut grads[second], &cg2.grad_weights, &cg2.grad_bias);
                let g_pre1 = Activation::Elu.backward(&pre1, &cg2.grad_input);
                let cg1 = conv1d_backward(&g_pre1, &input, spec, &layers[first])?;
                accumulate(&mut grads[first], &cg1.grad_weights, &cg1.grad_bias);
                g.add_assign(&cg1.grad_input);
            }
        }
    }
    Ok(g)
}

/// Latents `Z` for frames `X`, same length.
pub fn encode<F: Real>(params: &CodecParameters<F>, x: &Matrix<F>) -> Result<Matrix<F>> {
    params.check_input(x, "encode")?;
    run_forward(
        &params.arch.encoder_plan(),
        &params.encoder,
        &params.arch.layer_spec(),
        x,
        None,
    )
}

/// Reconstruction `X̂` from (quantized) latents, same length.
pub fn decode<F: Real>(params: &CodecParameters<F>, q: &Matrix<F>) -> Result<Matrix<F>> {
    params.check_input(q, "decode")?;
    run_forward(
        &params.arch.decoder_plan(),
        &params.decoder,
        &params.arch.layer_spec(),
        q,
        None,
    )
}

/// `(1/(H·T))·‖X − X̂‖_F²`
pub fn reconstruction_loss<F: Real>(x: &Matrix<F>, x_hat: &Matrix<F>) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Contract(format!(
            "reconstruction of shape {:?} against input of shape {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    Ok(mean_normalized_sq_error(x, x_hat))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_r: f64,
    pub l_q: f64,
    /// `λ_r·l_r + λ_q·l_q`
    pub l_total: f64,
    pub step: u64,
}

impl LossReport {
    pub fn new(l_r: f64, l_q: f64, lambda_r: f64, lambda_q: f64, step: u64) -> Self {
        Self {
            l_r,
            l_q,
            l_total: lambda_r * l_r + lambda_q * l_q,
            step,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass<F> {
    pub report: LossReport,
    /// Gradients in the same layout as the parameters.
    pub grads: CodecParameters<F>,
    pub latents: Matrix<F>,
    pub quantization: RvqOutput<F>,
    pub reconstruction: Matrix<F>,
}

/// Loss and parameter gradients for one sequence.
///
/// Decoder gradients come from `λ_r·l_r` alone. The encoder receives that
/// gradient copied across the quantizer unchanged, plus `λ_q·∂l_q/∂Z` with
/// codebook entries held constant. Codebooks get no gradient.
pub fn forward_and_grads<F: Real>(
    params: &CodecParameters<F>,
    quantizer: &RvqStack<F>,
    x: &Matrix<F>,
    lambda_r: f64,
    lambda_q: f64,
) -> Result<ForwardPass<F>> {
    params.check_input(x, "forward_and_grads")?;
    if quantizer.dim() != params.arch.dim {
        return Err(Error::Contract(format!(
            "quantizer dimension {} does not match codec dimension {}",
            quantizer.dim(),
            params.arch.dim
        )));
    }
    let spec = params.arch.layer_spec();
    let (t, h) = x.shape();
    if t == 0 {
        return Err(Error::Contract("empty input sequence".into()));
    }

    let mut enc_tape = Vec::new();
    let latents = run_forward(
        &params.arch.encoder_plan(),
        &params.encoder,
        &spec,
        x,
        Some(&mut enc_tape),
    )?;
    let quantization = quantizer.quantize(&latents)?;
    let mut dec_tape = Vec::new();
    let reconstruction = run_forward(
        &params.arch.decoder_plan(),
        &params.decoder,
        &spec,
        &quantization.quantized_sum,
        Some(&mut dec_tape),
    )?;

    let l_r = mean_normalized_sq_error(x, &reconstruction);
    let report = LossReport::new(l_r, quantization.loss, lambda_r, lambda_q, 0);
    if !report.l_total.is_finite() {
        return Err(Error::NumericFault {
            block: "loss".into(),
            step: None,
        });
    }

    let norm = F::from_f64_lossy(2.0 / (t * h) as f64);
    let mut grad_recon = reconstruction.sub(x);
    grad_recon.scale(F::from_f64_lossy(lambda_r) * norm);

    let mut grads = CodecParameters::zeros(params.arch);
    let grad_quantized = run_backward(
        &params.decoder,
        &spec,
        dec_tape,
        grad_recon,
        &mut grads.decoder,
    )?;

    let mut grad_latents = straight_through(&grad_quantized);
    let commit = F::from_f64_lossy(lambda_q) * norm;
    for (input, selected) in quantization
        .layer_inputs
        .iter()
        .zip(&quantization.layer_quantized)
    {
        for ((g, &z), &e) in grad_latents
            .as_mut_slice()
            .iter_mut()
            .zip(input.as_slice())
            .zip(selected.as_slice())
        {
            *g += commit * (z - e);
        }
    }
    run_backward(
        &params.encoder,
        &spec,
        enc_tape,
        grad_latents,
        &mut grads.encoder,
    )?;

    for (name, layer) in grads.layer_names().into_iter().zip(grads.layers()) {
        if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                block: name,
                step: None,
            });
        }
    }

    Ok(ForwardPass {
        report,
        grads,
        latents,
        quantization,
        reconstruction,
    })
}
