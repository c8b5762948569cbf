use crate::codec::{build_codec, encode, forward_and_grads, CodecParameters, LossReport};
use crate::error::{Error, Result};
use crate::featureio::{
    corpus_dim, segment_sequence, shuffled_batch_indices, Batch, RepresentationSequence, Segment,
};
use crate::numkernel::{adam_step, AdamState, Rng};
use crate::quantizer::{init_codebook_from_latents, Codebook, RvqStack};
use crate::tensor::Matrix;
use crate::trainer::TrainingConfig;

// Rng stream domains. Every random decision is a function of (seed, domain, index).
const DOMAIN_CODEC_INIT: u8 = 1;
const DOMAIN_CODEBOOK_INIT: u8 = 2;
const DOMAIN_SHUFFLE: u8 = 3;
const DOMAIN_DEAD_CODES: u8 = 4;

/// Everything a training run mutates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub codec: CodecParameters<f32>,
    pub quantizer: RvqStack<f32>,
    /// One per convolution in enumeration order, over its weights followed by its bias.
    pub adam: Vec<AdamState<f32>>,
    /// Completed training steps.
    pub step: u64,
    pub seed: u64,
    pub history: Vec<LossReport>,
}

/// `step<TAB>l_r<TAB>l_q<TAB>l_total`
pub fn format_loss_line(r: &LossReport) -> String {
    format!("{}\t{}\t{}\t{}", r.step, r.l_r, r.l_q, r.l_total)
}

fn latents_of(codec: &CodecParameters<f32>, batch: &Batch) -> Result<Matrix<f32>> {
    let parts = batch
        .segments
        .iter()
        .map(|s| encode(codec, &s.frames))
        .collect::<Result<Vec<_>>>()?;
    Matrix::vstack(&parts.iter().collect::<Vec<_>>())
}

fn flatten(layer: &crate::numkernel::ConvLayerParams<f32>) -> Vec<f32> {
    let mut v = Vec::with_capacity(layer.weights.len() + layer.bias.len());
    v.extend_from_slice(&layer.weights);
    v.extend_from_slice(&layer.bias);
    v
}

impl TrainerState {
    /// Fresh codec plus codebooks seeded from `first_batch`: each quantizer
    /// layer picks `clusters` distinct rows of what is left to quantize.
    pub fn initialize(cfg: &TrainingConfig, dim: usize, first_batch: &Batch) -> Result<Self> {
        cfg.validate()?;
        let arch = cfg.arch(dim);
        let codec = build_codec::<f32>(arch, &mut Rng::derive(cfg.seed, DOMAIN_CODEC_INIT, 0))?;
        if first_batch.dim() != Some(dim) {
            return Err(Error::Contract(format!(
                "first batch dimension {:?} does not match {dim}",
                first_batch.dim()
            )));
        }
        let mut residual = latents_of(&codec, first_batch)?;
        let mut layers = Vec::with_capacity(cfg.rvq_layers);
        for i in 0..cfg.rvq_layers {
            let mut rng = Rng::derive(cfg.seed, DOMAIN_CODEBOOK_INIT, i as u64);
            let book = init_codebook_from_latents(&residual, cfg.clusters, cfg.gamma, &mut rng)?;
            let q = book.quantize(&residual)?;
            residual = residual.sub(&q.quantized);
            layers.push(book);
        }
        let adam = codec
            .layers()
            .map(|l| AdamState::new(l.weights.len() + l.bias.len()))
            .collect();
        Ok(Self {
            codec,
            quantizer: RvqStack::new(layers)?,
            adam,
            step: 0,
            seed: cfg.seed,
            history: Vec::new(),
        })
    }

    /// One optimisation step on `batch`: forward and gradients per segment
    /// (losses and gradients are segment means), Adam on every convolution,
    /// EMA on every codebook from this forward pass's assignments, then
    /// dead-code resets.
    pub fn train_step(&mut self, batch: &Batch, cfg: &TrainingConfig) -> Result<LossReport> {
        let at_step = |e: Error| match e {
            Error::NumericFault { block, step: None } => Error::NumericFault {
                block,
                step: Some(self.step),
            },
            other => other,
        };
        if batch.segments.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        if batch.dim() != Some(self.codec.arch.dim) {
            return Err(Error::Contract(format!(
                "batch dimension {:?} does not match model dimension {}",
                batch.dim(),
                self.codec.arch.dim
            )));
        }

        let layers = self.quantizer.num_layers();
        let mut grads = CodecParameters::<f32>::zeros(self.codec.arch);
        let (mut l_r, mut l_q) = (0.0, 0.0);
        let mut layer_inputs: Vec<Vec<Matrix<f32>>> = vec![Vec::new(); layers];
        let mut layer_tokens: Vec<Vec<u32>> = vec![Vec::new(); layers];
        for seg in &batch.segments {
            let pass = forward_and_grads(
                &self.codec,
                &self.quantizer,
                &seg.frames,
                cfg.lambda_r,
                cfg.lambda_q,
            )
            .map_err(at_step)?;
            l_r += pass.report.l_r;
            l_q += pass.report.l_q;
            for (acc, g) in grads.layers_mut().zip(pass.grads.layers()) {
                for (a, &v) in acc.weights.iter_mut().zip(&g.weights) {
                    *a += v;
                }
                for (a, &v) in acc.bias.iter_mut().zip(&g.bias) {
                    *a += v;
                }
            }
            for (i, input) in pass.quantization.layer_inputs.into_iter().enumerate() {
                layer_inputs[i].push(input);
                layer_tokens[i].extend_from_slice(pass.quantization.tokens.layer(i));
            }
        }
        let count = batch.segments.len();
        let report = LossReport::new(
            l_r / count as f64,
            l_q / count as f64,
            cfg.lambda_r,
            cfg.lambda_q,
            self.step + 1,
        );

        let inv = 1.0 / count as f32;
        let adam_cfg = cfg.adam();
        let names = self.codec.layer_names();
        for (((layer, grad), state), name) in self
            .codec
            .layers_mut()
            .zip(grads.layers())
            .zip(self.adam.iter_mut())
            .zip(&names)
        {
            let g: Vec<f32> = flatten(grad).into_iter().map(|v| v * inv).collect();
            let mut p = flatten(layer);
            adam_step(&mut p, &g, state, &adam_cfg, name).map_err(at_step)?;
            let (w, b) = p.split_at(layer.weights.len());
            layer.weights.copy_from_slice(w);
            layer.bias.copy_from_slice(b);
        }

        let stacked: Vec<Matrix<f32>> = layer_inputs
            .iter()
            .map(|parts| Matrix::vstack(&parts.iter().collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        let tokens = crate::quantizer::TokenSequence::from_layers(
            self.quantizer.codebook_size() as u32,
            layer_tokens,
        )?;
        for book in self.quantizer.layers_mut() {
            book.set_gamma(cfg.gamma)?;
        }
        self.quantizer.ema_update(&stacked, &tokens)?;
        for (i, (book, inputs)) in self
            .quantizer
            .layers_mut()
            .iter_mut()
            .zip(&stacked)
            .enumerate()
        {
            let index = self.step * layers as u64 + i as u64;
            let mut rng = Rng::derive(self.seed, DOMAIN_DEAD_CODES, index);
            book.reset_dead_codes(inputs, &mut rng, cfg.dead_code_threshold)?;
        }
        check_codebooks(self.quantizer.layers()).map_err(at_step)?;

        self.step += 1;
        self.history.push(report);
        Ok(report)
    }
}

fn check_codebooks(layers: &[Codebook<f32>]) -> Result<()> {
    for (i, book) in layers.iter().enumerate() {
        if !book.entries().is_finite() || book.ema_counts().iter().any(|c| !c.is_finite()) {
            return Err(Error::NumericFault {
                block: format!("quantizer.layer{i}"),
                step: None,
            });
        }
    }
    Ok(())
}

/// Holds the segment pool of a corpus and serves the deterministic batch
/// sequence: epoch `e` is a shuffle seeded by `(seed, e)`, and step `s` takes
/// batch `s mod batches_per_epoch` of epoch `s / batches_per_epoch`.
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainingConfig,
    dim: usize,
    segments: Vec<Segment>,
    epoch_cache: Option<(u64, Vec<Vec<usize>>)>,
}

impl Trainer {
    pub fn new(corpus: &[RepresentationSequence], cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = corpus_dim(corpus)?;
        let mut segments = Vec::new();
        for seq in corpus {
            segments.extend(segment_sequence(seq, cfg.segment_len)?);
        }
        if segments.len() < cfg.batch_size {
            return Err(Error::Config(format!(
                "corpus yields {} segments of {} frames, fewer than one batch of {}",
                segments.len(),
                cfg.segment_len,
                cfg.batch_size
            )));
        }
        Ok(Self {
            cfg,
            dim,
            segments,
            epoch_cache: None,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn batches_per_epoch(&self) -> u64 {
        (self.segments.len() / self.cfg.batch_size) as u64
    }

    pub fn batch_for_step(&mut self, step: u64) -> Result<Batch> {
        let per_epoch = self.batches_per_epoch();
        let epoch = step / per_epoch;
        if self.epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = Rng::derive(self.cfg.seed, DOMAIN_SHUFFLE, epoch);
            let order =
                shuffled_batch_indices(self.segments.len(), self.cfg.batch_size, &mut rng)?;
            self.epoch_cache = Some((epoch, order));
        }
        let (_, order) = self.epoch_cache.as_ref().expect("filled above");
        Ok(Batch {
            segments: order[(step % per_epoch) as usize]
                .iter()
                .map(|&i| self.segments[i].clone())
                .collect(),
        })
    }

    pub fn initialize(&mut self) -> Result<TrainerState> {
        let first = self.batch_for_step(0)?;
        TrainerState::initialize(&self.cfg, self.dim, &first)
    }

    /// Trains until `state.step == until`, calling `on_step` after every step.
    pub fn run_until(
        &mut self,
        state: &mut TrainerState,
        until: u64,
        mut on_step: impl FnMut(&LossReport) -> Result<()>,
    ) -> Result<()> {
        if state.codec.arch != self.cfg.arch(self.dim) {
            return Err(Error::Config(
                "model architecture does not match the training configuration".into(),
            ));
        }
        if state.seed != self.cfg.seed {
            return Err(Error::Config(format!(
                "model was trained with seed {}, configuration says {}",
                state.seed, self.cfg.seed
            )));
        }
        while state.step < until {
            let batch = self.batch_for_step(state.step)?;
            let report = state.train_step(&batch, &self.cfg)?;
            on_step(&report)?;
        }
        Ok(())
    }

    /// Initializes and trains for the configured number of steps.
    pub fn run(&mut self) -> Result<TrainerState> {
        let mut state = self.initialize()?;
        self.run_until(&mut state, self.cfg.steps, |_| Ok(()))?;
        Ok(state)
    }
}
