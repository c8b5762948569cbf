use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::codec::{encode, ArchSpec, CodecParameters};
use crate::error::{Error, Result};
use crate::featureio::{load_corpus, read_feature_file, RepresentationSequence};
use crate::numkernel::Rng;
use crate::quantizer::{
    kmeans_fit, write_token_file, Codebook, KMeansFit, RvqStack, TokenSequence,
    DEFAULT_COUNT_FLOOR, DEFAULT_GAMMA,
};
use crate::tensor::Matrix;
use crate::trainer::{format_loss_line, save_checkpoint, Trainer, TrainerState, TrainingConfig};

pub const CHECKPOINT_FILE: &str = "model.rpcc";
pub const LOSS_LOG_FILE: &str = "loss.tsv";

/// Trains on every file of `manifest` and writes `model.rpcc` and `loss.tsv`
/// (one line per step) into `out_dir`. Returns the checkpoint path.
pub fn train(
    manifest: impl AsRef<Path>,
    cfg: &TrainingConfig,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    cfg.validate()?;
    let corpus = load_corpus(manifest)?;
    let mut trainer = Trainer::new(&corpus, cfg.clone())?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let log_path = out_dir.join(LOSS_LOG_FILE);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut state = trainer.initialize()?;
    trainer.run_until(&mut state, cfg.steps, |r| {
        writeln!(log, "{}", format_loss_line(r)).map_err(|e| Error::io(&log_path, e))
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let ckpt = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&state, &ckpt)?;
    Ok(ckpt)
}

/// Encoder plus quantizer over a whole utterance; the decoder is not used.
pub fn tokenize_sequence(model: &TrainerState, frames: &Matrix<f32>) -> Result<TokenSequence> {
    if frames.cols() != model.codec.arch.dim {
        return Err(Error::Contract(format!(
            "features have dimension {}, model expects {}",
            frames.cols(),
            model.codec.arch.dim
        )));
    }
    let z = encode(&model.codec, frames)?;
    Ok(model.quantizer.quantize(&z)?.tokens)
}

pub fn tokenize(
    checkpoint: impl AsRef<Path>,
    features: impl AsRef<Path>,
    out: impl AsRef<Path>,
) -> Result<()> {
    let model = crate::trainer::load_checkpoint(checkpoint)?;
    let seq = read_feature_file(features)?;
    let tokens = tokenize_sequence(&model, &seq.frames).map_err(|e| match e {
        Error::Contract(msg) => Error::Contract(format!("utterance {}: {msg}", seq.utterance_id)),
        other => other,
    })?;
    write_token_file(out, &tokens)
}

/// Wraps k-means centers as an encoderless model with one codebook, whose
/// EMA counts are the cluster sizes.
pub fn kmeans_state(fit: &KMeansFit<f32>, seed: u64) -> Result<TrainerState> {
    let (k, h) = fit.centers.shape();
    let arch = ArchSpec::encoderless(h, k);
    let counts: Vec<f32> = fit.cluster_sizes.iter().map(|&c| c as f32).collect();
    let mut sums = fit.centers.clone();
    for (c, &n) in counts.iter().enumerate() {
        for v in sums.row_mut(c) {
            *v *= n;
        }
    }
    let book = Codebook::from_parts(
        fit.centers.clone(),
        counts,
        sums,
        DEFAULT_GAMMA,
        DEFAULT_COUNT_FLOOR,
    )?;
    Ok(TrainerState {
        codec: CodecParameters::from_layers(arch, Vec::new(), Vec::new())?,
        quantizer: RvqStack::new(vec![book])?,
        adam: Vec::new(),
        step: 0,
        seed,
        history: Vec::new(),
    })
}

/// Full-batch k-means over every frame of every utterance.
pub fn train_kmeans(
    corpus: &[RepresentationSequence],
    clusters: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<(TrainerState, KMeansFit<f32>)> {
    crate::featureio::corpus_dim(corpus)?;
    let frames: Vec<&Matrix<f32>> = corpus.iter().map(|s| &s.frames).collect();
    let data = Matrix::vstack(&frames)?;
    let fit = kmeans_fit(&data, clusters, max_iters, tol, &mut Rng::new(seed))?;
    Ok((kmeans_state(&fit, seed)?, fit))
}

/// Loads a manifest's corpus and fits k-means to it.
pub fn train_kmeans_manifest(
    manifest: impl AsRef<Path>,
    clusters: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<(TrainerState, KMeansFit<f32>)> {
    train_kmeans(&load_corpus(manifest)?, clusters, max_iters, tol, seed)
}
