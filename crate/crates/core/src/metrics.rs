//! Token-quality measurements: PNMI over n-grams, codebook utilization and
//! corpus distortion.
//!
//! Entropies use plug-in (maximum-likelihood) estimates in nats. PNMI_n is
//! the mutual information between phoneme n-grams and token n-grams read at
//! the same frame positions, divided by the phoneme n-gram entropy. Windows
//! overlap with unit stride, never cross utterance boundaries, and are pooled
//! over the whole corpus.

use std::collections::BTreeMap;
use std::path::Path;

use crate::codec::{decode, encode, reconstruction_loss};
use crate::error::{Error, Result};
use crate::featureio::{load_corpus, FrameLabels, RepresentationSequence};
use crate::trainer::{load_checkpoint, TrainerState};

/// Joint counts of (phoneme n-gram, token n-gram) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramJointCounts {
    n: usize,
    counts: BTreeMap<(Vec<u32>, Vec<u32>), u64>,
    total: u64,
}

impl NgramJointCounts {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("n-gram order must be positive".into()));
        }
        Ok(Self {
            n,
            counts: BTreeMap::new(),
            total: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Keyed by `(phoneme n-gram, token n-gram)`.
    pub fn counts(&self) -> &BTreeMap<(Vec<u32>, Vec<u32>), u64> {
        &self.counts
    }

    /// Counts every window `j ∈ [0, T−n]` of one utterance. Returns the number
    /// of windows added (zero when the utterance is shorter than `n`).
    pub fn add_utterance(&mut self, tokens: &[u32], phonemes: &[u32]) -> Result<usize> {
        if tokens.len() != phonemes.len() {
            return Err(Error::Contract(format!(
                "{} tokens against {} phoneme labels",
                tokens.len(),
                phonemes.len()
            )));
        }
        let windows = (tokens.len() + 1).saturating_sub(self.n);
        for j in 0..windows {
            let key = (
                phonemes[j..j + self.n].to_vec(),
                tokens[j..j + self.n].to_vec(),
            );
            *self.counts.entry(key).or_insert(0) += 1;
        }
        self.total += windows as u64;
        Ok(windows)
    }

    pub fn merge(&mut self, other: &NgramJointCounts) -> Result<()> {
        if other.n != self.n {
            return Err(Error::Contract(format!(
                "cannot merge {}-gram counts into {}-gram counts",
                other.n, self.n
            )));
        }
        for (k, &c) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += c;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn phoneme_marginal(&self) -> BTreeMap<&[u32], u64> {
        let mut m = BTreeMap::new();
        for ((s, _), &c) in &self.counts {
            *m.entry(s.as_slice()).or_insert(0) += c;
        }
        m
    }

    pub fn token_marginal(&self) -> BTreeMap<&[u32], u64> {
        let mut m = BTreeMap::new();
        for ((_, z), &c) in &self.counts {
            *m.entry(z.as_slice()).or_insert(0) += c;
        }
        m
    }
}

/// Pools n-gram windows over `(tokens, labels)` utterance pairs.
pub fn ngram_joint_counts<'a>(
    utterances: impl IntoIterator<Item = (&'a [u32], &'a FrameLabels)>,
    n: usize,
) -> Result<NgramJointCounts> {
    let mut counts = NgramJointCounts::new(n)?;
    for (tokens, labels) in utterances {
        counts.add_utterance(tokens, &labels.labels)?;
    }
    if counts.total == 0 {
        return Err(Error::Config(format!(
            "no utterance has at least {n} frames"
        )));
    }
    Ok(counts)
}

/// Sums in ascending order so the result depends only on the multiset of
/// terms, not on how the cells happen to be labelled.
fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn entropy<'a>(counts: impl IntoIterator<Item = &'a u64>, total: f64) -> f64 {
    canonical_sum(
        counts
            .into_iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnmiTerms {
    /// Nats.
    pub mutual_information: f64,
    /// Nats.
    pub phoneme_entropy: f64,
    pub pnmi: f64,
}

pub fn pnmi_terms(counts: &NgramJointCounts) -> Result<PnmiTerms> {
    if counts.total == 0 {
        return Err(Error::UndefinedMetric("no windows were counted".into()));
    }
    let total = counts.total as f64;
    let phonemes = counts.phoneme_marginal();
    let tokens = counts.token_marginal();
    let phoneme_entropy = entropy(phonemes.values(), total);
    if phoneme_entropy <= 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "phoneme {}-grams have zero entropy",
            counts.n
        )));
    }
    let mutual_information = canonical_sum(
        counts
            .counts
            .iter()
            .map(|((s, z), &c)| {
                let c = c as f64;
                let cs = phonemes[s.as_slice()] as f64;
                let cz = tokens[z.as_slice()] as f64;
                c / total * (c * total / (cs * cz)).ln()
            })
            .collect(),
    );
    Ok(PnmiTerms {
        mutual_information,
        phoneme_entropy,
        pnmi: mutual_information / phoneme_entropy,
    })
}

/// `I(phoneme n-gram; token n-gram) / H(phoneme n-gram)`.
pub fn pnmi_n(counts: &NgramJointCounts) -> Result<f64> {
    Ok(pnmi_terms(counts)?.pnmi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnmiReport {
    pub per_n: BTreeMap<usize, PnmiTerms>,
}

/// PNMI_n for `n = 1..=max_n` over the same utterances.
pub fn pnmi_report<'a>(
    utterances: &[(&'a [u32], &'a FrameLabels)],
    max_n: usize,
) -> Result<PnmiReport> {
    let per_n = (1..=max_n)
        .map(|n| {
            let counts = ngram_joint_counts(utterances.iter().copied(), n)?;
            Ok((n, pnmi_terms(&counts)?))
        })
        .collect::<Result<_>>()?;
    Ok(PnmiReport { per_n })
}

/// Normalised mutual information between two labelings of the same items,
/// `2·I(a;b) / (H(a) + H(b))`; 1 when both labelings are constant.
pub fn normalized_mutual_information(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Contract(format!(
            "labelings of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut counts = NgramJointCounts::new(1)?;
    counts.add_utterance(b, a)?;
    let total = counts.total as f64;
    let ha = entropy(counts.phoneme_marginal().values(), total);
    let hb = entropy(counts.token_marginal().values(), total);
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let mi = if ha == 0.0 { 0.0 } else { pnmi_terms(&counts)?.mutual_information };
    Ok(2.0 * mi / (ha + hb))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Utilization {
    /// Distinct codes used, divided by K.
    pub fraction_used: f64,
    /// `exp` of the entropy of the empirical code distribution.
    pub perplexity: f64,
    pub used: usize,
}

impl Utilization {
    /// From per-code (possibly fractional) usage weights, such as EMA counts.
    /// Codes with weight at or below `floor` count as unused.
    pub fn from_weights(weights: &[f64], floor: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("codebook size must be positive".into()));
        }
        let total: f64 = weights.iter().filter(|&&w| w > floor).sum();
        if total <= 0.0 {
            return Err(Error::UndefinedMetric("no code carries any weight".into()));
        }
        let used = weights.iter().filter(|&&w| w > floor).count();
        let h: f64 = weights
            .iter()
            .filter(|&&w| w > floor)
            .map(|&w| {
                let p = w / total;
                -p * p.ln()
            })
            .sum();
        Ok(Self {
            fraction_used: used as f64 / weights.len() as f64,
            perplexity: h.exp(),
            used,
        })
    }
}

pub fn codebook_utilization(tokens: impl IntoIterator<Item = u32>, k: usize) -> Result<Utilization> {
    if k == 0 {
        return Err(Error::Config("codebook size must be positive".into()));
    }
    let mut counts = vec![0.0f64; k];
    let mut seen = 0usize;
    for t in tokens {
        let t = t as usize;
        if t >= k {
            return Err(Error::Data(format!("token {t} outside codebook of size {k}")));
        }
        counts[t] += 1.0;
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::Config("empty token stream".into()));
    }
    Utilization::from_weights(&counts, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionReport {
    /// Frame-weighted mean reconstruction loss.
    pub l_r: f64,
    /// Frame-weighted mean quantization loss.
    pub l_q: f64,
    pub frames: usize,
}

/// Encodes, quantizes and decodes every whole utterance and averages the
/// per-utterance losses weighted by frame count.
pub fn corpus_distortion(
    model: &TrainerState,
    corpus: &[RepresentationSequence],
) -> Result<DistortionReport> {
    let mut l_r = 0.0;
    let mut l_q = 0.0;
    let mut frames = 0usize;
    for seq in corpus {
        if seq.dim() != model.codec.arch.dim {
            return Err(Error::Contract(format!(
                "utterance {} has dimension {}, model expects {}",
                seq.utterance_id,
                seq.dim(),
                model.codec.arch.dim
            )));
        }
        let z = encode(&model.codec, &seq.frames)?;
        let q = model.quantizer.quantize(&z)?;
        let x_hat = decode(&model.codec, &q.quantized_sum)?;
        let t = seq.len() as f64;
        l_r += t * reconstruction_loss(&seq.frames, &x_hat)?;
        l_q += t * q.loss;
        frames += seq.len();
    }
    if frames == 0 {
        return Err(Error::Config("empty corpus".into()));
    }
    Ok(DistortionReport {
        l_r: l_r / frames as f64,
        l_q: l_q / frames as f64,
        frames,
    })
}

pub fn distortion_report(
    checkpoint: impl AsRef<Path>,
    manifest: impl AsRef<Path>,
) -> Result<DistortionReport> {
    let model = load_checkpoint(checkpoint)?;
    let corpus = load_corpus(manifest)?;
    corpus_distortion(&model, &corpus)
}
