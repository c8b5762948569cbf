//! Binary checkpoint (little-endian).
//!
//! ```text
//! magic "RPCC" | version u32 = 1
//! header: H u32 | kernel u32 | enc_blocks u32 | dec_blocks u32 | K u32 | M u32 | step u64 | seed u64
//! conv params, f32, enumeration order; per layer: weights [out][in][tap], then bias
//! per quantizer layer: entries K×H | ema_counts K | ema_sums K×H, f32
//! Adam moments, f32, enumeration order; per layer: first moment, then second moment
//! ```
//!
//! A k-means model is stored as an encoderless model (zero blocks, hence no
//! convolutions and no moments) whose single codebook holds the centers.

use std::fs;
use std::path::Path;

use crate::codec::{ArchSpec, CodecParameters};
use crate::error::{Error, Result};
use crate::numkernel::{AdamState, ConvLayerParams};
use crate::quantizer::{Codebook, RvqStack, DEFAULT_COUNT_FLOOR, DEFAULT_GAMMA};
use crate::tensor::Matrix;
use crate::trainer::TrainerState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RPCC";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 6 * 4 + 2 * 8;

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(state: &TrainerState) -> Result<Vec<u8>> {
    let arch = state.codec.arch;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, arch.dim, "dimension")?;
    put_u32(&mut out, arch.kernel, "kernel")?;
    put_u32(&mut out, arch.enc_blocks, "encoder blocks")?;
    put_u32(&mut out, arch.dec_blocks, "decoder blocks")?;
    put_u32(&mut out, state.quantizer.codebook_size(), "codebook size")?;
    put_u32(&mut out, state.quantizer.num_layers(), "quantizer layers")?;
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&state.seed.to_le_bytes());

    for layer in state.codec.layers() {
        put_f32s(&mut out, &layer.weights);
        put_f32s(&mut out, &layer.bias);
    }
    for book in state.quantizer.layers() {
        put_f32s(&mut out, book.entries().as_slice());
        put_f32s(&mut out, book.ema_counts());
        put_f32s(&mut out, book.ema_sums().as_slice());
    }
    if state.adam.len() != state.codec.arch.conv_count() {
        return Err(Error::Contract(format!(
            "{} Adam states for {} convolutions",
            state.adam.len(),
            state.codec.arch.conv_count()
        )));
    }
    for adam in &state.adam {
        put_f32s(&mut out, &adam.first_moment);
        put_f32s(&mut out, &adam.second_moment);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("checkpoint payload is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            Error::Corrupt("checkpoint header sizes overflow".into())
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainerState> {
    if bytes.len() < 8 {
        return Err(Error::Corrupt("checkpoint shorter than its magic and version".into()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("checkpoint has bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt("checkpoint header is truncated".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let arch = ArchSpec {
        dim: r.u32()?,
        kernel: r.u32()?,
        enc_blocks: r.u32()?,
        dec_blocks: r.u32()?,
        clusters: r.u32()?,
        rvq_layers: r.u32()?,
    };
    let step = r.u64()?;
    let seed = r.u64()?;
    arch.validate()
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let (h, k, m) = (arch.dim, arch.clusters, arch.rvq_layers);
    let per_conv = arch.layer_spec().param_count();
    let expected = [
        arch.conv_count().checked_mul(per_conv),
        m.checked_mul(k).and_then(|mk| mk.checked_mul(2 * h + 1)),
        arch.conv_count().checked_mul(2 * per_conv),
    ]
    .into_iter()
    .try_fold(0usize, |acc, n| n.and_then(|n| acc.checked_add(n)))
    .and_then(|floats| floats.checked_mul(4))
    .and_then(|b| b.checked_add(HEADER_LEN))
    .ok_or_else(|| Error::Corrupt("checkpoint header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "checkpoint header implies {expected} bytes, file has {}",
            bytes.len()
        )));
    }

    let spec = arch.layer_spec();
    let mut read_layers = |count: usize| -> Result<Vec<ConvLayerParams<f32>>> {
        (0..count)
            .map(|_| {
                Ok(ConvLayerParams {
                    weights: r.f32s(spec.weight_count())?,
                    bias: r.f32s(spec.out_channels)?,
                })
            })
            .collect()
    };
    let encoder = read_layers(arch.encoder_convs())?;
    let decoder = read_layers(arch.decoder_convs())?;
    let codec = CodecParameters::from_layers(arch, encoder, decoder)?;

    let mut books = Vec::with_capacity(m);
    for _ in 0..m {
        let entries = Matrix::from_vec(k, h, r.f32s(k * h)?)?;
        let counts = r.f32s(k)?;
        let sums = Matrix::from_vec(k, h, r.f32s(k * h)?)?;
        let book = Codebook::from_parts(entries, counts, sums, DEFAULT_GAMMA, DEFAULT_COUNT_FLOOR)
            .map_err(|e| Error::Corrupt(format!("checkpoint codebook: {e}")))?;
        books.push(book);
    }
    let quantizer = RvqStack::new(books)?;

    let adam = codec
        .layers()
        .map(|_| {
            Ok(AdamState {
                first_moment: r.f32s(per_conv)?,
                second_moment: r.f32s(per_conv)?,
                step_count: step,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(r.pos, bytes.len());

    Ok(TrainerState {
        codec,
        quantizer,
        adam,
        step,
        seed,
        history: Vec::new(),
    })
}

pub fn save_checkpoint(state: &TrainerState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(state)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint. The loss history is not stored, so it comes back empty.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainerState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featureio::{Batch, Segment};
    use crate::numkernel::Rng;
    use crate::trainer::TrainingConfig;

    fn state(enc_blocks: usize, layers: usize) -> TrainerState {
        let mut rng = Rng::new(1);
        let cfg = TrainingConfig {
            clusters: 3,
            rvq_layers: layers,
            enc_blocks,
            dec_blocks: enc_blocks,
            seed: 17,
            ..TrainingConfig::default()
        };
        let batch = Batch {
            segments: vec![Segment {
                source_id: "s".into(),
                start_frame: 0,
                frames: Matrix::from_vec(10, 2, (0..20).map(|_| rng.normal() as f32).collect())
                    .unwrap(),
            }],
        };
        TrainerState::initialize(&cfg, 2, &batch).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for (blocks, layers) in [(2, 1), (1, 3), (0, 2)] {
            let mut s = state(blocks, layers);
            s.step = 0;
            let bytes = encode_checkpoint(&s).unwrap();
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, s);
            assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_checkpoint(&state(1, 2)).unwrap();
        for cut in 0..bytes.len() {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Corrupt(_))));
    }

    #[test]
    fn header_faults_are_format_errors() {
        let bytes = encode_checkpoint(&state(2, 1)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[12..16].copy_from_slice(&4u32.to_le_bytes()); // even kernel
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[24..28].copy_from_slice(&5u32.to_le_bytes()); // K disagrees with payload
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Corrupt(_))));
    }
}
