//! Token sequences and their binary file.
//!
//! Layout (little-endian): magic `RPCT` | version `u32` = 1 | K `u32` |
//! M `u32` | T `u32` | M·T `u32` indices, layer-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TOKEN_MAGIC: &[u8; 4] = b"RPCT";
pub const TOKEN_VERSION: u32 = 1;

/// `M × T` token indices in `[0, K)`, stored layer-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    codebook_size: u32,
    num_layers: usize,
    len: usize,
    tokens: Vec<u32>,
}

impl TokenSequence {
    pub fn new(codebook_size: u32, num_layers: usize, len: usize, tokens: Vec<u32>) -> Result<Self> {
        if codebook_size == 0 || num_layers == 0 {
            return Err(Error::Contract(
                "token sequence needs K >= 1 and M >= 1".into(),
            ));
        }
        if tokens.len() != num_layers * len {
            return Err(Error::Contract(format!(
                "{} tokens do not fill {num_layers}x{len}",
                tokens.len()
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t >= codebook_size) {
            return Err(Error::Data(format!(
                "token {bad} outside codebook of size {codebook_size}"
            )));
        }
        Ok(Self {
            codebook_size,
            num_layers,
            len,
            tokens,
        })
    }

    pub fn from_layers(codebook_size: u32, layers: Vec<Vec<u32>>) -> Result<Self> {
        let len = layers.first().map_or(0, Vec::len);
        if layers.iter().any(|l| l.len() != len) {
            return Err(Error::Contract("token layers differ in length".into()));
        }
        let m = layers.len();
        Self::new(codebook_size, m, len, layers.concat())
    }

    pub fn codebook_size(&self) -> u32 {
        self.codebook_size
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn layer(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.len..(i + 1) * self.len]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.tokens
    }
}

pub fn encode_token_bytes(tokens: &TokenSequence) -> Result<Vec<u8>> {
    let m = u32::try_from(tokens.num_layers)
        .map_err(|_| Error::Data("too many token layers".into()))?;
    let t = u32::try_from(tokens.len).map_err(|_| Error::Data("token sequence too long".into()))?;
    let mut out = Vec::with_capacity(20 + 4 * tokens.tokens.len());
    out.extend_from_slice(TOKEN_MAGIC);
    for w in [TOKEN_VERSION, tokens.codebook_size, m, t] {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for &tok in &tokens.tokens {
        out.extend_from_slice(&tok.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_token_bytes(bytes: &[u8]) -> Result<TokenSequence> {
    if bytes.len() < 20 {
        return Err(Error::Corrupt(format!(
            "token file of {} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != TOKEN_MAGIC {
        return Err(Error::Format("token file has bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != TOKEN_VERSION {
        return Err(Error::Format(format!("unsupported token version {}", word(4))));
    }
    let (k, m, t) = (word(8), word(12) as usize, word(16) as usize);
    let expected = m
        .checked_mul(t)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(20))
        .ok_or_else(|| Error::Corrupt("token header overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "token header promises {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let tokens = bytes[20..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TokenSequence::new(k, m, t, tokens)
}

pub fn write_token_file(path: impl AsRef<Path>, tokens: &TokenSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_token_bytes(tokens)?).map_err(|e| Error::io(path, e))
}

pub fn read_token_file(path: impl AsRef<Path>) -> Result<TokenSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_token_bytes(&bytes)
}
