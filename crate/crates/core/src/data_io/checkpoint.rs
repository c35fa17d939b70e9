//! Versioned binary checkpoints.
//!
//! All integers are little-endian.
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `DSTD` |
//! | 4 | format version (`u32`, currently 1) |
//! | 4 | flags (`u32`, bit 0: masked-LM head stored) |
//! | 24 | layers, hidden, feedforward, heads, vocab size, max positions (`u32` each) |
//! | 4 | dropout (`f32`) |
//! | 4 + ... | vocab: token count (`u32`), then per token its byte length (`u32`) and UTF-8 bytes |
//! | 8 | payload value count (`u64`) |
//! | 4n | payload: `f32` values in canonical tensor order |
//! | 4 | CRC-32 of every preceding byte |
//!
//! When the masked-LM head is not stored it is omitted from the payload and
//! loads as zeros.

use std::path::Path;

use super::{write_atomic, DataError};
use crate::encoder::{count_params, EncoderConfig, ModelParams};
use crate::tokenizer::Vocab;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DSTD";
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_MLM_HEAD: u32 = 1;
/// Magic, version, flags, config.
const FIXED_HEADER: u64 = 4 + 4 + 4 + 24 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    /// Whether the masked-LM head was read from the file.
    pub has_mlm_head: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaveOptions {
    pub mlm_head: bool,
}

impl Default for SaveOptions {
    fn default() -> Self {
        Self { mlm_head: true }
    }
}

fn vocab_block_len(vocab: &Vocab) -> u64 {
    4 + vocab.tokens().iter().map(|t| 4 + t.len() as u64).sum::<u64>()
}

fn stored_values(config: &EncoderConfig, mlm_head: bool) -> u64 {
    let count = count_params(config);
    count.body + count.scorer_head + if mlm_head { count.mlm_head } else { 0 }
}

/// Exact file size for these contents.
pub fn checkpoint_len(config: &EncoderConfig, vocab: &Vocab, options: SaveOptions) -> u64 {
    FIXED_HEADER + vocab_block_len(vocab) + 8 + 4 * stored_values(config, options.mlm_head) + 4
}

/// File size without the vocabulary block, for sizing a configuration before
/// a vocabulary exists.
pub fn projected_checkpoint_bytes(config: &EncoderConfig, options: SaveOptions) -> u64 {
    FIXED_HEADER + 8 + 4 * stored_values(config, options.mlm_head) + 4
}

/// Whether canonical tensor `index` of `count` is part of the masked-LM head,
/// which sits just before the two scorer tensors.
fn is_mlm_tensor(index: usize, count: usize) -> bool {
    index + 4 == count || index + 3 == count
}

/// CRC-32 over the little-endian bytes of every parameter.
pub fn payload_checksum(params: &ModelParams) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for t in params.tensors() {
        for x in &t.data {
            hasher.update(&x.to_le_bytes());
        }
    }
    hasher.finalize()
}

fn u32_of(v: usize, what: &str) -> Result<u32, DataError> {
    u32::try_from(v).map_err(|_| DataError::MalformedCheckpoint(format!("{what} {v} exceeds u32")))
}

pub fn encode_checkpoint(params: &ModelParams, vocab: &Vocab, options: SaveOptions) -> Result<Vec<u8>, DataError> {
    let c = &params.config;
    c.validate()?;
    if c.vocab_size != vocab.len() {
        return Err(DataError::MalformedCheckpoint(format!(
            "config vocab size {} differs from vocabulary length {}",
            c.vocab_size,
            vocab.len()
        )));
    }
    let mut out = Vec::with_capacity(checkpoint_len(c, vocab, options) as usize);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(if options.mlm_head { FLAG_MLM_HEAD } else { 0 }).to_le_bytes());
    for (v, name) in [
        (c.layers, "layers"),
        (c.hidden, "hidden"),
        (c.feedforward, "feedforward"),
        (c.heads, "heads"),
        (c.vocab_size, "vocab size"),
        (c.max_positions, "max positions"),
    ] {
        out.extend_from_slice(&u32_of(v, name)?.to_le_bytes());
    }
    out.extend_from_slice(&c.dropout.to_le_bytes());
    out.extend_from_slice(&u32_of(vocab.len(), "vocab size")?.to_le_bytes());
    for token in vocab.tokens() {
        out.extend_from_slice(&u32_of(token.len(), "token length")?.to_le_bytes());
        out.extend_from_slice(token.as_bytes());
    }
    let all = params.tensors();
    let n = all.len();
    let tensors: Vec<_> = all
        .into_iter()
        .enumerate()
        .filter(|(i, _)| options.mlm_head || !is_mlm_tensor(*i, n))
        .map(|(_, t)| t)
        .collect();
    let count: usize = tensors.iter().map(|t| t.len()).sum();
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for t in tensors {
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| DataError::MalformedCheckpoint("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, DataError> {
    if bytes.len() < 8 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(DataError::VersionUnsupported(version));
    }
    if bytes.len() < FIXED_HEADER as usize + 4 {
        return Err(DataError::MalformedCheckpoint("truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DataError::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 8 };
    let flags = r.u32()?;
    if flags & !FLAG_MLM_HEAD != 0 {
        return Err(DataError::MalformedCheckpoint(format!("unknown flags {flags:#x}")));
    }
    let has_mlm_head = flags & FLAG_MLM_HEAD != 0;
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let config = EncoderConfig::new(dims[0], dims[1], dims[2], dims[3], dims[4], dims[5]).with_dropout(r.f32()?);
    config.validate()?;

    let n_tokens = r.u32()? as usize;
    if n_tokens != config.vocab_size {
        return Err(DataError::MalformedCheckpoint(format!(
            "vocabulary has {n_tokens} tokens but config says {}",
            config.vocab_size
        )));
    }
    let mut tokens = Vec::with_capacity(n_tokens.min(1 << 20));
    for _ in 0..n_tokens {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        let token = std::str::from_utf8(raw).map_err(|_| DataError::MalformedCheckpoint("token is not UTF-8".into()))?;
        tokens.push(token.to_string());
    }
    let vocab = Vocab::from_tokens(tokens)?;

    let count = r.u64()?;
    let expected = stored_values(&config, has_mlm_head);
    if count != expected {
        return Err(DataError::MalformedCheckpoint(format!(
            "payload has {count} values, config implies {expected}"
        )));
    }
    if (body.len() - r.pos) as u64 != 4 * count {
        return Err(DataError::MalformedCheckpoint("payload length disagrees with value count".into()));
    }
    let mut params = ModelParams::zeros(&config);
    let mut tensors = params.tensors_mut();
    let n = tensors.len();
    for (i, t) in tensors.iter_mut().enumerate() {
        if !has_mlm_head && is_mlm_tensor(i, n) {
            continue;
        }
        for x in t.data.iter_mut() {
            *x = r.f32()?;
        }
    }
    Ok(Checkpoint {
        params,
        vocab,
        has_mlm_head,
    })
}

pub fn save_checkpoint(params: &ModelParams, vocab: &Vocab, path: &Path) -> Result<(), DataError> {
    save_checkpoint_with(params, vocab, path, SaveOptions::default())
}

/// Atomic: the file at `path` is either the old one or the complete new one.
pub fn save_checkpoint_with(params: &ModelParams, vocab: &Vocab, path: &Path, options: SaveOptions) -> Result<(), DataError> {
    write_atomic(path, &encode_checkpoint(params, vocab, options)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_checkpoint(&bytes)
}
