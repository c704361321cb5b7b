//! Binary checkpoints: architecture, parameter values and training RNG state.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "MDAGCKPT" | version u32
//! config_len u32 | config text | sha256(config text)
//! n_params u32 | per param: name_len u32, name, rank u32, dims u64*rank, values f64*numel
//! rng seed [u8; 32] | rng stream u64 | rng word_pos u128
//! sha256 of everything above
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::nn::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"MDAGCKPT";
const VERSION: u32 = 1;

/// Resumable position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub rng: RngState,
}

impl Checkpoint {
    /// Errors naming the first architecture field that differs from `expected`.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        let ours = self.params.config.canonical();
        let theirs = expected.canonical();
        for (a, b) in ours.lines().zip(theirs.lines()) {
            if a != b {
                let (key, found) = a.split_once('=').unwrap_or((a, ""));
                let wanted = b.split_once('=').map_or("", |(_, v)| v);
                return Err(Error::Checkpoint(format!(
                    "config mismatch on `{key}`: checkpoint has {found}, expected {wanted}"
                )));
            }
        }
        Ok(())
    }
}

pub fn config_fingerprint(config: &ModelConfig) -> [u8; 32] {
    Sha256::digest(config.canonical().as_bytes()).into()
}

pub fn encode_checkpoint(params: &ModelParams, rng: &RngState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = params.config.canonical();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&config_fingerprint(&params.config));
    out.extend_from_slice(&(params.store.len() as u32).to_le_bytes());
    for (name, value) in params.store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&rng.seed);
    out.extend_from_slice(&rng.stream.to_le_bytes());
    out.extend_from_slice(&rng.word_pos.to_le_bytes());
    let digest: [u8; 32] = Sha256::digest(&out).into();
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams, rng: &RngState) -> Result<()> {
    fs::write(path, encode_checkpoint(params, rng))?;
    Ok(())
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
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

/// Parses and verifies a checkpoint. Nothing is returned unless the checksum,
/// fingerprint and parameter layout all check out.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch (file is corrupt)".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let text = r.string()?;
    let fingerprint: [u8; 32] = r.array()?;
    if Sha256::digest(text.as_bytes()).as_slice() != fingerprint {
        return Err(Error::Checkpoint("config fingerprint mismatch".into()));
    }
    let config = ModelConfig::parse_canonical(&text)?;
    let template = init_params(&config, 0)?;

    let count = r.u32()?;
    if count != template.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} parameters, architecture needs {}",
            template.store.len()
        )));
    }
    let mut store = ParamStore::new();
    for (want_name, want) in template.store.iter() {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(r.array()?) as usize))
            .collect::<Result<Vec<_>>>()?;
        if name != want_name || shape != want.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` {shape:?} does not match `{want_name}` {:?}",
                want.shape()
            )));
        }
        let data = (0..want.numel())
            .map(|_| Ok(f64::from_le_bytes(r.array()?)))
            .collect::<Result<Vec<_>>>()?;
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    let rng = RngState {
        seed: r.array()?,
        stream: u64::from_le_bytes(r.array()?),
        word_pos: u128::from_le_bytes(r.array()?),
    };
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after rng state".into()));
    }
    Ok(Checkpoint {
        params: ModelParams { config, store },
        rng,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
