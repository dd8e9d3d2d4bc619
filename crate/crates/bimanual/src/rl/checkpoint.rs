//! Versioned binary checkpoints with an integrity checksum.
//!
//! Layout: magic, format version, JSON-encoded config (length-prefixed),
//! policy net, log stds, value net, rng state, then a SHA-256 digest of
//! everything before it. All integers little-endian, all floats f64 bits.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::mlp::{Layer, Mlp};
use super::ppo::{ActorCritic, PpoConfig};

const MAGIC: &[u8; 4] = b"BMCK";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checksum mismatch, file corrupted")]
    BadChecksum,
    #[error("malformed config block: {0}")]
    BadConfig(#[from] serde_json::Error),
}

/// Everything needed to resume training determinism-sensitive state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: PpoConfig,
    pub params: ActorCritic,
    pub rng: ChaCha8Rng,
}

fn write_array2(out: &mut Vec<u8>, a: &Array2<f64>) {
    out.write_u64::<LittleEndian>(a.nrows() as u64).unwrap();
    out.write_u64::<LittleEndian>(a.ncols() as u64).unwrap();
    for v in a.iter() {
        out.write_f64::<LittleEndian>(*v).unwrap();
    }
}

fn write_array1(out: &mut Vec<u8>, a: &Array1<f64>) {
    out.write_u64::<LittleEndian>(a.len() as u64).unwrap();
    for v in a.iter() {
        out.write_f64::<LittleEndian>(*v).unwrap();
    }
}

fn write_mlp(out: &mut Vec<u8>, mlp: &Mlp) {
    out.write_u32::<LittleEndian>(mlp.layers.len() as u32).unwrap();
    for l in &mlp.layers {
        write_array2(out, &l.w);
        write_array1(out, &l.b);
    }
}

fn read_array2(r: &mut Cursor<&[u8]>) -> Result<Array2<f64>, CheckpointError> {
    let rows = r.read_u64::<LittleEndian>()? as usize;
    let cols = r.read_u64::<LittleEndian>()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches data length"))
}

fn read_array1(r: &mut Cursor<&[u8]>) -> Result<Array1<f64>, CheckpointError> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(Array1::from_vec(data))
}

fn read_mlp(r: &mut Cursor<&[u8]>) -> Result<Mlp, CheckpointError> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let w = read_array2(r)?;
        let b = read_array1(r)?;
        layers.push(Layer { w, b });
    }
    Ok(Mlp { layers })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).unwrap();

        let config = serde_json::to_vec(&self.config).expect("config serializes");
        out.write_u64::<LittleEndian>(config.len() as u64).unwrap();
        out.extend_from_slice(&config);

        write_mlp(&mut out, &self.params.policy);
        write_array1(&mut out, &self.params.log_std);
        write_mlp(&mut out, &self.params.value);

        out.extend_from_slice(&self.rng.get_seed());
        out.write_u64::<LittleEndian>(self.rng.get_stream()).unwrap();
        out.write_u128::<LittleEndian>(self.rng.get_word_pos()).unwrap();

        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 32 {
            return Err(CheckpointError::BadMagic);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::BadChecksum);
        }

        let mut r = Cursor::new(body);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }

        let config_len = r.read_u64::<LittleEndian>()? as usize;
        let mut config_bytes = vec![0u8; config_len];
        r.read_exact(&mut config_bytes)?;
        let config: PpoConfig = serde_json::from_slice(&config_bytes)?;

        let policy = read_mlp(&mut r)?;
        let log_std = read_array1(&mut r)?;
        let value = read_mlp(&mut r)?;

        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let stream = r.read_u64::<LittleEndian>()?;
        let word_pos = r.read_u128::<LittleEndian>()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        Ok(Checkpoint {
            config,
            params: ActorCritic {
                policy,
                log_std,
                value,
            },
            rng,
        })
    }

    /// Atomic save: write to a sibling temp file, then rename into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
