//! Binary checkpoints: a JSON header echoing the configuration, then raw
//! little-endian `f64` tensors for parameters and optimizer moments.
//!
//! Layout: magic, format version, header length and JSON bytes, step, then
//! one tensor section for the parameters (with names) and, if present, two
//! for the Adam moments. Values are stored bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{DurationConfig, ModelConfig, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

const MAGIC: &[u8; 8] = b"MATMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointModel {
    Main { variant: Variant, model: ModelConfig },
    Duration { model: DurationConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: CheckpointModel,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: ParamStore,
    pub v: ParamStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Optimizer steps taken.
    pub step: usize,
    pub params: ParamStore,
    pub moments: Option<AdamMoments>,
}

fn write_tensors<W: Write>(w: &mut W, store: &ParamStore, with_names: bool) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for (name, t) in store.names().iter().zip(store.tensors()) {
        if with_names {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
        }
        w.write_u64::<LittleEndian>(t.nrows() as u64)?;
        w.write_u64::<LittleEndian>(t.ncols() as u64)?;
        for &x in t.iter() {
            w.write_f64::<LittleEndian>(x)?;
        }
    }
    Ok(())
}

fn read_tensors<R: Read>(r: &mut R, names: Option<&[String]>) -> std::result::Result<ParamStore, String> {
    let n = r.read_u32::<LittleEndian>().map_err(|e| e.to_string())? as usize;
    if let Some(names) = names {
        if names.len() != n {
            return Err(format!("moment section has {n} tensors, parameters have {}", names.len()));
        }
    }
    let mut store = ParamStore::new();
    for i in 0..n {
        let name = match names {
            Some(names) => names[i].clone(),
            None => {
                let len = r.read_u32::<LittleEndian>().map_err(|e| e.to_string())? as usize;
                let mut buf = vec![0u8; len];
                r.read_exact(&mut buf).map_err(|e| e.to_string())?;
                String::from_utf8(buf).map_err(|e| e.to_string())?
            }
        };
        let rows = r.read_u64::<LittleEndian>().map_err(|e| e.to_string())? as usize;
        let cols = r.read_u64::<LittleEndian>().map_err(|e| e.to_string())? as usize;
        let len = rows.checked_mul(cols).filter(|&l| l <= 1 << 32).ok_or("tensor too large")?;
        let mut data = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(|e| e.to_string())?;
        let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())?;
        store.add(name, t);
    }
    Ok(store)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(path)?);
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
            let header = serde_json::to_vec(&self.header).map_err(std::io::Error::other)?;
            w.write_u64::<LittleEndian>(header.len() as u64)?;
            w.write_all(&header)?;
            w.write_u64::<LittleEndian>(self.step as u64)?;
            write_tensors(&mut w, &self.params, true)?;
            match &self.moments {
                Some(m) => {
                    w.write_u8(1)?;
                    write_tensors(&mut w, &m.m, false)?;
                    write_tensors(&mut w, &m.v, false)?;
                }
                None => w.write_u8(0)?,
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let fail = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| fail(e.to_string()))?;
        if &magic != MAGIC {
            return Err(fail("not a checkpoint file".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|e| fail(e.to_string()))?;
        if version != FORMAT_VERSION {
            return Err(fail(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let header_len = r.read_u64::<LittleEndian>().map_err(|e| fail(e.to_string()))? as usize;
        if header_len > 1 << 20 {
            return Err(fail("header too large".into()));
        }
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(|e| fail(e.to_string()))?;
        let header: CheckpointHeader = serde_json::from_slice(&header).map_err(|e| fail(format!("header: {e}")))?;
        let step = r.read_u64::<LittleEndian>().map_err(|e| fail(e.to_string()))? as usize;
        let params = read_tensors(&mut r, None).map_err(&fail)?;
        let has_moments = r.read_u8().map_err(|e| fail(e.to_string()))?;
        let moments = match has_moments {
            0 => None,
            1 => {
                let m = read_tensors(&mut r, Some(params.names())).map_err(&fail)?;
                let v = read_tensors(&mut r, Some(params.names())).map_err(&fail)?;
                if !params.same_layout(&m) || !params.same_layout(&v) {
                    return Err(fail("optimizer moments do not match parameter shapes".into()));
                }
                Some(AdamMoments { m, v })
            }
            x => return Err(fail(format!("bad moment flag {x}"))),
        };
        Ok(Self {
            header,
            step,
            params,
            moments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut cfg = ModelConfig::toy();
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.n_layers = 1;
        let net = Network::new(&cfg, 0).unwrap();
        let mut m = net.params().zeros_like();
        m.add_scaled(net.params(), 0.1);
        let ck = Checkpoint {
            header: CheckpointHeader {
                model: CheckpointModel::Main {
                    variant: Variant::Feats,
                    model: cfg,
                },
                train: TrainConfig::toy(),
            },
            step: 42,
            params: net.params().clone(),
            moments: Some(AdamMoments {
                m: m.clone(),
                v: m,
            }),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.tensors().iter().zip(ck.params.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"hello world").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
        let ck = Checkpoint {
            header: CheckpointHeader {
                model: CheckpointModel::Duration {
                    model: DurationConfig::toy(),
                },
                train: TrainConfig::duration_toy(),
            },
            step: 0,
            params: crate::nn::DurationNet::new(&DurationConfig::toy(), 0).unwrap().params().clone(),
            moments: None,
        };
        ck.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
