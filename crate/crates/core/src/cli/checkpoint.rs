//! `WGC1` checkpoints: magic, `u32` version, `u32` manifest length, a text
//! manifest, then every tensor as a `WGT1` record in manifest order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{EntryKind, ParamStore};
use crate::tensor::{read_tensor, write_tensor, RngState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WGC1";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_MANIFEST: u32 = 1 << 24;

/// Saved Adam state for one store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub label: String,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Canonical run configuration text.
    pub config: String,
    pub config_hash: String,
    /// `[C, H, W]` of the images the model was built for.
    pub image: [usize; 3],
    /// Completed epochs (VAE) or generator steps (GAN).
    pub progress: u64,
    pub rng: RngState,
    pub stores: Vec<(String, ParamStore)>,
    pub optimizers: Vec<OptimState>,
}

fn shape_text(s: &[usize]) -> String {
    if s.is_empty() {
        "scalar".into()
    } else {
        s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(format!("checkpoint: {}", msg.into()))
}

/// Manifest description of one store entry: kind, name, shape text.
type EntryLayout = (EntryKind, String, String);

impl Checkpoint {
    pub fn store(&self, label: &str) -> Option<&ParamStore> {
        self.stores.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }

    pub fn optimizer(&self, label: &str) -> Option<&OptimState> {
        self.optimizers.iter().find(|o| o.label == label)
    }

    fn manifest(&self) -> String {
        let mut m = String::new();
        m.push_str(&format!("config_hash={}\n", self.config_hash));
        m.push_str(&format!("image={}\n", shape_text(&self.image)));
        m.push_str(&format!("progress={}\n", self.progress));
        m.push_str(&format!("rng_seed={}\nrng_word_pos={}\n", self.rng.seed, self.rng.word_pos));
        for line in self.config.lines() {
            m.push_str(&format!("config {line}\n"));
        }
        for (label, store) in &self.stores {
            m.push_str(&format!("store {label} {}\n", store.len()));
            for e in store.entries() {
                let kind = if e.kind == EntryKind::Param { "param" } else { "buffer" };
                m.push_str(&format!("entry {kind} {} {}\n", e.name, shape_text(e.value.shape())));
            }
        }
        for o in &self.optimizers {
            m.push_str(&format!("optim {} {} {}\n", o.label, o.t, o.m.len()));
        }
        m
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let manifest = self.manifest();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(manifest.len() as u32).to_le_bytes())?;
        w.write_all(manifest.as_bytes())?;
        for (_, store) in &self.stores {
            for e in store.entries() {
                write_tensor(w, &e.value)?;
            }
        }
        for o in &self.optimizers {
            for t in o.m.iter().chain(&o.v) {
                write_tensor(w, t)?;
            }
        }
        Ok(())
    }

    /// Writes to a temporary sibling and renames, so an interrupted save
    /// leaves the previous file intact.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write(&mut w)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != CHECKPOINT_MAGIC {
            return Err(bad(format!("bad magic {:?}", String::from_utf8_lossy(&head[..4]))));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("version {version}, this build reads version {CHECKPOINT_VERSION}")));
        }
        let len = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
        if len > MAX_MANIFEST {
            return Err(bad("manifest too large"));
        }
        let mut text = vec![0u8; len as usize];
        r.read_exact(&mut text).map_err(|_| bad("truncated manifest"))?;
        let text = String::from_utf8(text).map_err(|_| bad("manifest is not UTF-8"))?;

        let mut ck = Checkpoint {
            config: String::new(),
            config_hash: String::new(),
            image: [0; 3],
            progress: 0,
            rng: RngState { seed: 0, word_pos: 0 },
            stores: Vec::new(),
            optimizers: Vec::new(),
        };
        let mut layouts: Vec<(String, Vec<EntryLayout>)> = Vec::new();
        let mut optims: Vec<(String, u64, usize)> = Vec::new();
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("bad number {s:?}")));
        for line in text.lines() {
            if let Some(c) = line.strip_prefix("config ") {
                ck.config.push_str(c);
                ck.config.push('\n');
                continue;
            }
            let words: Vec<&str> = line.split(' ').collect();
            match words.as_slice() {
                [kv] => match kv.split_once('=') {
                    Some(("config_hash", v)) => ck.config_hash = v.to_string(),
                    Some(("progress", v)) => ck.progress = num(v)?,
                    Some(("image", v)) => {
                        let dims: Vec<usize> = v.split('x').map(|d| num(d).map(|d| d as usize)).collect::<Result<_>>()?;
                        ck.image = dims.try_into().map_err(|_| bad(format!("image shape {v:?}")))?;
                    }
                    Some(("rng_seed", v)) => ck.rng.seed = num(v)?,
                    Some(("rng_word_pos", v)) => {
                        ck.rng.word_pos = v.parse().map_err(|_| bad("bad rng position"))?
                    }
                    _ => return Err(bad(format!("unrecognized manifest line {line:?}"))),
                },
                ["store", label, _] => layouts.push((label.to_string(), Vec::new())),
                ["entry", kind, name, shape] => {
                    let kind = match *kind {
                        "param" => EntryKind::Param,
                        "buffer" => EntryKind::Buffer,
                        _ => return Err(bad(format!("entry kind {kind:?}"))),
                    };
                    layouts
                        .last_mut()
                        .ok_or_else(|| bad("entry before store"))?
                        .1
                        .push((kind, name.to_string(), shape.to_string()));
                }
                ["optim", label, t, n] => optims.push((label.to_string(), num(t)?, num(n)? as usize)),
                _ => return Err(bad(format!("unrecognized manifest line {line:?}"))),
            }
        }
        for (label, entries) in layouts {
            let mut store = ParamStore::new();
            for (kind, name, shape) in entries {
                let t = read_tensor(r)?;
                if shape_text(t.shape()) != shape {
                    return Err(bad(format!("{name}: stored shape {:?} vs manifest {shape}", t.shape())));
                }
                store.insert(name, kind, t)?;
            }
            ck.stores.push((label, store));
        }
        for (label, t, n) in optims {
            let m = (0..n).map(|_| read_tensor(r)).collect::<Result<Vec<_>>>()?;
            let v = (0..n).map(|_| read_tensor(r)).collect::<Result<Vec<_>>>()?;
            ck.optimizers.push(OptimState { label, t, m, v });
        }
        Ok(ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path.as_ref())?);
        Self::read(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(3);
        let mut store = ParamStore::new();
        store.insert("a.weight", EntryKind::Param, rng.sample_normal(&[2, 3])).unwrap();
        store.insert("a.running_mean", EntryKind::Buffer, rng.sample_normal(&[3])).unwrap();
        store.insert("s", EntryKind::Param, Tensor::scalar(1.5)).unwrap();
        rng.sample_normal(&[5]);
        Checkpoint {
            config: "model = vae\nseed = 1\n".into(),
            config_hash: "abc123".into(),
            image: [1, 8, 8],
            progress: 7,
            rng: rng.state(),
            optimizers: vec![OptimState {
                label: "model".into(),
                t: 12,
                m: vec![Tensor::ones(&[2, 3]), Tensor::scalar(0.5)],
                v: vec![Tensor::full(&[2, 3], 2.0), Tensor::scalar(0.25)],
            }],
            stores: vec![("model".into(), store)],
        }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_magic_version_and_truncation() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[1] = b'X';
        assert!(matches!(Checkpoint::read(&mut bad_magic.as_slice()), Err(Error::Format(_))));
        let mut bad_version = buf.clone();
        bad_version[4] = 9;
        let err = Checkpoint::read(&mut bad_version.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        let short = &buf[..buf.len() - 3];
        assert!(Checkpoint::read(&mut &short[..]).is_err());
    }
}
