//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes   "JPARSECK"
//! version   u32
//! hlen      u64       length of the JSON header
//! header    hlen bytes
//! payload   for each parameter in header order: value, m, v as f64
//! digest    32 bytes  SHA-256 of everything above
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParameterStore;
use crate::error::{Error, Result, Shape};
use crate::lexicon::Lexicon;
use crate::network::{Hyperparams, JointModel};
use crate::trainer::TrainProgress;

pub const MAGIC: &[u8; 8] = b"JPARSECK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    hyper: Hyperparams,
    lexicon: Lexicon,
    params: Vec<(String, Shape)>,
    seed: u64,
    adam_step: u64,
    progress: Option<TrainProgress>,
}

/// A model plus, optionally, the training progress needed to resume.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: JointModel,
    pub progress: Option<TrainProgress>,
}

pub fn encode(model: &JointModel, progress: Option<&TrainProgress>) -> Result<Vec<u8>> {
    let store = model.params();
    let header = Header {
        hyper: model.hyper().clone(),
        lexicon: model.lexicon().clone(),
        params: store
            .iter()
            .map(|(_, p)| (p.name().to_owned(), p.shape()))
            .collect(),
        seed: store.seed(),
        adam_step: store.step_count(),
        progress: progress.cloned(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 24 * store.num_weights() + 52);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for buf in [p.value(), p.first_moment(), p.second_moment()] {
            for x in buf {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic bytes)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    if bytes.len() < 20 + 32 {
        return Err(corrupt("file truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])
        .map_err(|e| corrupt(format!("unreadable header: {e}")))?;

    let total: usize = header.params.iter().map(|(_, s)| 3 * s.len()).sum();
    let payload = &body[header_end..];
    if payload.len() != 8 * total {
        return Err(corrupt(format!(
            "payload holds {} bytes, header describes {}",
            payload.len(),
            8 * total
        )));
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut store = ParameterStore::new(header.seed);
    for (name, shape) in &header.params {
        let n = shape.len();
        let value: Vec<f64> = floats.by_ref().take(n).collect();
        let id = store.add_with_values(name, *shape, value)?;
        let p = store.param_mut(id);
        p.m = floats.by_ref().take(n).collect();
        p.v = floats.by_ref().take(n).collect();
    }
    store.set_step_count(header.adam_step);
    let model = JointModel::from_parts(header.hyper, header.lexicon, store)?;
    Ok(Checkpoint {
        model,
        progress: header.progress,
    })
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed save never leaves a partial file behind.
pub fn save(
    path: impl AsRef<Path>,
    model: &JointModel,
    progress: Option<&TrainProgress>,
) -> Result<()> {
    let bytes = encode(model, progress)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::{read_treebank, Sentence};

    fn model() -> (JointModel, Vec<Sentence>) {
        let text =
            "1\tDogs\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_\n2\tbark\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n";
        let sents = read_treebank(text.as_bytes()).unwrap();
        let h = Hyperparams {
            word_dim: 3,
            char_dim: 2,
            tag_dim: 2,
            lstm_layers: 1,
            lstm_hidden: 3,
            mlp_hidden: 4,
            ..Hyperparams::default()
        };
        let lex = Lexicon::build(&sents, h.tag_column).unwrap();
        (JointModel::new(h, lex).unwrap(), sents)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (m, sents) = model();
        let bytes = encode(&m, None).unwrap();
        let back = decode(&bytes).unwrap().model;
        assert_eq!(back.hyper(), m.hyper());
        assert_eq!(back.lexicon(), m.lexicon());
        for ((_, a), (_, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name(), b.name());
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.value()), bits(b.value()));
        }
        assert_eq!(encode(&back, None).unwrap(), bytes);
        assert_eq!(
            back.predict(&sents[0]).unwrap(),
            m.predict(&sents[0]).unwrap()
        );
    }

    #[test]
    fn refuses_other_versions() {
        let (m, _) = model();
        let mut bytes = encode(&m, None).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::VersionMismatch {
                expected: 1,
                found: 2
            })
        ));
    }

    #[test]
    fn detects_corruption() {
        let (m, _) = model();
        let bytes = encode(&m, None).unwrap();
        let mut flipped = bytes.clone();
        let k = bytes.len() - 40;
        flipped[k] ^= 1;
        assert!(
            matches!(decode(&flipped), Err(Error::CorruptCheckpoint(m)) if m.contains("checksum"))
        );
        assert!(matches!(
            decode(&bytes[..bytes.len() / 2]),
            Err(Error::CorruptCheckpoint(_))
        ));
        assert!(matches!(decode(b"hello"), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn atomic_save_and_load() {
        let (m, _) = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save(&path, &m, None).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(
            encode(&back.model, None).unwrap(),
            encode(&m, None).unwrap()
        );
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(save(dir.path().join("missing/m.bin"), &m, None).is_err());
    }
}
