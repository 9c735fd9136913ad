//! On-disk corpus directories: `world.json` with the toy world spec plus one
//! `<split>.jsonl` manifest per split.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::manifest::{load_manifest, save_manifest, ManifestSchema};
use crate::toy_world::{gen_corpus, ToyWorldSpec};
use crate::types::{Split, Utterance};

pub const WORLD_FILE: &str = "world.json";

pub fn manifest_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.as_str()))
}

impl ToyWorldSpec {
    pub fn schema(&self) -> ManifestSchema {
        ManifestSchema {
            n_codebooks: self.n_codebooks,
            codebook_size: self.codebook_size,
            n_phonemes: self.n_phonemes,
            n_speakers: self.n_speakers,
            semantic_vocab: self.n_phonemes,
            semantic_dim: self.n_phonemes,
        }
    }

    /// Checks that `model` can be trained on this world's data.
    pub fn check_model(&self, model: &ModelConfig) -> Result<()> {
        let expect = [
            ("n_codebooks", self.n_codebooks, model.n_codebooks),
            ("codebook_size", self.codebook_size, model.codebook_size),
            ("n_phonemes", self.n_phonemes, model.n_phonemes),
            ("speaker_dim", self.speaker_dim, model.speaker_dim),
            ("semantic_vocab", self.n_phonemes, model.semantic_vocab),
            ("semantic_dim", self.n_phonemes, model.semantic_dim),
        ];
        for (name, world, cfg) in expect {
            if world != cfg {
                return Err(Error::invalid(
                    "model config",
                    format!("{name} = {cfg} but the corpus world has {world}"),
                ));
            }
        }
        Ok(())
    }
}

/// Generates and writes every split; `sizes` gives utterances per split.
pub fn write_corpus(dir: &Path, spec: &ToyWorldSpec, sizes: &[(Split, usize)]) -> Result<()> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let world = dir.join(WORLD_FILE);
    fs::write(&world, serde_json::to_string_pretty(spec)?).map_err(|e| Error::io(&world, e))?;
    for &(split, n) in sizes {
        let utts = gen_corpus(&ToyWorldSpec { n_utterances: n, ..spec.clone() }, split)?;
        save_manifest(&manifest_path(dir, split), &utts)?;
    }
    Ok(())
}

pub fn load_world(dir: &Path) -> Result<ToyWorldSpec> {
    let path = dir.join(WORLD_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let spec: ToyWorldSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_split(dir: &Path, spec: &ToyWorldSpec, split: Split) -> Result<Vec<Utterance>> {
    let utts = load_manifest(&manifest_path(dir, split), &spec.schema())?;
    if let Some(u) = utts.iter().find(|u| u.split != split) {
        return Err(Error::invalid(
            "manifest",
            format!("utterance {} is tagged {} inside {}.jsonl", u.id, u.split.as_str(), split.as_str()),
        ));
    }
    Ok(utts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToyWorldSpec::toy();
        write_corpus(dir.path(), &spec, &[(Split::Train, 5), (Split::Test, 2)]).unwrap();
        let back = load_world(dir.path()).unwrap();
        assert_eq!(back, spec);
        let train = load_split(dir.path(), &back, Split::Train).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(load_split(dir.path(), &back, Split::Test).unwrap().len(), 2);
        spec.check_model(&ModelConfig::toy()).unwrap();
        let other = ModelConfig {
            codebook_size: 128,
            ..ModelConfig::toy()
        };
        assert!(spec.check_model(&other).is_err());
    }
}
