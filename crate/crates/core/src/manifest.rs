//! JSON Lines corpus manifests, one [`Utterance`] per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::types::{PhonemeSeq, Rate, Split, TokenGrid, Utterance};

/// Alphabet sizes a manifest is validated against.
#[derive(Debug, Clone, Copy)]
pub struct ManifestSchema {
    pub n_codebooks: usize,
    pub codebook_size: usize,
    pub n_phonemes: usize,
    pub n_speakers: usize,
    pub semantic_vocab: usize,
    pub semantic_dim: usize,
}

impl From<&ModelConfig> for ManifestSchema {
    fn from(cfg: &ModelConfig) -> Self {
        Self {
            n_codebooks: cfg.n_codebooks,
            codebook_size: cfg.codebook_size,
            n_phonemes: cfg.n_phonemes,
            n_speakers: cfg.n_speakers,
            semantic_vocab: cfg.semantic_vocab,
            semantic_dim: cfg.semantic_dim,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    split: Split,
    phonemes: Vec<u32>,
    speaker_id: usize,
    tokens: Vec<Vec<u32>>,
    frame_rate: Rate,
    duration_s: f64,
    semantic_feats: Vec<Vec<f64>>,
    semantic_codes: Vec<u32>,
    semantic_rate: Rate,
}

impl From<&Utterance> for Record {
    fn from(u: &Utterance) -> Self {
        Self {
            id: u.id.clone(),
            split: u.split,
            phonemes: u.phonemes.ids().to_vec(),
            speaker_id: u.speaker_id,
            tokens: u.tokens.as_array().rows().into_iter().map(|r| r.to_vec()).collect(),
            frame_rate: u.tokens.frame_rate(),
            duration_s: u.duration_s,
            semantic_feats: u.semantic_feats.rows().into_iter().map(|r| r.to_vec()).collect(),
            semantic_codes: u.semantic_codes.clone(),
            semantic_rate: u.semantic_rate,
        }
    }
}

fn rectangular<T: Clone>(rows: Vec<Vec<T>>, width: Option<usize>) -> std::result::Result<Array2<T>, String> {
    let n = rows.len();
    let w = width.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if let Some(bad) = rows.iter().position(|r| r.len() != w) {
        return Err(format!("row {bad} has length {} (expected {w})", rows[bad].len()));
    }
    let flat: Vec<T> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, w), flat).map_err(|e| e.to_string())
}

impl Record {
    fn into_utterance(self, schema: &ManifestSchema) -> std::result::Result<Utterance, (&'static str, String)> {
        let phonemes = PhonemeSeq::new(self.phonemes).map_err(|e| ("phonemes", e.to_string()))?;
        phonemes.validate(schema.n_phonemes).map_err(|e| ("phonemes", e.to_string()))?;
        if self.speaker_id >= schema.n_speakers {
            return Err(("speaker_id", format!("{} outside [0, {})", self.speaker_id, schema.n_speakers)));
        }
        if self.tokens.len() != schema.n_codebooks {
            return Err(("tokens", format!("{} layers, expected {}", self.tokens.len(), schema.n_codebooks)));
        }
        let tokens = rectangular(self.tokens, None).map_err(|e| ("tokens", e))?;
        let tokens = TokenGrid::new(tokens, schema.codebook_size, self.frame_rate).map_err(|e| ("tokens", e.to_string()))?;
        let expected = tokens.duration_s();
        if (self.duration_s - expected).abs() > 1e-9 {
            return Err(("duration_s", format!("{} but frames imply {expected}", self.duration_s)));
        }
        self.semantic_rate.validate().map_err(|e| ("semantic_rate", e.to_string()))?;
        let t_sem = self.semantic_rate.resample_len(tokens.frames(), tokens.frame_rate());
        if self.semantic_codes.len() != t_sem {
            return Err(("semantic_codes", format!("length {} but the frame count implies {t_sem}", self.semantic_codes.len())));
        }
        if let Some(bad) = self.semantic_codes.iter().find(|&&c| c as usize >= schema.semantic_vocab) {
            return Err(("semantic_codes", format!("code {bad} outside [0, {})", schema.semantic_vocab)));
        }
        if self.semantic_feats.len() != t_sem {
            return Err(("semantic_feats", format!("{} rows but the frame count implies {t_sem}", self.semantic_feats.len())));
        }
        let feats = rectangular(self.semantic_feats, Some(schema.semantic_dim)).map_err(|e| ("semantic_feats", e))?;
        if feats.iter().any(|x| !x.is_finite()) {
            return Err(("semantic_feats", "non-finite value".into()));
        }
        Ok(Utterance {
            id: self.id,
            split: self.split,
            phonemes,
            speaker_id: self.speaker_id,
            tokens,
            duration_s: self.duration_s,
            semantic_feats: feats,
            semantic_codes: self.semantic_codes,
            semantic_rate: self.semantic_rate,
        })
    }
}

pub fn save_manifest(path: &Path, utterances: &[Utterance]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for u in utterances {
        serde_json::to_writer(&mut out, &Record::from(u))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads utterances in file order. Blank lines are skipped.
pub fn load_manifest(path: &Path, schema: &ManifestSchema) -> Result<Vec<Utterance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let manifest_err = |field: &str, reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            field: field.to_string(),
            reason,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| {
            let field = e
                .to_string()
                .split('`')
                .nth(1)
                .unwrap_or("record")
                .to_string();
            manifest_err(&field, e.to_string())
        })?;
        out.push(record.into_utterance(schema).map_err(|(field, reason)| manifest_err(field, reason))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_world::{gen_corpus, ToyWorldSpec};

    fn schema() -> ManifestSchema {
        ManifestSchema::from(&ModelConfig::toy())
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_manifest(&path, &schema()).unwrap().is_empty());
    }

    #[test]
    fn round_trip_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.jsonl");
        let spec = ToyWorldSpec { n_utterances: 1, ..ToyWorldSpec::toy() };
        let corpus = gen_corpus(&spec, Split::Train).unwrap();
        save_manifest(&path, &corpus).unwrap();
        let back = load_manifest(&path, &schema()).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn round_trip_odd_and_even_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("many.jsonl");
        let spec = ToyWorldSpec { n_utterances: 64, ..ToyWorldSpec::toy() };
        let corpus = gen_corpus(&spec, Split::Train).unwrap();
        assert!(corpus.iter().any(|u| u.frames() % 2 == 1));
        save_manifest(&path, &corpus).unwrap();
        assert_eq!(load_manifest(&path, &schema()).unwrap(), corpus);
    }

    #[test]
    fn out_of_vocab_token_names_tokens_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let spec = ToyWorldSpec { n_utterances: 1, ..ToyWorldSpec::toy() };
        let corpus = gen_corpus(&spec, Split::Train).unwrap();
        let mut rec = Record::from(&corpus[0]);
        rec.tokens[1][0] = 64;
        let line = serde_json::to_string(&rec).unwrap();
        std::fs::write(&path, format!("{line}\n")).unwrap();
        match load_manifest(&path, &schema()).unwrap_err() {
            Error::Manifest { line, field, .. } => {
                assert_eq!(line, 1);
                assert_eq!(field, "tokens");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let spec = ToyWorldSpec { n_utterances: 1, ..ToyWorldSpec::toy() };
        let corpus = gen_corpus(&spec, Split::Train).unwrap();
        let good = serde_json::to_string(&Record::from(&corpus[0])).unwrap();
        std::fs::write(&path, format!("{good}\n{{\"id\": 3}}\n")).unwrap();
        match load_manifest(&path, &schema()).unwrap_err() {
            Error::Manifest { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_duration_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let spec = ToyWorldSpec { n_utterances: 1, ..ToyWorldSpec::toy() };
        let corpus = gen_corpus(&spec, Split::Train).unwrap();
        let mut rec = Record::from(&corpus[0]);
        rec.duration_s += 1e-3;
        std::fs::write(&path, serde_json::to_string(&rec).unwrap()).unwrap();
        match load_manifest(&path, &schema()).unwrap_err() {
            Error::Manifest { field, .. } => assert_eq!(field, "duration_s"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
