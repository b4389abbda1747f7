// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON Lines corpus files.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::corpus::{Answer, CorpusEntry, QueryPair, SyntheticScene};
use super::planted::PlantedModelSpec;
use super::vocab::{Layout, MARKER};
use crate::error::{config, Error, Result};

/// One line of a corpus file. Scene embeddings are regenerated from
/// `scene_seed` and `objects`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub scene_seed: u64,
    pub objects: Vec<usize>,
    pub caption_tokens: Vec<usize>,
    pub noncaption_tokens: Vec<usize>,
    pub gold: Answer,
}

impl CorpusRecord {
    pub fn from_entry(entry: &CorpusEntry) -> Self {
        Self {
            scene_seed: entry.scene.seed(),
            objects: entry.scene.object_ids(),
            caption_tokens: entry.query.caption.clone(),
            noncaption_tokens: entry.query.non_caption.clone(),
            gold: entry.query.gold,
        }
    }

    /// Checks the record against `spec` without building the scene.
    ///
    /// # Errors
    ///
    /// [`Error::Config`] for out-of-range objects or tokens and
    /// [`Error::Pairing`] when the queries break the pairing rules: the
    /// marker appears only in the caption, the presence question names one
    /// object, and the gold answer agrees with the scene.
    pub fn validate(&self, spec: &PlantedModelSpec) -> Result<()> {
        let vocab = &spec.vocab;
        if self.objects.is_empty() {
            return Err(config("record has no objects"));
        }
        let mut sorted = self.objects.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.objects.len() {
            return Err(config("duplicate object ids in record"));
        }
        if let Some(o) = self.objects.iter().find(|&&o| o >= vocab.num_objects) {
            return Err(config(format!("object id {o} out of range")));
        }
        if self.caption_tokens.is_empty() || self.noncaption_tokens.is_empty() {
            return Err(config("empty query"));
        }
        let v = vocab.vocab_size();
        if let Some(t) = self
            .caption_tokens
            .iter()
            .chain(&self.noncaption_tokens)
            .find(|&&t| t >= v)
        {
            return Err(config(format!("token {t} out of vocabulary")));
        }
        if !self.caption_tokens.contains(&MARKER) {
            return Err(Error::Pairing("caption query lacks the marker token".into()));
        }
        if self.noncaption_tokens.contains(&MARKER) {
            return Err(Error::Pairing("marker token in non-caption query".into()));
        }
        let probed: Vec<usize> = self
            .noncaption_tokens
            .iter()
            .filter_map(|&t| vocab.token_object(t))
            .collect();
        let [probed] = probed[..] else {
            return Err(Error::Pairing(
                "non-caption query must name exactly one object".into(),
            ));
        };
        if self.objects.contains(&probed) != (self.gold == Answer::Yes) {
            return Err(Error::Pairing("gold answer disagrees with scene contents".into()));
        }
        Ok(())
    }

    /// Rebuilds the scene and query pair.
    ///
    /// # Errors
    ///
    /// As [`CorpusRecord::validate`].
    pub fn materialize(&self, spec: &PlantedModelSpec) -> Result<CorpusEntry> {
        self.validate(spec)?;
        let layout = Layout::new(spec.vocab.num_objects, spec.config.model_dim)?;
        Ok(CorpusEntry {
            scene: SyntheticScene::generate(self.scene_seed, &self.objects, &layout, &spec.scene),
            query: QueryPair {
                caption: self.caption_tokens.clone(),
                non_caption: self.noncaption_tokens.clone(),
                gold: self.gold,
            },
        })
    }
}

/// Parses JSON Lines records; blank lines are skipped.
///
/// # Errors
///
/// [`Error::Json`] with no line context on malformed input, or
/// [`Error::Config`] naming the offending line.
pub fn parse_corpus_jsonl(text: &str) -> Result<Vec<CorpusRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| config(format!("corpus line {}: {e}", i + 1))))
        .collect()
}

/// Reads records from any buffered reader.
///
/// # Errors
///
/// I/O and parse errors.
pub fn read_corpus_jsonl<R: BufRead>(mut reader: R) -> Result<Vec<CorpusRecord>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_corpus_jsonl(&text)
}

/// Writes one compact JSON object per line.
///
/// # Errors
///
/// I/O errors.
pub fn write_corpus_jsonl<W: Write>(mut writer: W, records: &[CorpusRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Parses and materializes a whole corpus.
///
/// # Errors
///
/// [`Error::EmptyDataset`] for a file without records, plus per-record
/// errors.
pub fn load_corpus(text: &str, spec: &PlantedModelSpec) -> Result<Vec<CorpusEntry>> {
    let records = parse_corpus_jsonl(text)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset("corpus file has no records".into()));
    }
    records.iter().map(|r| r.materialize(spec)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generate_corpus;

    #[test]
    fn roundtrip_regenerates_identical_scenes() {
        let spec = PlantedModelSpec::default();
        let corpus = generate_corpus(4, 6, &spec).unwrap();
        let records: Vec<_> = corpus.iter().map(CorpusRecord::from_entry).collect();
        let mut buf = Vec::new();
        write_corpus_jsonl(&mut buf, &records).unwrap();
        let back = load_corpus(std::str::from_utf8(&buf).unwrap(), &spec).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn pairing_rules() {
        let spec = PlantedModelSpec::default();
        let e = &generate_corpus(4, 1, &spec).unwrap()[0];
        let good = CorpusRecord::from_entry(e);
        let mut r = good.clone();
        r.noncaption_tokens.push(MARKER);
        assert!(matches!(r.validate(&spec), Err(Error::Pairing(_))));
        let mut r = good.clone();
        r.gold = if r.gold == Answer::Yes {
            Answer::No
        } else {
            Answer::Yes
        };
        assert!(matches!(r.validate(&spec), Err(Error::Pairing(_))));
        let mut r = good;
        r.caption_tokens.retain(|&t| t != MARKER);
        assert!(matches!(r.validate(&spec), Err(Error::Pairing(_))));
    }

    #[test]
    fn unknown_field_rejected() {
        let line = r#"{"scene_seed":1,"objects":[0],"caption_tokens":[0],"noncaption_tokens":[9],"gold":"yes","x":1}"#;
        assert!(parse_corpus_jsonl(line).is_err());
    }
}
