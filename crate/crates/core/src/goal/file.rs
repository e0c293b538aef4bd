//! Vocabulary persistence and content hashing.
//!
//! Schema (meters/radians, ego frame):
//! ```json
//! {
//!   "version": 1,
//!   "vocabulary": {
//!     "points": [{"x": ..., "y": ..., "heading": ...}, ...],
//!     "seed": 42,
//!     "iterations": 17,
//!     "inertia": 0.0123
//!   }
//! }
//! ```
//! [`vocabulary_hash`] digests the canonical (compact JSON) form of the
//! vocabulary; checkpoints store the hash so a model is never run against a
//! vocabulary other than the one it was trained with. Readers ignore unknown
//! fields; a changed `version` is rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GoalVocabulary;
use crate::{Error, Result};

/// Current vocabulary file version.
pub const VOCAB_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    vocabulary: GoalVocabulary,
}

/// Writes the vocabulary as versioned, pretty-printed JSON.
pub fn save_vocabulary(path: impl AsRef<Path>, vocab: &GoalVocabulary) -> Result<()> {
    vocab.validate()?;
    let file = VocabFile { version: VOCAB_VERSION, vocabulary: vocab.clone() };
    let mut text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::data(format!("vocabulary serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a vocabulary back, validating version and contents.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<GoalVocabulary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let file: VocabFile = serde_json::from_str(&text).map_err(|e| {
        Error::data(format!(
            "{}: parse error at line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    if file.version != VOCAB_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported vocabulary version {} (expected {VOCAB_VERSION})",
            path.display(),
            file.version
        )));
    }
    file.vocabulary
        .validate()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Ok(file.vocabulary)
}

/// SHA-256 of the vocabulary's canonical compact-JSON form, hex-encoded.
/// Stable across pretty-printing and field reordering on disk.
pub fn vocabulary_hash(vocab: &GoalVocabulary) -> Result<String> {
    let canonical = serde_json::to_string(vocab)
        .map_err(|e| Error::data(format!("vocabulary serialization failed: {e}")))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goal::build_vocabulary;
    use crate::scenario::GoalPoint;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    struct TempFile(PathBuf);

    impl TempFile {
        fn new(tag: &str) -> Self {
            let path = std::env::temp_dir()
                .join(format!("flowplan_vocab_{}_{tag}.json", std::process::id()));
            TempFile(path)
        }
    }

    impl Drop for TempFile {
        fn drop(&mut self) {
            let _ = fs::remove_file(&self.0);
        }
    }

    fn sample_vocab(seed: u64) -> GoalVocabulary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let endpoints: Vec<GoalPoint> = (0..100)
            .map(|_| GoalPoint {
                x: rng.gen_range(-30.0..30.0),
                y: rng.gen_range(-10.0..10.0),
                heading: rng.gen_range(-1.0..1.0),
            })
            .collect();
        build_vocabulary(&endpoints, 8, seed).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let vocab = sample_vocab(1);
        let file = TempFile::new("round_trip");
        save_vocabulary(&file.0, &vocab).unwrap();
        let loaded = load_vocabulary(&file.0).unwrap();
        assert_eq!(vocab, loaded);
        assert_eq!(vocabulary_hash(&vocab).unwrap(), vocabulary_hash(&loaded).unwrap());
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let vocab = sample_vocab(2);
        let h1 = vocabulary_hash(&vocab).unwrap();
        let h2 = vocabulary_hash(&vocab.clone()).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        let mut nudged = vocab;
        nudged.points[0].x += 1e-9;
        assert_ne!(h1, vocabulary_hash(&nudged).unwrap());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let vocab = sample_vocab(3);
        let file = TempFile::new("wrong_version");
        save_vocabulary(&file.0, &vocab).unwrap();
        let text = fs::read_to_string(&file.0).unwrap();
        fs::write(&file.0, text.replacen("\"version\": 1", "\"version\": 9", 1)).unwrap();
        let msg = load_vocabulary(&file.0).unwrap_err().to_string();
        assert!(msg.contains("version"), "unhelpful error: {msg}");
    }

    #[test]
    fn corrupt_and_missing_files_error_cleanly() {
        let file = TempFile::new("corrupt");
        fs::write(&file.0, "{\"version\": 1, \"vocabulary\":").unwrap();
        let msg = load_vocabulary(&file.0).unwrap_err().to_string();
        assert!(msg.contains("line"), "unhelpful error: {msg}");
        assert!(load_vocabulary("/nonexistent/flowplan/vocab.json").is_err());
    }

    #[test]
    fn degenerate_vocabulary_is_rejected_on_load() {
        let vocab = sample_vocab(4);
        let file = TempFile::new("degenerate");
        save_vocabulary(&file.0, &vocab).unwrap();
        let text = fs::read_to_string(&file.0).unwrap();
        // strip all but one point
        let start = text.find("\"points\": [").unwrap();
        let end = text[start..].find(']').unwrap() + start;
        let one_point = format!(
            "{}\"points\": [{{\"x\": 1.0, \"y\": 2.0, \"heading\": 0.0}}{}",
            &text[..start],
            &text[end..]
        );
        fs::write(&file.0, one_point).unwrap();
        assert!(load_vocabulary(&file.0).is_err());
    }
}
