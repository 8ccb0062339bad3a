//! Per-token cross-attention maps with word-to-token grouping.
//!
//! A bundle arrives as a JSON manifest plus raw little-endian f32 payload
//! files. Each token carries attention slices indexed by (layer, head,
//! timestep) at arbitrary resolution; words group token indices; the
//! target size is the image resolution every slice is upsampled to before
//! aggregation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;

#[derive(Debug, Clone)]
pub struct AttnSlice {
    pub layer: u32,
    pub head: u32,
    pub timestep: u32,
    pub map: ScalarField,
}

#[derive(Debug, Clone)]
pub struct TokenRecord {
    pub text: String,
    pub slices: Vec<AttnSlice>,
}

#[derive(Debug, Clone)]
pub struct WordRecord {
    pub text: String,
    pub token_indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AttentionBundle {
    pub tokens: Vec<TokenRecord>,
    pub words: Vec<WordRecord>,
    pub target_height: usize,
    pub target_width: usize,
}

impl AttentionBundle {
    /// Checks every structural invariant: nonnegative maps, unique
    /// (layer, head, timestep) triples per token, valid word groupings.
    pub fn validate(&self) -> Result<()> {
        if self.target_height == 0 || self.target_width == 0 {
            return Err(Error::Validation("target_size must be positive".into()));
        }
        for (ti, token) in self.tokens.iter().enumerate() {
            let mut seen = std::collections::HashSet::new();
            for (si, slice) in token.slices.iter().enumerate() {
                if !seen.insert((slice.layer, slice.head, slice.timestep)) {
                    return Err(Error::Validation(format!(
                        "token {ti} slice {si}: duplicate (layer,head,timestep) = ({},{},{})",
                        slice.layer, slice.head, slice.timestep
                    )));
                }
                if slice.map.data().iter().any(|&v| v < 0.0) {
                    return Err(Error::Validation(format!(
                        "token {ti} slice {si}: negative attention value"
                    )));
                }
            }
        }
        for (wi, word) in self.words.iter().enumerate() {
            if word.token_indices.is_empty() {
                return Err(Error::Validation(format!("word {wi}: empty token list")));
            }
            for &t in &word.token_indices {
                if t >= self.tokens.len() {
                    return Err(Error::Validation(format!(
                        "word {wi}: dangling token index {t} (only {} tokens)",
                        self.tokens.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loads a bundle from its JSON manifest; payload paths resolve relative
    /// to the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<AttentionBundle> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", manifest_path.display())))?;
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));

        let mut tokens = Vec::with_capacity(manifest.tokens.len());
        for (ti, tok) in manifest.tokens.iter().enumerate() {
            let mut slices = Vec::with_capacity(tok.slices.len());
            for (si, s) in tok.slices.iter().enumerate() {
                let entry = format!("token {ti} slice {si} ({})", s.data_file);
                if s.rows == 0 || s.cols == 0 {
                    return Err(Error::Validation(format!("{entry}: zero dimension")));
                }
                let payload_path = dir.join(&s.data_file);
                let bytes = fs::read(&payload_path)
                    .map_err(|e| Error::Validation(format!("{entry}: missing payload file: {e}")))?;
                let need = s.rows * s.cols * 4;
                if s.data_offset + need > bytes.len() {
                    return Err(Error::Validation(format!(
                        "{entry}: length mismatch: need {need} bytes at offset {}, file has {}",
                        s.data_offset,
                        bytes.len()
                    )));
                }
                let mut data = Vec::with_capacity(s.rows * s.cols);
                for i in 0..s.rows * s.cols {
                    let off = s.data_offset + i * 4;
                    let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                    if !v.is_finite() {
                        return Err(Error::Validation(format!("{entry}: non-finite value at element {i}")));
                    }
                    data.push(v as f64);
                }
                slices.push(AttnSlice {
                    layer: s.layer,
                    head: s.head,
                    timestep: s.timestep,
                    map: ScalarField::new(s.rows, s.cols, data)?,
                });
            }
            tokens.push(TokenRecord {
                text: tok.text.clone(),
                slices,
            });
        }

        let bundle = AttentionBundle {
            tokens,
            words: manifest
                .words
                .iter()
                .map(|w| WordRecord {
                    text: w.text.clone(),
                    token_indices: w.token_indices.clone(),
                })
                .collect(),
            target_height: manifest.target_size.0,
            target_width: manifest.target_size.1,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Writes the manifest plus one payload file per token into `dir`.
    /// Returns the manifest path.
    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest {
            target_size: (self.target_height, self.target_width),
            tokens: Vec::new(),
            words: self
                .words
                .iter()
                .map(|w| ManifestWord {
                    text: w.text.clone(),
                    token_indices: w.token_indices.clone(),
                })
                .collect(),
        };
        for (ti, token) in self.tokens.iter().enumerate() {
            let data_file = format!("tok{ti}.f32");
            let mut payload = Vec::new();
            let mut slices = Vec::new();
            for s in &token.slices {
                let offset = payload.len();
                for &v in s.map.data() {
                    payload.extend_from_slice(&(v as f32).to_le_bytes());
                }
                slices.push(ManifestSlice {
                    layer: s.layer,
                    head: s.head,
                    timestep: s.timestep,
                    rows: s.map.height(),
                    cols: s.map.width(),
                    data_file: data_file.clone(),
                    data_offset: offset,
                });
            }
            let payload_path = dir.join(&data_file);
            fs::write(&payload_path, &payload).map_err(|e| Error::io(&payload_path, e))?;
            manifest.tokens.push(ManifestToken {
                text: token.text.clone(),
                slices,
            });
        }
        let manifest_path = dir.join("bundle.json");
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Validation(format!("manifest serialization: {e}")))?;
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest_path)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    target_size: (usize, usize),
    tokens: Vec<ManifestToken>,
    words: Vec<ManifestWord>,
}

#[derive(Serialize, Deserialize)]
struct ManifestToken {
    text: String,
    slices: Vec<ManifestSlice>,
}

#[derive(Serialize, Deserialize)]
struct ManifestSlice {
    layer: u32,
    head: u32,
    timestep: u32,
    rows: usize,
    cols: usize,
    data_file: String,
    #[serde(default)]
    data_offset: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestWord {
    text: String,
    token_indices: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_slice(rows: usize, cols: usize) -> AttnSlice {
        AttnSlice {
            layer: 0,
            head: 0,
            timestep: 0,
            map: ScalarField::constant(rows, cols, 0.0).unwrap(),
        }
    }

    fn one_token_bundle() -> AttentionBundle {
        AttentionBundle {
            tokens: vec![TokenRecord {
                text: "tok".into(),
                slices: vec![zero_slice(16, 16)],
            }],
            words: vec![WordRecord {
                text: "word".into(),
                token_indices: vec![0],
            }],
            target_height: 32,
            target_width: 32,
        }
    }

    #[test]
    fn minimal_bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = one_token_bundle();
        let manifest = bundle.save(dir.path()).unwrap();
        let loaded = AttentionBundle::load(&manifest).unwrap();
        assert_eq!(loaded.tokens.len(), 1);
        assert_eq!(loaded.tokens[0].slices[0].map.height(), 16);
        assert!(loaded.tokens[0].slices[0].map.data().iter().all(|&v| v == 0.0));
        assert_eq!(loaded.words[0].token_indices, vec![0]);
    }

    #[test]
    fn short_payload_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = one_token_bundle();
        let manifest = bundle.save(dir.path()).unwrap();
        // Truncate the payload below rows*cols*4.
        let payload = dir.path().join("tok0.f32");
        let bytes = std::fs::read(&payload).unwrap();
        std::fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
        match AttentionBundle::load(&manifest) {
            Err(Error::Validation(msg)) => assert!(msg.contains("length mismatch"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_triple_is_rejected() {
        let mut bundle = one_token_bundle();
        bundle.tokens[0].slices.push(zero_slice(8, 8));
        match bundle.validate() {
            Err(Error::Validation(msg)) => assert!(msg.contains("duplicate"), "{msg}"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_token_index_is_rejected() {
        let mut bundle = one_token_bundle();
        bundle.words[0].token_indices.push(5);
        match bundle.validate() {
            Err(Error::Validation(msg)) => assert!(msg.contains("dangling"), "{msg}"),
            other => panic!("expected dangling-index error, got {other:?}"),
        }
    }

    #[test]
    fn negative_attention_is_rejected() {
        let mut bundle = one_token_bundle();
        bundle.tokens[0].slices[0].map.set(0, 0, -0.5);
        assert!(matches!(bundle.validate(), Err(Error::Validation(_))));
    }
}
