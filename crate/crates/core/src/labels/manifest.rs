//! JSON Lines corpus manifests.
//!
//! One utterance per line:
//! `{"utt_id": "...", "wav": "path", "split": "train", "labels": [[start, end, "eng"], ...]}`
//! with an optional `"embd"` path for the precomputed-embedding model.
//! Boundaries are in samples at 16 kHz.

use super::{check_boundaries, BoundarySegment, LanguageId, TaskTaxonomy};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "train" => Split::Train,
            "dev" => Split::Dev,
            "test" => Split::Test,
            _ => return None,
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub wav_path: PathBuf,
    pub embd_path: Option<PathBuf>,
    pub split: Split,
    pub boundaries: Vec<BoundarySegment>,
    pub is_monolingual_english: bool,
}

impl ManifestEntry {
    pub fn num_samples(&self) -> usize {
        self.boundaries.last().map_or(0, |b| b.end_sample)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Training-set filter of monolingual-English utterances.
    ///
    /// Applies only to the train split of tasks 2 and 3; task 1 and the
    /// dev/test splits are passed through unchanged.
    pub fn filter_training(&self, task: TaskTaxonomy) -> Manifest {
        if task == TaskTaxonomy::Task1 {
            return self.clone();
        }
        Manifest {
            entries: self
                .entries
                .iter()
                .filter(|e| !(e.split == Split::Train && e.is_monolingual_english))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot open manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A validation finding; `load_manifest` succeeds even for manifests with
/// issues so that tooling can report all of them at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestIssue {
    DuplicateUttId {
        utt_id: String,
    },
    BadBoundaries {
        utt_id: String,
        boundary_index: usize,
        message: String,
    },
    MissingWav {
        utt_id: String,
        path: PathBuf,
    },
    MissingEmbeddings {
        utt_id: String,
        path: PathBuf,
    },
}

impl fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestIssue::DuplicateUttId { utt_id } => {
                write!(f, "duplicate utt_id {utt_id:?}")
            }
            ManifestIssue::BadBoundaries {
                utt_id,
                boundary_index,
                message,
            } => write!(f, "{utt_id:?}: boundary {boundary_index}: {message}"),
            ManifestIssue::MissingWav { utt_id, path } => {
                write!(f, "{utt_id:?}: wav file not found: {}", path.display())
            }
            ManifestIssue::MissingEmbeddings { utt_id, path } => {
                write!(f, "{utt_id:?}: embedding file not found: {}", path.display())
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    utt_id: String,
    wav: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embd: Option<String>,
    split: String,
    labels: Vec<(usize, usize, String)>,
}

/// Load a JSONL manifest. Relative wav/embd paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let file = File::open(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| ManifestError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let split = Split::parse(&raw.split).ok_or_else(|| ManifestError::Parse {
            line: lineno,
            message: format!("unknown split {:?}", raw.split),
        })?;
        let mut boundaries = Vec::with_capacity(raw.labels.len());
        for (start, end, code) in &raw.labels {
            let lang = LanguageId::from_code(code).ok_or_else(|| ManifestError::Parse {
                line: lineno,
                message: format!("unknown language code {code:?}"),
            })?;
            boundaries.push(BoundarySegment {
                start_sample: *start,
                end_sample: *end,
                lang,
            });
        }
        let is_monolingual_english = !boundaries.is_empty()
            && boundaries.iter().all(|b| b.lang == LanguageId::English);
        entries.push(ManifestEntry {
            utt_id: raw.utt_id,
            wav_path: resolve(base, &raw.wav),
            embd_path: raw.embd.as_deref().map(|p| resolve(base, p)),
            split,
            boundaries,
            is_monolingual_english,
        });
    }
    Ok(Manifest { entries })
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Check id uniqueness, boundary contiguity and referenced-file existence.
pub fn validate_manifest(manifest: &Manifest) -> Vec<ManifestIssue> {
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    for entry in &manifest.entries {
        if !seen.insert(entry.utt_id.clone()) {
            issues.push(ManifestIssue::DuplicateUttId {
                utt_id: entry.utt_id.clone(),
            });
        }
        let n = entry.num_samples();
        if let Err(e) = check_boundaries(&entry.boundaries, n) {
            let boundary_index = match &e {
                super::LabelError::Gap { index, .. }
                | super::LabelError::Overlap { index, .. }
                | super::LabelError::EmptySegment { index, .. } => *index,
                _ => 0,
            };
            issues.push(ManifestIssue::BadBoundaries {
                utt_id: entry.utt_id.clone(),
                boundary_index,
                message: e.to_string(),
            });
        }
        if !entry.wav_path.exists() {
            issues.push(ManifestIssue::MissingWav {
                utt_id: entry.utt_id.clone(),
                path: entry.wav_path.clone(),
            });
        }
        if let Some(p) = &entry.embd_path {
            if !p.exists() {
                issues.push(ManifestIssue::MissingEmbeddings {
                    utt_id: entry.utt_id.clone(),
                    path: p.clone(),
                });
            }
        }
    }
    issues
}

/// Write a manifest as JSONL. Paths are written as given.
pub fn save_manifest(manifest: &Manifest, path: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in &manifest.entries {
        let raw = RawEntry {
            utt_id: e.utt_id.clone(),
            wav: e.wav_path.to_string_lossy().into_owned(),
            embd: e.embd_path.as_ref().map(|p| p.to_string_lossy().into_owned()),
            split: e.split.to_string(),
            labels: e
                .boundaries
                .iter()
                .map(|b| (b.start_sample, b.end_sample, b.lang.code().to_string()))
                .collect(),
        };
        serde_json::to_writer(&mut w, &raw)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(dir: &Path, lines: &[&str]) -> PathBuf {
        let path = dir.join("manifest.jsonl");
        let mut f = File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    #[test]
    fn well_formed_manifest_loads_two_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(
            dir.path(),
            &[
                r#"{"utt_id":"a","wav":"a.wav","split":"train","labels":[[0,100,"eng"]]}"#,
                r#"{"utt_id":"b","wav":"b.wav","split":"dev","labels":[[0,50,"zul"],[50,80,"eng"]]}"#,
            ],
        );
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert!(m.entries[0].is_monolingual_english);
        assert!(!m.entries[1].is_monolingual_english);
        assert_eq!(m.entries[1].num_samples(), 80);
    }

    #[test]
    fn parse_error_reports_the_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(
            dir.path(),
            &[
                r#"{"utt_id":"a","wav":"a.wav","split":"train","labels":[[0,100,"eng"]]}"#,
                r#"not json"#,
            ],
        );
        match load_manifest(&path).unwrap_err() {
            ManifestError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_bad_boundaries_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(
            dir.path(),
            &[
                r#"{"utt_id":"a","wav":"a.wav","split":"train","labels":[[0,100,"eng"]]}"#,
                r#"{"utt_id":"a","wav":"a.wav","split":"train","labels":[[0,100,"eng"]]}"#,
                r#"{"utt_id":"c","wav":"c.wav","split":"train","labels":[[0,60,"eng"],[50,100,"zul"]]}"#,
            ],
        );
        let m = load_manifest(&path).unwrap();
        let issues = validate_manifest(&m);
        assert!(issues.iter().any(
            |i| matches!(i, ManifestIssue::DuplicateUttId { utt_id } if utt_id == "a")
        ));
        assert!(issues.iter().any(|i| matches!(
            i,
            ManifestIssue::BadBoundaries { utt_id, boundary_index: 1, .. } if utt_id == "c"
        )));
    }

    #[test]
    fn monolingual_english_filter_applies_to_train_split_of_tasks_2_and_3() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = Vec::new();
        for i in 0..10 {
            let lang = if i < 3 { "eng" } else { "zul" };
            lines.push(format!(
                r#"{{"utt_id":"t{i}","wav":"t{i}.wav","split":"train","labels":[[0,100,"{lang}"]]}}"#
            ));
        }
        lines.push(
            r#"{"utt_id":"d0","wav":"d0.wav","split":"dev","labels":[[0,100,"eng"]]}"#.to_string(),
        );
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let path = write_manifest(dir.path(), &refs);
        let m = load_manifest(&path).unwrap();

        let t1 = m.filter_training(TaskTaxonomy::Task1);
        assert_eq!(t1.entries.len(), m.entries.len());

        let t3 = m.filter_training(TaskTaxonomy::Task3);
        assert_eq!(t3.split(Split::Train).count(), 7);
        assert_eq!(t3.split(Split::Dev).count(), 1);

        let t2 = m.filter_training(TaskTaxonomy::Task2);
        assert_eq!(t2.split(Split::Dev).count(), 1);
    }
}
