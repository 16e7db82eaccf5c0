//! Label tracks, hierarchical task taxonomies and corpus manifests.
//!
//! Ground truth arrives as time-stamped language boundaries (in samples).
//! These are expanded to one label per waveform sample, then down-sampled by
//! majority vote to the segment rate at which a given model predicts.

mod manifest;

pub use manifest::{
    load_manifest, save_manifest, validate_manifest, Manifest, ManifestEntry, ManifestError,
    ManifestIssue, Split,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five languages of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LanguageId {
    English,
    IsiZulu,
    IsiXhosa,
    Setswana,
    Sesotho,
}

pub const ALL_LANGUAGES: [LanguageId; 5] = [
    LanguageId::English,
    LanguageId::IsiZulu,
    LanguageId::IsiXhosa,
    LanguageId::Setswana,
    LanguageId::Sesotho,
];

impl LanguageId {
    /// Three-letter code used in manifests.
    pub fn code(self) -> &'static str {
        match self {
            LanguageId::English => "eng",
            LanguageId::IsiZulu => "zul",
            LanguageId::IsiXhosa => "xho",
            LanguageId::Setswana => "tsn",
            LanguageId::Sesotho => "sot",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Some(match code {
            "eng" => LanguageId::English,
            "zul" => LanguageId::IsiZulu,
            "xho" => LanguageId::IsiXhosa,
            "tsn" => LanguageId::Setswana,
            "sot" => LanguageId::Sesotho,
            _ => return None,
        })
    }
}

/// The three hierarchical diarization tasks.
///
/// Task 1 groups all four Bantu languages, task 2 groups them by language
/// group (Nguni vs Sotho-Tswana) and task 3 keeps all five languages apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskTaxonomy {
    /// English / Bantu.
    Task1,
    /// English / Nguni / Sotho-Tswana.
    Task2,
    /// English / isiZulu / isiXhosa / Setswana / Sesotho.
    Task3,
}

impl TaskTaxonomy {
    pub fn from_index(i: u8) -> Option<Self> {
        Some(match i {
            1 => TaskTaxonomy::Task1,
            2 => TaskTaxonomy::Task2,
            3 => TaskTaxonomy::Task3,
            _ => return None,
        })
    }

    pub fn num_classes(self) -> usize {
        match self {
            TaskTaxonomy::Task1 => 2,
            TaskTaxonomy::Task2 => 3,
            TaskTaxonomy::Task3 => 5,
        }
    }

    /// Class index of a language under this taxonomy.
    pub fn map(self, lang: LanguageId) -> usize {
        match self {
            TaskTaxonomy::Task1 => match lang {
                LanguageId::English => 0,
                _ => 1,
            },
            TaskTaxonomy::Task2 => match lang {
                LanguageId::English => 0,
                LanguageId::IsiZulu | LanguageId::IsiXhosa => 1,
                LanguageId::Setswana | LanguageId::Sesotho => 2,
            },
            TaskTaxonomy::Task3 => match lang {
                LanguageId::English => 0,
                LanguageId::IsiZulu => 1,
                LanguageId::IsiXhosa => 2,
                LanguageId::Setswana => 3,
                LanguageId::Sesotho => 4,
            },
        }
    }

    /// Ordered human-readable class names.
    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            TaskTaxonomy::Task1 => vec!["English", "Bantu"],
            TaskTaxonomy::Task2 => vec!["English", "Nguni", "SothoTswana"],
            TaskTaxonomy::Task3 => vec!["English", "isiZulu", "isiXhosa", "Setswana", "Sesotho"],
        }
    }

    /// True when every class of `self` is a union of classes of `other`.
    pub fn is_coarser_or_equal_than(self, other: TaskTaxonomy) -> bool {
        self.num_classes() <= other.num_classes()
    }

    /// Map a class index of the finer taxonomy `from` to a class index of
    /// `self`. Well defined because the three taxonomies are nested.
    pub fn coarsen_class(self, from: TaskTaxonomy, class: usize) -> usize {
        debug_assert!(class < from.num_classes());
        // Pick any language representative of the fine class; nestedness
        // guarantees the choice does not matter.
        let lang = ALL_LANGUAGES
            .iter()
            .copied()
            .find(|&l| from.map(l) == class)
            .expect("every class has a representative language");
        self.map(lang)
    }
}

/// A time-stamped language boundary, in samples, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub start_sample: usize,
    pub end_sample: usize,
    pub lang: LanguageId,
}

/// One class index per waveform sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTrack {
    pub labels: Vec<usize>,
    pub taxonomy: TaskTaxonomy,
}

/// One class index per prediction segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentLabelTrack {
    pub labels: Vec<usize>,
    pub taxonomy: TaskTaxonomy,
    /// Samples covered by each full segment: floor(N / T).
    pub samples_per_segment: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("gap before boundary {index}: previous segment ends at {expected}, next starts at {found}")]
    Gap {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("overlap at boundary {index}: previous segment ends at {expected}, next starts at {found}")]
    Overlap {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("boundaries cover {covered} samples but the waveform has {expected}")]
    Coverage { covered: usize, expected: usize },
    #[error("boundary {index} is empty or inverted ({start}..{end})")]
    EmptySegment {
        index: usize,
        start: usize,
        end: usize,
    },
    #[error("empty label track")]
    EmptyTrack,
    #[error("target taxonomy is not coarser than or equal to the source")]
    IncompatibleTaxonomies,
}

/// Expand time-stamped boundaries to one class index per sample.
///
/// Boundaries must be sorted, contiguous and cover `[0, n_samples)` exactly.
pub fn boundaries_to_samples(
    boundaries: &[BoundarySegment],
    n_samples: usize,
    taxonomy: TaskTaxonomy,
) -> Result<LabelTrack, LabelError> {
    check_boundaries(boundaries, n_samples)?;
    let mut labels = Vec::with_capacity(n_samples);
    for b in boundaries {
        labels.resize(b.end_sample, taxonomy.map(b.lang));
    }
    Ok(LabelTrack { labels, taxonomy })
}

/// Validate sortedness, contiguity and exact coverage of `[0, n_samples)`.
pub fn check_boundaries(
    boundaries: &[BoundarySegment],
    n_samples: usize,
) -> Result<(), LabelError> {
    let mut cursor = 0usize;
    for (i, b) in boundaries.iter().enumerate() {
        if b.start_sample >= b.end_sample {
            return Err(LabelError::EmptySegment {
                index: i,
                start: b.start_sample,
                end: b.end_sample,
            });
        }
        if b.start_sample > cursor {
            return Err(LabelError::Gap {
                index: i,
                expected: cursor,
                found: b.start_sample,
            });
        }
        if b.start_sample < cursor {
            return Err(LabelError::Overlap {
                index: i,
                expected: cursor,
                found: b.start_sample,
            });
        }
        cursor = b.end_sample;
    }
    if cursor != n_samples {
        return Err(LabelError::Coverage {
            covered: cursor,
            expected: n_samples,
        });
    }
    Ok(())
}

/// Down-sample a per-sample track to `num_segments` labels by majority vote.
///
/// Segment `t` covers samples `[t*floor(N/T), min((t+1)*floor(N/T), N))`;
/// the final segment absorbs any remainder. Ties go to the class that
/// appears earliest inside the window.
pub fn downsample_labels(
    track: &LabelTrack,
    num_segments: usize,
) -> Result<SegmentLabelTrack, LabelError> {
    let n = track.labels.len();
    if n == 0 || num_segments == 0 || num_segments > n {
        return Err(LabelError::EmptyTrack);
    }
    let window = n / num_segments;
    let num_classes = track.taxonomy.num_classes();
    let mut labels = Vec::with_capacity(num_segments);
    for t in 0..num_segments {
        let start = t * window;
        let end = if t + 1 == num_segments {
            n
        } else {
            ((t + 1) * window).min(n)
        };
        labels.push(majority_label(&track.labels[start..end], num_classes));
    }
    Ok(SegmentLabelTrack {
        labels,
        taxonomy: track.taxonomy,
        samples_per_segment: window,
    })
}

/// Majority class of a window, ties broken by earliest occurrence.
fn majority_label(window: &[usize], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    let mut first_seen = vec![usize::MAX; num_classes];
    for (i, &c) in window.iter().enumerate() {
        counts[c] += 1;
        if first_seen[c] == usize::MAX {
            first_seen[c] = i;
        }
    }
    let mut best = window[0];
    for c in 0..num_classes {
        if counts[c] > counts[best]
            || (counts[c] == counts[best] && first_seen[c] < first_seen[best])
        {
            best = c;
        }
    }
    best
}

/// Remap a segment track from a finer taxonomy to a coarser (or equal) one.
pub fn map_taxonomy(
    track: &SegmentLabelTrack,
    to: TaskTaxonomy,
) -> Result<SegmentLabelTrack, LabelError> {
    if !to.is_coarser_or_equal_than(track.taxonomy) {
        return Err(LabelError::IncompatibleTaxonomies);
    }
    let labels = track
        .labels
        .iter()
        .map(|&c| to.coarsen_class(track.taxonomy, c))
        .collect();
    Ok(SegmentLabelTrack {
        labels,
        taxonomy: to,
        samples_per_segment: track.samples_per_segment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(start: usize, end: usize, lang: LanguageId) -> BoundarySegment {
        BoundarySegment {
            start_sample: start,
            end_sample: end,
            lang,
        }
    }

    #[test]
    fn single_segment_expands_to_constant_track() {
        let t = boundaries_to_samples(&[seg(0, 100, LanguageId::English)], 100, TaskTaxonomy::Task1)
            .unwrap();
        assert_eq!(t.labels, vec![0; 100]);
    }

    #[test]
    fn zulu_and_xhosa_share_the_nguni_class_under_task2() {
        let t = boundaries_to_samples(
            &[seg(0, 50, LanguageId::IsiZulu), seg(50, 100, LanguageId::IsiXhosa)],
            100,
            TaskTaxonomy::Task2,
        )
        .unwrap();
        assert_eq!(t.labels, vec![1; 100]);
    }

    #[test]
    fn gap_is_reported_with_boundary_index() {
        let err = boundaries_to_samples(
            &[seg(0, 50, LanguageId::English), seg(60, 100, LanguageId::IsiZulu)],
            100,
            TaskTaxonomy::Task1,
        )
        .unwrap_err();
        assert_eq!(
            err,
            LabelError::Gap {
                index: 1,
                expected: 50,
                found: 60
            }
        );
    }

    #[test]
    fn overlap_and_coverage_are_reported() {
        let overlap = check_boundaries(
            &[seg(0, 60, LanguageId::English), seg(50, 100, LanguageId::IsiZulu)],
            100,
        )
        .unwrap_err();
        assert!(matches!(overlap, LabelError::Overlap { index: 1, .. }));

        let coverage = check_boundaries(&[seg(0, 90, LanguageId::English)], 100).unwrap_err();
        assert_eq!(
            coverage,
            LabelError::Coverage {
                covered: 90,
                expected: 100
            }
        );
    }

    #[test]
    fn constant_track_downsamples_to_constant() {
        let track = LabelTrack {
            labels: vec![3; 1000],
            taxonomy: TaskTaxonomy::Task3,
        };
        for t in [1, 7, 100] {
            let s = downsample_labels(&track, t).unwrap();
            assert_eq!(s.labels, vec![3; t]);
        }
    }

    #[test]
    fn majority_rule_prefers_the_larger_count() {
        let mut labels = vec![1; 170];
        labels.extend(vec![2; 150]);
        let track = LabelTrack {
            labels,
            taxonomy: TaskTaxonomy::Task3,
        };
        let s = downsample_labels(&track, 1).unwrap();
        assert_eq!(s.labels, vec![1]);
    }

    #[test]
    fn ties_break_toward_the_earliest_class_in_the_window() {
        let mut labels = vec![4; 5];
        labels.extend(vec![0; 5]);
        let track = LabelTrack {
            labels,
            taxonomy: TaskTaxonomy::Task3,
        };
        let s = downsample_labels(&track, 1).unwrap();
        assert_eq!(s.labels, vec![4]);
    }

    #[test]
    fn downsample_with_t_equal_n_is_identity() {
        let labels = vec![0, 1, 2, 3, 4, 0, 1, 2];
        let track = LabelTrack {
            labels: labels.clone(),
            taxonomy: TaskTaxonomy::Task3,
        };
        let s = downsample_labels(&track, labels.len()).unwrap();
        assert_eq!(s.labels, labels);
        assert_eq!(s.samples_per_segment, 1);
    }

    #[test]
    fn taxonomy_mapping_matches_the_language_hierarchy() {
        assert_eq!(TaskTaxonomy::Task2.map(LanguageId::IsiXhosa), 1);
        assert_eq!(TaskTaxonomy::Task1.map(LanguageId::Sesotho), 1);
        for tax in [TaskTaxonomy::Task1, TaskTaxonomy::Task2, TaskTaxonomy::Task3] {
            assert_eq!(tax.map(LanguageId::English), 0);
        }
    }

    #[test]
    fn map_taxonomy_coarsens_and_rejects_refinement() {
        let t3 = SegmentLabelTrack {
            labels: vec![0, 1, 2, 3, 4],
            taxonomy: TaskTaxonomy::Task3,
            samples_per_segment: 10,
        };
        let t2 = map_taxonomy(&t3, TaskTaxonomy::Task2).unwrap();
        assert_eq!(t2.labels, vec![0, 1, 1, 2, 2]);
        let t1 = map_taxonomy(&t3, TaskTaxonomy::Task1).unwrap();
        assert_eq!(t1.labels, vec![0, 1, 1, 1, 1]);

        let t1_track = SegmentLabelTrack {
            labels: vec![0, 1],
            taxonomy: TaskTaxonomy::Task1,
            samples_per_segment: 10,
        };
        assert_eq!(
            map_taxonomy(&t1_track, TaskTaxonomy::Task3).unwrap_err(),
            LabelError::IncompatibleTaxonomies
        );
    }

    #[test]
    fn downsample_rejects_empty_or_oversized_requests() {
        let track = LabelTrack {
            labels: vec![],
            taxonomy: TaskTaxonomy::Task1,
        };
        assert_eq!(downsample_labels(&track, 1).unwrap_err(), LabelError::EmptyTrack);
        let track = LabelTrack {
            labels: vec![0, 1],
            taxonomy: TaskTaxonomy::Task1,
        };
        assert!(downsample_labels(&track, 3).is_err());
    }
}
