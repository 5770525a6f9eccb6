//! Inter-annotator agreement via Fleiss' kappa.
//!
//! Ratings use each annotator's first (most important) label, one category
//! per rater per item. All reductions run left-to-right over items, then
//! categories, so results are bit-reproducible.

use crate::error::CorpusError;
use crate::label::EmotionLabel;
use crate::types::{Corpus, Utterance};

/// Which label space the rating matrix uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CategoryMode {
    /// The seven emotion classes; utterances where any annotator's primary
    /// label is `other` are excluded.
    Seven,
    /// All eight labels including `other`.
    Eight,
}

impl CategoryMode {
    pub fn n_categories(self) -> usize {
        match self {
            CategoryMode::Seven => 7,
            CategoryMode::Eight => 8,
        }
    }
}

/// Items x categories count matrix with a fixed number of raters per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    counts: Vec<Vec<u32>>,
    raters_per_item: usize,
    n_categories: usize,
}

impl RatingMatrix {
    pub fn new(counts: Vec<Vec<u32>>, raters_per_item: usize) -> Result<Self, CorpusError> {
        if raters_per_item < 2 {
            return Err(CorpusError::InvalidRatingMatrix(format!(
                "raters per item must be >= 2, got {raters_per_item}"
            )));
        }
        let n_categories = counts.first().map_or(0, Vec::len);
        for (i, row) in counts.iter().enumerate() {
            if row.len() != n_categories {
                return Err(CorpusError::InvalidRatingMatrix(format!(
                    "row {i} has {} categories, expected {n_categories}",
                    row.len()
                )));
            }
            let sum: u32 = row.iter().sum();
            if sum as usize != raters_per_item {
                return Err(CorpusError::InvalidRatingMatrix(format!(
                    "row {i} sums to {sum}, expected {raters_per_item}"
                )));
            }
        }
        Ok(RatingMatrix {
            counts,
            raters_per_item,
            n_categories,
        })
    }

    pub fn n_items(&self) -> usize {
        self.counts.len()
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn raters_per_item(&self) -> usize {
        self.raters_per_item
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }
}

/// Tally each annotator's primary label per utterance.
///
/// In seven-class mode, utterances where any annotator chose `other` first
/// are skipped. Utterances without annotations are skipped.
pub fn build_rating_matrix<'a>(
    utterances: impl IntoIterator<Item = &'a Utterance>,
    mode: CategoryMode,
) -> Result<RatingMatrix, CorpusError> {
    let n_cat = mode.n_categories();
    let mut counts = Vec::new();
    let mut raters: Option<usize> = None;
    for utt in utterances {
        if utt.annotations.is_empty() {
            continue;
        }
        match raters {
            None => raters = Some(utt.annotations.len()),
            Some(k) if k != utt.annotations.len() => {
                return Err(CorpusError::InconsistentAnnotatorCount {
                    utt_id: utt.utt_id.clone(),
                    found: utt.annotations.len(),
                    expected: k,
                });
            }
            _ => {}
        }
        if mode == CategoryMode::Seven
            && utt.annotations.iter().any(|a| a.primary().is_other())
        {
            continue;
        }
        let mut row = vec![0u32; n_cat];
        for annotation in &utt.annotations {
            row[annotation.primary().code() as usize] += 1;
        }
        counts.push(row);
    }
    let raters = raters.ok_or_else(|| {
        CorpusError::InvalidRatingMatrix("no annotated utterances".into())
    })?;
    RatingMatrix::new(counts, raters)
}

/// Fleiss' kappa for a rating matrix.
///
/// kappa = (pbar - pbar_e) / (1 - pbar_e), with per-item agreement
/// P_i = (sum_j n_ij^2 - n) / (n (n - 1)). When every rating falls in one
/// single category the expected agreement is 1 and kappa is undefined;
/// that degenerate case is a defined error rather than a silent NaN.
pub fn fleiss_kappa(m: &RatingMatrix) -> Result<f64, CorpusError> {
    let n_items = m.n_items();
    if n_items == 0 {
        return Err(CorpusError::InvalidRatingMatrix("no items".into()));
    }
    let n = m.raters_per_item() as f64;

    let mut pbar = 0.0;
    for row in m.counts() {
        let mut sum_sq = 0.0;
        for &c in row {
            sum_sq += (c as f64) * (c as f64);
        }
        pbar += (sum_sq - n) / (n * (n - 1.0));
    }
    pbar /= n_items as f64;

    let total = n_items as f64 * n;
    let mut pbar_e = 0.0;
    for j in 0..m.n_categories() {
        let mut col = 0.0;
        for row in m.counts() {
            col += row[j] as f64;
        }
        let p_j = col / total;
        pbar_e += p_j * p_j;
    }

    if pbar_e >= 1.0 {
        return Err(CorpusError::ZeroVarianceRatings);
    }
    Ok((pbar - pbar_e) / (1.0 - pbar_e))
}

/// Per-dialogue agreement entry.
#[derive(Debug, Clone)]
pub struct DialogueAgreement {
    pub dialog_id: String,
    /// `None` when kappa is not computable for the dialogue (fewer than two
    /// ratable items, or zero-variance ratings).
    pub kappa: Option<f64>,
    pub below_threshold: bool,
}

/// Compute kappa per dialogue and flag dialogues below `threshold`.
pub fn dialogue_agreement_report(
    corpus: &Corpus,
    threshold: f64,
    mode: CategoryMode,
) -> Result<Vec<DialogueAgreement>, CorpusError> {
    let mut report = Vec::with_capacity(corpus.dialogues.len());
    for dialogue in &corpus.dialogues {
        let kappa = match build_rating_matrix(dialogue.utterances(), mode) {
            Ok(m) if m.n_items() >= 2 => fleiss_kappa(&m).ok(),
            _ => None,
        };
        report.push(DialogueAgreement {
            dialog_id: dialogue.dialog_id.clone(),
            kappa,
            below_threshold: kappa.is_some_and(|k| k < threshold),
        });
    }
    Ok(report)
}

/// Overall kappa across every annotated utterance in the corpus.
pub fn overall_kappa(corpus: &Corpus, mode: CategoryMode) -> Result<f64, CorpusError> {
    let m = build_rating_matrix(corpus.utterances(), mode)?;
    fleiss_kappa(&m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RawAnnotation;
    use EmotionLabel::*;

    fn utt_with(id: &str, primaries: &[EmotionLabel]) -> Utterance {
        Utterance {
            utt_id: id.into(),
            speaker: crate::label::SpeakerRole::A,
            text: String::new(),
            start_ms: None,
            end_ms: None,
            annotations: primaries
                .iter()
                .enumerate()
                .map(|(k, l)| RawAnnotation::new(format!("a{k}"), vec![*l]).unwrap())
                .collect(),
            final_labels: None,
        }
    }

    #[test]
    fn rating_matrix_counts_primaries() {
        let utts = [
            utt_with("u1", &[Anger, Anger, Anger]),
            utt_with("u2", &[Sad, Sad, Sad]),
        ];
        let m = build_rating_matrix(utts.iter(), CategoryMode::Seven).unwrap();
        assert_eq!(m.counts()[0], vec![0, 0, 0, 0, 0, 3, 0]);
        assert_eq!(m.counts()[1], vec![0, 0, 0, 3, 0, 0, 0]);
    }

    #[test]
    fn rating_matrix_split_item() {
        let utts = [utt_with("u1", &[Happy, Sad, Anger])];
        let m = build_rating_matrix(utts.iter(), CategoryMode::Seven).unwrap();
        let row = &m.counts()[0];
        assert_eq!(row.iter().sum::<u32>(), 3);
        assert_eq!(row.iter().filter(|&&c| c == 1).count(), 3);
    }

    #[test]
    fn seven_class_mode_excludes_other_primaries() {
        let utts = [
            utt_with("u1", &[Other, Anger, Anger]),
            utt_with("u2", &[Sad, Sad, Sad]),
            utt_with("u3", &[Anger, Anger, Anger]),
        ];
        let m = build_rating_matrix(utts.iter(), CategoryMode::Seven).unwrap();
        assert_eq!(m.n_items(), 2);
        let m8 = build_rating_matrix(utts.iter(), CategoryMode::Eight).unwrap();
        assert_eq!(m8.n_items(), 3);
        assert_eq!(m8.n_categories(), 8);
    }

    #[test]
    fn unanimous_two_categories_is_exactly_one() {
        let m = RatingMatrix::new(
            vec![vec![0, 0, 0, 0, 0, 3, 0], vec![0, 0, 0, 3, 0, 0, 0]],
            3,
        )
        .unwrap();
        assert_eq!(fleiss_kappa(&m).unwrap(), 1.0);
    }

    #[test]
    fn zero_variance_is_a_defined_error() {
        let m = RatingMatrix::new(
            vec![vec![3, 0, 0, 0, 0, 0, 0], vec![3, 0, 0, 0, 0, 0, 0]],
            3,
        )
        .unwrap();
        assert!(matches!(
            fleiss_kappa(&m).unwrap_err(),
            CorpusError::ZeroVarianceRatings
        ));
    }

    #[test]
    fn textbook_example_value() {
        // Classic worked example: 10 items, 14 raters, 5 categories;
        // kappa = 0.20993070442195522 under the standard formula.
        let counts = vec![
            vec![0, 0, 0, 0, 14],
            vec![0, 2, 6, 4, 2],
            vec![0, 0, 3, 5, 6],
            vec![0, 3, 9, 2, 0],
            vec![2, 2, 8, 1, 1],
            vec![7, 7, 0, 0, 0],
            vec![3, 2, 6, 3, 0],
            vec![2, 5, 3, 2, 2],
            vec![6, 5, 2, 1, 0],
            vec![0, 2, 2, 3, 7],
        ];
        let m = RatingMatrix::new(counts, 14).unwrap();
        let k = fleiss_kappa(&m).unwrap();
        assert!((k - 0.209930704421955).abs() < 1e-12, "kappa {k}");
    }

    #[test]
    fn report_flags_low_agreement() {
        use crate::types::{Corpus, Dialogue};
        let unanimous = Dialogue {
            dialog_id: "d1".into(),
            tv_series: "s".into(),
            turns: crate::types::group_into_turns(vec![
                utt_with("u1", &[Anger, Anger, Anger]),
                utt_with("u2", &[Sad, Sad, Sad]),
            ]),
            speaker_meta: Default::default(),
        };
        let split = Dialogue {
            dialog_id: "d2".into(),
            tv_series: "s".into(),
            turns: crate::types::group_into_turns(vec![
                utt_with("u3", &[Happy, Sad, Anger]),
                utt_with("u4", &[Fear, Disgust, Neutral]),
            ]),
            speaker_meta: Default::default(),
        };
        let single_item = Dialogue {
            dialog_id: "d3".into(),
            tv_series: "s".into(),
            turns: crate::types::group_into_turns(vec![utt_with("u5", &[Sad, Sad, Sad])]),
            speaker_meta: Default::default(),
        };
        let corpus = Corpus {
            dialogues: vec![unanimous, split, single_item],
        };
        let report = dialogue_agreement_report(&corpus, 0.4, CategoryMode::Seven).unwrap();
        assert_eq!(report[0].kappa, Some(1.0));
        assert!(!report[0].below_threshold);
        assert!(report[1].kappa.unwrap() < 0.4);
        assert!(report[1].below_threshold);
        assert_eq!(report[2].kappa, None);
        assert!(!report[2].below_threshold);
    }

    #[test]
    fn threshold_zero_flags_only_negative_kappa() {
        use crate::types::{Corpus, Dialogue};
        let split = Dialogue {
            dialog_id: "d1".into(),
            tv_series: "s".into(),
            turns: crate::types::group_into_turns(vec![
                utt_with("u1", &[Happy, Sad, Anger]),
                utt_with("u2", &[Fear, Disgust, Neutral]),
            ]),
            speaker_meta: Default::default(),
        };
        let corpus = Corpus { dialogues: vec![split] };
        let report = dialogue_agreement_report(&corpus, 0.0, CategoryMode::Seven).unwrap();
        // fully split ratings give negative kappa, so this is flagged
        assert!(report[0].kappa.unwrap() < 0.0);
        assert!(report[0].below_threshold);
    }
}
