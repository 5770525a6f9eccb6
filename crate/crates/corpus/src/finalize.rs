//! Emotion annotation finalization.
//!
//! Majority vote over annotators: a label becomes final iff at least two
//! annotators listed it. Each annotator contributes an importance value of
//! `7 - position` for every label in their ordered list; a label's final
//! importance is the sum over annotators. Final entries are ordered by
//! importance descending, ties broken by label code ascending. Utterances
//! where no label reaches two votes are flagged for review instead.

use crate::error::CorpusError;
use crate::label::EmotionLabel;
use crate::types::{Corpus, FinalEntry, FinalLabelSet, RawAnnotation};

/// Why an utterance needs manual review.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReviewReason {
    /// No label was assigned by at least two annotators.
    NoMajority,
    /// The utterance belongs to a dialogue whose inter-annotator agreement
    /// fell below the review threshold.
    LowDialogueAgreement,
}

impl ReviewReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewReason::NoMajority => "no_majority",
            ReviewReason::LowDialogueAgreement => "low_dialogue_agreement",
        }
    }
}

/// Outcome of finalizing one utterance.
#[derive(Debug, Clone, PartialEq)]
pub enum FinalizeOutcome {
    Final(FinalLabelSet),
    NeedsReview(ReviewReason),
}

/// Importance value contributed by one annotator for the label at 0-based
/// `pos` in their list: 7 for the first label, 6 for the second, and so on.
/// Labels not listed contribute 0.
pub fn importance_of_position(pos: usize) -> Result<u32, CorpusError> {
    if pos > 7 {
        return Err(CorpusError::ImportancePositionOutOfRange(pos));
    }
    Ok(7 - pos as u32)
}

/// Apply the majority vote to one utterance's annotations.
pub fn finalize_utterance(annotations: &[RawAnnotation]) -> Result<FinalizeOutcome, CorpusError> {
    if annotations.len() < 2 {
        return Err(CorpusError::TooFewAnnotators(annotations.len()));
    }
    let mut votes = [0u32; 8];
    let mut importance = [0u32; 8];
    for annotation in annotations {
        for (pos, label) in annotation.labels.iter().enumerate() {
            let idx = label.code() as usize;
            votes[idx] += 1;
            importance[idx] += importance_of_position(pos)?;
        }
    }
    let mut entries: Vec<FinalEntry> = EmotionLabel::ALL
        .iter()
        .filter(|l| votes[l.code() as usize] >= 2)
        .map(|&label| FinalEntry {
            label,
            importance: importance[label.code() as usize],
        })
        .collect();
    if entries.is_empty() {
        return Ok(FinalizeOutcome::NeedsReview(ReviewReason::NoMajority));
    }
    entries.sort_by(|a, b| {
        b.importance
            .cmp(&a.importance)
            .then(a.label.code().cmp(&b.label.code()))
    });
    Ok(FinalizeOutcome::Final(
        FinalLabelSet::new(entries).expect("sorted entries form a valid set"),
    ))
}

/// Finalize every utterance in place.
///
/// Returns the utt_ids flagged as needing review (no majority); flagged
/// utterances keep `final_labels = None`. The corpus is otherwise unchanged.
pub fn finalize_corpus(corpus: &mut Corpus) -> Result<Vec<String>, CorpusError> {
    let mut flagged = Vec::new();
    for dialogue in &mut corpus.dialogues {
        for utt in dialogue.utterances_mut() {
            if utt.annotations.is_empty() {
                return Err(CorpusError::MissingAnnotations(utt.utt_id.clone()));
            }
            match finalize_utterance(&utt.annotations)? {
                FinalizeOutcome::Final(set) => utt.final_labels = Some(set),
                FinalizeOutcome::NeedsReview(_) => {
                    utt.final_labels = None;
                    flagged.push(utt.utt_id.clone());
                }
            }
        }
    }
    Ok(flagged)
}
