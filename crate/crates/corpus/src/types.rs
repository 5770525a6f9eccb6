use std::collections::BTreeMap;

use crate::error::CorpusError;
use crate::label::{AgeBand, EmotionLabel, Gender, SpeakerRole};

/// One annotator's ordered label list for one utterance, most important
/// label first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAnnotation {
    pub annotator_id: String,
    pub labels: Vec<EmotionLabel>,
}

impl RawAnnotation {
    pub fn new(annotator_id: impl Into<String>, labels: Vec<EmotionLabel>) -> Result<Self, CorpusError> {
        let annotator_id = annotator_id.into();
        if labels.is_empty() || labels.len() > 8 {
            return Err(CorpusError::InvalidUtterance {
                utt_id: annotator_id,
                msg: format!("annotation must list 1..=8 labels, got {}", labels.len()),
            });
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(CorpusError::InvalidUtterance {
                    utt_id: annotator_id,
                    msg: format!("duplicate label `{l}` within one annotation"),
                });
            }
        }
        Ok(RawAnnotation { annotator_id, labels })
    }

    /// The annotator's most important label.
    pub fn primary(&self) -> EmotionLabel {
        self.labels[0]
    }
}

/// One finalized label with its summed importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinalEntry {
    pub label: EmotionLabel,
    pub importance: u32,
}

/// Finalized emotion labels for one utterance, ordered by importance
/// descending with ties broken by label code ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalLabelSet {
    entries: Vec<FinalEntry>,
}

impl FinalLabelSet {
    pub fn new(entries: Vec<FinalEntry>) -> Result<Self, CorpusError> {
        if entries.is_empty() {
            return Err(CorpusError::InvalidUtterance {
                utt_id: String::new(),
                msg: "final label set must be non-empty".into(),
            });
        }
        for w in entries.windows(2) {
            let strictly_before = w[0].importance > w[1].importance
                || (w[0].importance == w[1].importance && w[0].label.code() < w[1].label.code());
            if !strictly_before {
                return Err(CorpusError::InvalidUtterance {
                    utt_id: String::new(),
                    msg: "final entries not sorted by importance desc, label code asc".into(),
                });
            }
        }
        Ok(FinalLabelSet { entries })
    }

    pub fn entries(&self) -> &[FinalEntry] {
        &self.entries
    }

    /// The single-label training target.
    pub fn primary(&self) -> EmotionLabel {
        self.entries[0].label
    }

    /// An utterance with two or more finalized labels carries a blended
    /// emotion.
    pub fn is_blended(&self) -> bool {
        self.entries.len() >= 2
    }
}

/// One contiguous speech segment by one speaker; the unit of labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker: SpeakerRole,
    pub text: String,
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
    pub annotations: Vec<RawAnnotation>,
    pub final_labels: Option<FinalLabelSet>,
}

impl Utterance {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.utt_id.is_empty() {
            return Err(CorpusError::InvalidUtterance {
                utt_id: "<empty>".into(),
                msg: "utt_id must be non-empty".into(),
            });
        }
        if let (Some(s), Some(e)) = (self.start_ms, self.end_ms) {
            if e < s {
                return Err(CorpusError::InvalidUtterance {
                    utt_id: self.utt_id.clone(),
                    msg: format!("end_ms {e} before start_ms {s}"),
                });
            }
        }
        Ok(())
    }

    /// Whitespace-separated token count when the text contains whitespace,
    /// character count otherwise (character-level scripts).
    pub fn token_len(&self) -> usize {
        if self.text.contains(char::is_whitespace) {
            self.text.split_whitespace().count()
        } else {
            self.text.chars().count()
        }
    }

    /// Primary finalized label, if finalized.
    pub fn primary(&self) -> Option<EmotionLabel> {
        self.final_labels.as_ref().map(|f| f.primary())
    }
}

/// Maximal run of consecutive utterances by one speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub utterances: Vec<Utterance>,
}

impl Turn {
    pub fn speaker(&self) -> SpeakerRole {
        self.utterances[0].speaker
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// Group a flat utterance list into turns: each turn is a maximal run of
/// consecutive utterances by the same speaker, in input order.
pub fn group_into_turns(utterances: Vec<Utterance>) -> Vec<Turn> {
    let mut turns: Vec<Turn> = Vec::new();
    for utt in utterances {
        match turns.last_mut() {
            Some(turn) if turn.speaker() == utt.speaker => turn.utterances.push(utt),
            _ => turns.push(Turn {
                utterances: vec![utt],
            }),
        }
    }
    turns
}

/// Demographic metadata for one speaker role within a dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpeakerMeta {
    pub gender: Option<Gender>,
    pub age_band: Option<AgeBand>,
    pub role_name: Option<String>,
}

/// A dyadic dialogue: alternating turns between speakers A and B.
#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub dialog_id: String,
    pub tv_series: String,
    pub turns: Vec<Turn>,
    pub speaker_meta: BTreeMap<SpeakerRole, SpeakerMeta>,
}

impl Dialogue {
    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.turns.iter().flat_map(|t| t.utterances.iter())
    }

    pub fn utterances_mut(&mut self) -> impl Iterator<Item = &mut Utterance> {
        self.turns.iter_mut().flat_map(|t| t.utterances.iter_mut())
    }

    pub fn n_utterances(&self) -> usize {
        self.turns.iter().map(Turn::len).sum()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.dialog_id.is_empty() {
            return Err(CorpusError::InvalidDialogue {
                dialog_id: "<empty>".into(),
                msg: "dialog_id must be non-empty".into(),
            });
        }
        if self.tv_series.is_empty() {
            return Err(CorpusError::InvalidDialogue {
                dialog_id: self.dialog_id.clone(),
                msg: "tv_series must be non-empty".into(),
            });
        }
        if self.turns.is_empty() {
            return Err(CorpusError::InvalidDialogue {
                dialog_id: self.dialog_id.clone(),
                msg: "dialogue must contain at least one utterance".into(),
            });
        }
        for turn in &self.turns {
            if turn.is_empty() {
                return Err(CorpusError::InvalidDialogue {
                    dialog_id: self.dialog_id.clone(),
                    msg: "empty turn".into(),
                });
            }
            if turn.utterances.iter().any(|u| u.speaker != turn.speaker()) {
                return Err(CorpusError::InvalidDialogue {
                    dialog_id: self.dialog_id.clone(),
                    msg: "mixed speakers within one turn".into(),
                });
            }
        }
        for w in self.turns.windows(2) {
            if w[0].speaker() == w[1].speaker() {
                return Err(CorpusError::InvalidDialogue {
                    dialog_id: self.dialog_id.clone(),
                    msg: "adjacent turns share a speaker".into(),
                });
            }
        }
        for utt in self.utterances() {
            utt.validate()?;
        }
        Ok(())
    }
}

/// A set of dialogues with globally unique dialogue and utterance ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn n_dialogues(&self) -> usize {
        self.dialogues.len()
    }

    pub fn n_utterances(&self) -> usize {
        self.dialogues.iter().map(Dialogue::n_utterances).sum()
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.dialogues.iter().flat_map(Dialogue::utterances)
    }

    /// Constant annotator count across annotated utterances, if any
    /// utterance carries annotations.
    pub fn annotator_count(&self) -> Option<usize> {
        self.utterances()
            .find(|u| !u.annotations.is_empty())
            .map(|u| u.annotations.len())
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut dialog_ids = std::collections::HashSet::new();
        let mut utt_ids = std::collections::HashSet::new();
        for d in &self.dialogues {
            d.validate()?;
            if !dialog_ids.insert(d.dialog_id.as_str()) {
                return Err(CorpusError::DuplicateDialogId(d.dialog_id.clone()));
            }
            for u in d.utterances() {
                if !utt_ids.insert(u.utt_id.as_str()) {
                    return Err(CorpusError::DuplicateUttId(u.utt_id.clone()));
                }
            }
        }
        // Annotator count is a per-corpus constant k >= 2.
        let mut expected: Option<usize> = None;
        for u in self.utterances() {
            if u.annotations.is_empty() {
                continue;
            }
            match expected {
                None => {
                    if u.annotations.len() < 2 {
                        return Err(CorpusError::TooFewAnnotators(u.annotations.len()));
                    }
                    expected = Some(u.annotations.len());
                }
                Some(k) if u.annotations.len() != k => {
                    return Err(CorpusError::InconsistentAnnotatorCount {
                        utt_id: u.utt_id.clone(),
                        found: u.annotations.len(),
                        expected: k,
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }
}
