use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::CorpusError;

/// Emotion label space: seven classification categories plus `other`.
///
/// Integer codes 0..=7 in the order below are stable; they are used in file
/// formats and as the deterministic tie-break for importance ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Neutral,
    Happy,
    Surprise,
    Sad,
    Disgust,
    Anger,
    Fear,
    Other,
}

impl EmotionLabel {
    /// All eight labels in code order.
    pub const ALL: [EmotionLabel; 8] = [
        EmotionLabel::Neutral,
        EmotionLabel::Happy,
        EmotionLabel::Surprise,
        EmotionLabel::Sad,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
        EmotionLabel::Fear,
        EmotionLabel::Other,
    ];

    /// The seven-class label space used for model training and evaluation.
    pub const CLASSES: [EmotionLabel; 7] = [
        EmotionLabel::Neutral,
        EmotionLabel::Happy,
        EmotionLabel::Surprise,
        EmotionLabel::Sad,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
        EmotionLabel::Fear,
    ];

    pub const N_CLASSES: usize = 7;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CorpusError> {
        Self::ALL
            .iter()
            .find(|l| l.as_str() == s)
            .copied()
            .ok_or_else(|| CorpusError::UnknownLabel(s.to_string()))
    }

    pub fn is_other(self) -> bool {
        self == EmotionLabel::Other
    }

    /// Class index in the seven-class space; `None` for `other`.
    pub fn class_index(self) -> Option<usize> {
        if self.is_other() {
            None
        } else {
            Some(self as usize)
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dialogues are dyadic; the first speaker is `A`, the other `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpeakerRole {
    A,
    B,
}

impl SpeakerRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeakerRole::A => "A",
            SpeakerRole::B => "B",
        }
    }

    pub fn other(self) -> SpeakerRole {
        match self {
            SpeakerRole::A => SpeakerRole::B,
            SpeakerRole::B => SpeakerRole::A,
        }
    }
}

impl fmt::Display for SpeakerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeBand {
    Child,
    Young,
    Mid,
    Old,
}

impl AgeBand {
    pub fn as_str(self) -> &'static str {
        match self {
            AgeBand::Child => "child",
            AgeBand::Young => "young",
            AgeBand::Mid => "mid",
            AgeBand::Old => "old",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        assert_eq!(EmotionLabel::Neutral.code(), 0);
        assert_eq!(EmotionLabel::Happy.code(), 1);
        assert_eq!(EmotionLabel::Surprise.code(), 2);
        assert_eq!(EmotionLabel::Sad.code(), 3);
        assert_eq!(EmotionLabel::Disgust.code(), 4);
        assert_eq!(EmotionLabel::Anger.code(), 5);
        assert_eq!(EmotionLabel::Fear.code(), 6);
        assert_eq!(EmotionLabel::Other.code(), 7);
    }

    #[test]
    fn parse_roundtrip() {
        for l in EmotionLabel::ALL {
            assert_eq!(EmotionLabel::parse(l.as_str()).unwrap(), l);
        }
        assert!(EmotionLabel::parse("joy").is_err());
    }

    #[test]
    fn seven_class_space_excludes_other() {
        assert_eq!(EmotionLabel::CLASSES.len(), 7);
        assert!(EmotionLabel::CLASSES.iter().all(|l| !l.is_other()));
        assert_eq!(EmotionLabel::Other.class_index(), None);
        assert_eq!(EmotionLabel::Fear.class_index(), Some(6));
    }
}
