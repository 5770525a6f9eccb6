use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {msg}")]
    MalformedRecord { line: usize, msg: String },

    #[error("duplicate dialog_id `{0}`")]
    DuplicateDialogId(String),

    #[error("duplicate utt_id `{0}`")]
    DuplicateUttId(String),

    #[error("line {line}: unknown speaker role `{role}` (expected A or B)")]
    UnknownSpeakerRole { line: usize, role: String },

    #[error("unknown emotion label `{0}`")]
    UnknownLabel(String),

    #[error("utterance `{utt_id}`: {msg}")]
    InvalidUtterance { utt_id: String, msg: String },

    #[error("dialogue `{dialog_id}`: {msg}")]
    InvalidDialogue { dialog_id: String, msg: String },

    #[error("inconsistent annotator count: utterance `{utt_id}` has {found}, corpus uses {expected}")]
    InconsistentAnnotatorCount {
        utt_id: String,
        found: usize,
        expected: usize,
    },

    #[error("annotator count {0} below the minimum of 2")]
    TooFewAnnotators(usize),

    #[error("annotation importance position {0} out of range 0..=7")]
    ImportancePositionOutOfRange(usize),

    #[error("utterance `{0}` has no annotations")]
    MissingAnnotations(String),

    #[error("utterance `{0}` has no finalized label")]
    NotFinalized(String),

    #[error("rating matrix: {0}")]
    InvalidRatingMatrix(String),

    #[error("Fleiss' kappa undefined: zero-variance ratings (all ratings in one category)")]
    ZeroVarianceRatings,

    #[error("split ratios {0:?} must be positive and sum to 1")]
    InvalidRatios([f64; 3]),

    #[error("need at least 3 distinct TV series to split, found {0}")]
    TooFewSeries(usize),

    #[error("tv_series `{0}` is not covered by the split")]
    UncoveredSeries(String),

    #[error("evaluation inputs differ in length: gold {gold}, predictions {pred}")]
    EvalLengthMismatch { gold: usize, pred: usize },

    #[error("evaluation inputs are empty")]
    EvalEmpty,

    #[error("label `{0}` is outside the seven-class space")]
    LabelOutsideClassSpace(String),
}
