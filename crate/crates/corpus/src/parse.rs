//! Line-delimited corpus interchange format.
//!
//! One dialogue per line, UTF-8 JSON. Each record carries a flat utterance
//! list; turn grouping happens at parse time. Unknown keys are ignored with
//! a warning; non-monotone timestamps within a dialogue warn but do not
//! fail.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CorpusError;
use crate::label::{AgeBand, EmotionLabel, Gender, SpeakerRole};
use crate::types::{
    group_into_turns, Corpus, Dialogue, FinalEntry, FinalLabelSet, RawAnnotation, SpeakerMeta,
    Utterance,
};

/// Parse result: the validated corpus plus non-fatal warnings.
#[derive(Debug)]
pub struct Parsed {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    dialog_id: String,
    tv_series: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    speaker_meta: BTreeMap<String, SpeakerMetaRecord>,
    utterances: Vec<UtteranceRecord>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct SpeakerMetaRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    age_band: Option<AgeBand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role_name: Option<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    utt_id: String,
    speaker: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_ms: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end_ms: Option<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    annotations: Vec<Vec<String>>,
    #[serde(rename = "final", default, skip_serializing_if = "Option::is_none")]
    final_labels: Option<Vec<FinalEntryRecord>>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct FinalEntryRecord {
    label: String,
    importance: u32,
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Parsed, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus_reader(BufReader::new(file))
}

pub fn parse_corpus_reader(reader: impl Read) -> Result<Parsed, CorpusError> {
    let reader = BufReader::new(reader);
    let mut dialogues = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: format!("<line {line_no}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                msg: e.to_string(),
            })?;
        dialogues.push(convert_dialogue(record, line_no, &mut warnings)?);
    }
    let corpus = Corpus { dialogues };
    corpus.validate()?;
    Ok(Parsed { corpus, warnings })
}

fn convert_dialogue(
    record: DialogueRecord,
    line: usize,
    warnings: &mut Vec<String>,
) -> Result<Dialogue, CorpusError> {
    if !record.extra.is_empty() {
        warnings.push(format!(
            "line {line}: ignoring unknown dialogue key(s): {}",
            keys(&record.extra)
        ));
    }
    let mut speaker_meta = BTreeMap::new();
    for (role, meta) in record.speaker_meta {
        let role = parse_role(&role, line)?;
        if !meta.extra.is_empty() {
            warnings.push(format!(
                "line {line}: ignoring unknown speaker_meta key(s): {}",
                keys(&meta.extra)
            ));
        }
        speaker_meta.insert(
            role,
            SpeakerMeta {
                gender: meta.gender,
                age_band: meta.age_band,
                role_name: meta.role_name,
            },
        );
    }

    let mut utterances = Vec::with_capacity(record.utterances.len());
    let mut prev_start: Option<i64> = None;
    for u in record.utterances {
        if !u.extra.is_empty() {
            warnings.push(format!(
                "line {line}: ignoring unknown utterance key(s) on `{}`: {}",
                u.utt_id,
                keys(&u.extra)
            ));
        }
        let speaker = parse_role(&u.speaker, line)?;
        let annotations = u
            .annotations
            .iter()
            .enumerate()
            .map(|(k, labels)| {
                let labels = labels
                    .iter()
                    .map(|s| EmotionLabel::parse(s))
                    .collect::<Result<Vec<_>, _>>()?;
                RawAnnotation::new(format!("a{}", k + 1), labels).map_err(|_| {
                    CorpusError::InvalidUtterance {
                        utt_id: u.utt_id.clone(),
                        msg: format!("invalid annotation #{}", k + 1),
                    }
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let final_labels = match u.final_labels {
            None => None,
            Some(entries) => {
                let entries = entries
                    .iter()
                    .map(|e| {
                        Ok(FinalEntry {
                            label: EmotionLabel::parse(&e.label)?,
                            importance: e.importance,
                        })
                    })
                    .collect::<Result<Vec<_>, CorpusError>>()?;
                Some(
                    FinalLabelSet::new(entries).map_err(|_| CorpusError::InvalidUtterance {
                        utt_id: u.utt_id.clone(),
                        msg: "final entries not sorted by importance desc, label code asc".into(),
                    })?,
                )
            }
        };
        if let (Some(prev), Some(cur)) = (prev_start, u.start_ms) {
            if cur < prev {
                warnings.push(format!(
                    "line {line}: non-monotone timestamps at utterance `{}`",
                    u.utt_id
                ));
            }
        }
        if u.start_ms.is_some() {
            prev_start = u.start_ms;
        }
        let utt = Utterance {
            utt_id: u.utt_id,
            speaker,
            text: u.text,
            start_ms: u.start_ms,
            end_ms: u.end_ms,
            annotations,
            final_labels,
        };
        utt.validate()?;
        utterances.push(utt);
    }

    let dialogue = Dialogue {
        dialog_id: record.dialog_id,
        tv_series: record.tv_series,
        turns: group_into_turns(utterances),
        speaker_meta,
    };
    dialogue.validate()?;
    Ok(dialogue)
}

fn parse_role(s: &str, line: usize) -> Result<SpeakerRole, CorpusError> {
    match s {
        "A" => Ok(SpeakerRole::A),
        "B" => Ok(SpeakerRole::B),
        _ => Err(CorpusError::UnknownSpeakerRole {
            line,
            role: s.to_string(),
        }),
    }
}

fn keys(map: &BTreeMap<String, serde_json::Value>) -> String {
    map.keys().cloned().collect::<Vec<_>>().join(", ")
}

/// Render the corpus in the interchange format; output is deterministic for
/// a given corpus value.
pub fn serialize_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for d in &corpus.dialogues {
        let record = DialogueRecord {
            dialog_id: d.dialog_id.clone(),
            tv_series: d.tv_series.clone(),
            speaker_meta: d
                .speaker_meta
                .iter()
                .map(|(role, meta)| {
                    (
                        role.as_str().to_string(),
                        SpeakerMetaRecord {
                            gender: meta.gender,
                            age_band: meta.age_band,
                            role_name: meta.role_name.clone(),
                            extra: BTreeMap::new(),
                        },
                    )
                })
                .collect(),
            utterances: d
                .utterances()
                .map(|u| UtteranceRecord {
                    utt_id: u.utt_id.clone(),
                    speaker: u.speaker.as_str().to_string(),
                    text: u.text.clone(),
                    start_ms: u.start_ms,
                    end_ms: u.end_ms,
                    annotations: u
                        .annotations
                        .iter()
                        .map(|a| a.labels.iter().map(|l| l.as_str().to_string()).collect())
                        .collect(),
                    final_labels: u.final_labels.as_ref().map(|f| {
                        f.entries()
                            .iter()
                            .map(|e| FinalEntryRecord {
                                label: e.label.as_str().to_string(),
                                importance: e.importance,
                            })
                            .collect()
                    }),
                    extra: BTreeMap::new(),
                })
                .collect(),
            extra: BTreeMap::new(),
        };
        out.push_str(&serde_json::to_string(&record).expect("corpus record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(serialize_corpus(corpus).as_bytes())
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(s: &str) -> String {
        s.to_string()
    }

    #[test]
    fn parses_and_groups_turns() {
        let input = line(
            r#"{"dialog_id":"d1","tv_series":"s1","utterances":[
            {"utt_id":"u1","speaker":"A","text":"hi","annotations":[["neutral"],["neutral"]]},
            {"utt_id":"u2","speaker":"A","text":"there","annotations":[["happy"],["happy"]]},
            {"utt_id":"u3","speaker":"B","text":"hello","annotations":[["neutral"],["neutral"]]}]}"#
                .replace('\n', ""),
        );
        let parsed = parse_corpus_reader(input.as_bytes()).unwrap();
        assert_eq!(parsed.corpus.n_dialogues(), 1);
        let d = &parsed.corpus.dialogues[0];
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[0].len(), 2);
        assert_eq!(d.turns[1].len(), 1);
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let parsed = parse_corpus_reader("".as_bytes()).unwrap();
        assert_eq!(parsed.corpus.n_dialogues(), 0);
        let parsed = parse_corpus_reader("\n\n".as_bytes()).unwrap();
        assert_eq!(parsed.corpus.n_dialogues(), 0);
    }

    #[test]
    fn duplicate_utt_id_names_the_id() {
        let input = r#"{"dialog_id":"d1","tv_series":"s1","utterances":[{"utt_id":"u1","speaker":"A","text":"x"},{"utt_id":"u1","speaker":"B","text":"y"}]}"#;
        let err = parse_corpus_reader(input.as_bytes()).unwrap_err();
        match err {
            CorpusError::DuplicateUttId(id) => assert_eq!(id, "u1"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_role_rejected_with_line() {
        let input = r#"{"dialog_id":"d1","tv_series":"s1","utterances":[{"utt_id":"u1","speaker":"C","text":"x"}]}"#;
        let err = parse_corpus_reader(input.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownSpeakerRole { line: 1, .. }));
    }

    #[test]
    fn malformed_json_reports_line_number() {
        let input = "{\"dialog_id\":\"d1\",\"tv_series\":\"s1\",\"utterances\":[{\"utt_id\":\"u1\",\"speaker\":\"A\",\"text\":\"x\"}]}\n{not json}";
        let err = parse_corpus_reader(input.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRecord { line: 2, .. }));
    }

    #[test]
    fn unknown_keys_warn() {
        let input = r#"{"dialog_id":"d1","tv_series":"s1","mystery":1,"utterances":[{"utt_id":"u1","speaker":"A","text":"x","bonus":true}]}"#;
        let parsed = parse_corpus_reader(input.as_bytes()).unwrap();
        assert_eq!(parsed.warnings.len(), 2);
        assert!(parsed.warnings[0].contains("mystery"));
        assert!(parsed.warnings[1].contains("bonus"));
    }

    #[test]
    fn non_monotone_timestamps_warn_not_fail() {
        let input = r#"{"dialog_id":"d1","tv_series":"s1","utterances":[{"utt_id":"u1","speaker":"A","text":"x","start_ms":100,"end_ms":200},{"utt_id":"u2","speaker":"B","text":"y","start_ms":50,"end_ms":80}]}"#;
        let parsed = parse_corpus_reader(input.as_bytes()).unwrap();
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("non-monotone"));
    }

    #[test]
    fn inconsistent_annotator_count_rejected() {
        let input = r#"{"dialog_id":"d1","tv_series":"s1","utterances":[{"utt_id":"u1","speaker":"A","text":"x","annotations":[["sad"],["sad"]]},{"utt_id":"u2","speaker":"B","text":"y","annotations":[["sad"],["sad"],["sad"]]}]}"#;
        let err = parse_corpus_reader(input.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::InconsistentAnnotatorCount { .. }));
    }

    #[test]
    fn single_annotator_rejected() {
        let input = r#"{"dialog_id":"d1","tv_series":"s1","utterances":[{"utt_id":"u1","speaker":"A","text":"x","annotations":[["sad"]]}]}"#;
        let err = parse_corpus_reader(input.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::TooFewAnnotators(1)));
    }

    #[test]
    fn serialize_then_parse_is_structurally_equal() {
        let input = r#"{"dialog_id":"d1","tv_series":"s1","speaker_meta":{"A":{"gender":"female","age_band":"young","role_name":"Li"},"B":{"gender":"male","age_band":"old"}},"utterances":[{"utt_id":"u1","speaker":"A","text":"x y","start_ms":0,"end_ms":900,"annotations":[["anger","sad"],["anger"],["sad"]],"final":[{"label":"anger","importance":14},{"label":"sad","importance":13}]},{"utt_id":"u2","speaker":"B","text":"z","start_ms":1000,"end_ms":1500,"annotations":[["neutral"],["neutral"],["neutral"]],"final":[{"label":"neutral","importance":21}]}]}"#;
        let parsed = parse_corpus_reader(input.as_bytes()).unwrap();
        let text1 = serialize_corpus(&parsed.corpus);
        let reparsed = parse_corpus_reader(text1.as_bytes()).unwrap();
        assert_eq!(parsed.corpus, reparsed.corpus);
        let text2 = serialize_corpus(&reparsed.corpus);
        assert_eq!(text1, text2);
    }
}
