//! Probability-record schema, line-delimited parsing, and the normalization
//! from a raw pronoun pair to a binary scored instance.
//!
//! One record per line, each a JSON object with the fields `instance_id`,
//! `dataset`, `model`, `sentence_male`, `sentence_female`, `p_male`,
//! `p_female`, `human_label` (0 or 1) and an optional `group`. Unknown fields
//! are ignored with a warning.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result, Violation};

const KNOWN_FIELDS: [&str; 9] = [
    "instance_id",
    "dataset",
    "model",
    "sentence_male",
    "sentence_female",
    "p_male",
    "p_female",
    "human_label",
    "group",
];

/// Binary pronoun class. `Male` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Female = 0,
    Male = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Female => 0.0,
            Label::Male => 1.0,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Female),
            1 => Ok(Label::Male),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// One benchmark sentence pair with the raw probabilities a model assigned to
/// the male and female completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PronounPairRecord {
    pub instance_id: String,
    #[serde(rename = "dataset")]
    pub dataset_name: String,
    #[serde(rename = "model")]
    pub model_name: String,
    pub sentence_male: String,
    pub sentence_female: String,
    pub p_male: f64,
    pub p_female: f64,
    pub human_label: Label,
    #[serde(rename = "group", default, skip_serializing_if = "Option::is_none")]
    pub group_tag: Option<String>,
}

/// Binary view of a record: positive-class score, label, and the prediction
/// derived from the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub instance_id: String,
    /// Probability of the male class, in [0, 1].
    pub score: f64,
    pub label: Label,
    pub predicted: Label,
    /// Confidence in the predicted class, `max(score, 1 - score)`.
    pub confidence: f64,
    pub group_tag: Option<String>,
}

impl ScoredInstance {
    /// Builds an instance from a positive-class score; ties at 0.5 predict female.
    pub fn from_score(
        instance_id: impl Into<String>,
        score: f64,
        label: Label,
        group_tag: Option<String>,
    ) -> Self {
        let predicted = if score > 0.5 {
            Label::Male
        } else {
            Label::Female
        };
        ScoredInstance {
            instance_id: instance_id.into(),
            score,
            label,
            predicted,
            confidence: score.max(1.0 - score),
            group_tag,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.label
    }

    /// Returns a copy carrying `score` with prediction and confidence re-derived.
    pub fn with_score(&self, score: f64) -> Self {
        ScoredInstance::from_score(
            self.instance_id.clone(),
            score,
            self.label,
            self.group_tag.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Distinct dataset names, comma-joined in sorted order.
    pub dataset_name: String,
    pub record_count: usize,
    pub groups: BTreeSet<String>,
    /// Fraction of records labeled male; 0 when `empty`.
    pub label_balance: f64,
    pub empty: bool,
}

fn valid_probability(p: f64) -> bool {
    p > 0.0 && p <= 1.0
}

fn field<'a>(obj: &'a Map<String, Value>, line: usize, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::Parse {
        line,
        field: name.to_string(),
        message: "missing field".into(),
    })
}

fn string_field(obj: &Map<String, Value>, line: usize, name: &str) -> Result<String> {
    match field(obj, line, name)? {
        Value::String(s) => Ok(s.clone()),
        other => Err(Error::Parse {
            line,
            field: name.to_string(),
            message: format!("expected string, found {other}"),
        }),
    }
}

fn probability_field(obj: &Map<String, Value>, line: usize, name: &'static str) -> Result<f64> {
    let value = field(obj, line, name)?;
    let p = value.as_f64().ok_or_else(|| Error::Parse {
        line,
        field: name.to_string(),
        message: format!("expected number, found {value}"),
    })?;
    if !valid_probability(p) {
        return Err(Error::ProbabilityOutOfRange {
            line,
            field: name,
            value: p,
        });
    }
    Ok(p)
}

fn parse_line(text: &str, line: usize) -> Result<PronounPairRecord> {
    let obj = match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(obj)) => obj,
        Ok(_) => {
            return Err(Error::Parse {
                line,
                field: "<record>".into(),
                message: "expected a JSON object".into(),
            })
        }
        Err(e) => {
            return Err(Error::Parse {
                line,
                field: "<record>".into(),
                message: e.to_string(),
            })
        }
    };

    for key in obj.keys() {
        if !KNOWN_FIELDS.contains(&key.as_str()) {
            log::warn!("line {line}: ignoring unknown field `{key}`");
        }
    }

    let human_label = {
        let value = field(&obj, line, "human_label")?;
        value
            .as_u64()
            .and_then(|v| u8::try_from(v).ok())
            .and_then(|v| Label::try_from(v).ok())
            .ok_or_else(|| Error::Parse {
                line,
                field: "human_label".into(),
                message: format!("expected 0 or 1, found {value}"),
            })?
    };

    let group_tag = match obj.get("group") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            return Err(Error::Parse {
                line,
                field: "group".into(),
                message: format!("expected string, found {other}"),
            })
        }
    };

    Ok(PronounPairRecord {
        instance_id: string_field(&obj, line, "instance_id")?,
        dataset_name: string_field(&obj, line, "dataset")?,
        model_name: string_field(&obj, line, "model")?,
        sentence_male: string_field(&obj, line, "sentence_male")?,
        sentence_female: string_field(&obj, line, "sentence_female")?,
        p_male: probability_field(&obj, line, "p_male")?,
        p_female: probability_field(&obj, line, "p_female")?,
        human_label,
        group_tag,
    })
}

/// Parses a line-delimited record stream. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<PronounPairRecord>> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line, line_no)?;
        if let Some(&first_line) = seen.get(&record.instance_id) {
            return Err(Error::DuplicateId {
                instance_id: record.instance_id,
                first_line,
                second_line: line_no,
            });
        }
        seen.insert(record.instance_id.clone(), line_no);
        records.push(record);
    }
    Ok(records)
}

pub fn parse_records_str(text: &str) -> Result<Vec<PronounPairRecord>> {
    parse_records(text.as_bytes())
}

/// Writes records one per line. Floats use the shortest representation that
/// parses back to the same bits.
pub fn write_records<W: Write>(mut writer: W, records: &[PronounPairRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn records_to_string(records: &[PronounPairRecord]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn normalize_record(record: &PronounPairRecord) -> ScoredInstance {
    let score = record.p_male / (record.p_male + record.p_female);
    ScoredInstance::from_score(
        record.instance_id.clone(),
        score,
        record.human_label,
        record.group_tag.clone(),
    )
}

pub fn normalize_all(records: &[PronounPairRecord]) -> Vec<ScoredInstance> {
    records.iter().map(normalize_record).collect()
}

/// Checks every record invariant, collecting all violations before failing.
pub fn validate_records(records: &[PronounPairRecord]) -> Result<DatasetManifest> {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for r in records {
        if r.instance_id.is_empty() {
            violations.push(Violation {
                instance_id: r.instance_id.clone(),
                message: "empty instance_id".into(),
            });
        }
        if !seen.insert(r.instance_id.as_str()) {
            violations.push(Violation {
                instance_id: r.instance_id.clone(),
                message: "duplicate instance_id".into(),
            });
        }
        for (name, p) in [("p_male", r.p_male), ("p_female", r.p_female)] {
            if !valid_probability(p) {
                violations.push(Violation {
                    instance_id: r.instance_id.clone(),
                    message: format!("{name} = {p} outside (0, 1]"),
                });
            }
        }
    }
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }

    let datasets: BTreeSet<&str> = records.iter().map(|r| r.dataset_name.as_str()).collect();
    let groups = records.iter().filter_map(|r| r.group_tag.clone()).collect();
    let males = records
        .iter()
        .filter(|r| r.human_label == Label::Male)
        .count();
    let empty = records.is_empty();
    Ok(DatasetManifest {
        dataset_name: datasets.into_iter().collect::<Vec<_>>().join(","),
        record_count: records.len(),
        groups,
        label_balance: if empty {
            0.0
        } else {
            males as f64 / records.len() as f64
        },
        empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, p_male: f64, p_female: f64, label: Label) -> PronounPairRecord {
        PronounPairRecord {
            instance_id: id.into(),
            dataset_name: "winobias".into(),
            model_name: "m".into(),
            sentence_male: "he".into(),
            sentence_female: "she".into(),
            p_male,
            p_female,
            human_label: label,
            group_tag: None,
        }
    }

    const LINE: &str = r#"{"instance_id":"a1","dataset":"genderlex","model":"gpt-j","sentence_male":"won by him","sentence_female":"won by her","p_male":0.03,"p_female":0.01,"human_label":1}"#;

    #[test]
    fn parses_single_line() {
        let recs = parse_records_str(LINE).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].p_male, 0.03);
        assert_eq!(recs[0].p_female, 0.01);
        assert_eq!(recs[0].human_label, Label::Male);
        assert_eq!(recs[0].group_tag, None);
        assert_eq!(parse_records_str(&records_to_string(&recs)).unwrap(), recs);
    }

    #[test]
    fn empty_stream() {
        assert!(parse_records_str("").unwrap().is_empty());
        assert!(parse_records_str("\n\n").unwrap().is_empty());
    }

    #[test]
    fn zero_probability_rejected() {
        let text = format!("{LINE}\n{}", LINE.replace("a1", "a2").replace("0.03", "0"));
        let err = parse_records_str(&text).unwrap_err();
        assert!(matches!(
            err,
            Error::ProbabilityOutOfRange {
                line: 2,
                field: "p_male",
                ..
            }
        ));
        assert!(err
            .to_string()
            .contains("probability out of range (line 2)"));
    }

    #[test]
    fn probability_above_one_rejected() {
        let text = LINE.replace("0.01", "1.5");
        assert!(matches!(
            parse_records_str(&text).unwrap_err(),
            Error::ProbabilityOutOfRange {
                field: "p_female",
                ..
            }
        ));
        // exactly 1 is admissible
        assert!(parse_records_str(&LINE.replace("0.01", "1.0")).is_ok());
    }

    #[test]
    fn malformed_line_names_field() {
        let text = LINE.replace("\"human_label\":1", "\"human_label\":\"male\"");
        match parse_records_str(&text).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 1);
                assert_eq!(field, "human_label");
            }
            e => panic!("unexpected {e}"),
        }
        let text = LINE.replace("\"p_female\":0.01,", "");
        match parse_records_str(&text).unwrap_err() {
            Error::Parse { field, .. } => assert_eq!(field, "p_female"),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            parse_records_str("{not json").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn duplicate_id_names_both_lines() {
        let text = format!("{LINE}\n\n{LINE}");
        match parse_records_str(&text).unwrap_err() {
            Error::DuplicateId {
                first_line,
                second_line,
                ..
            } => assert_eq!((first_line, second_line), (1, 3)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_fields_ignored() {
        let text = LINE.replace("{", r#"{"extra":[1,2],"#);
        assert_eq!(parse_records_str(&text).unwrap().len(), 1);
    }

    #[test]
    fn normalize_examples() {
        let s = normalize_record(&record("x", 0.03, 0.01, Label::Male));
        assert!((s.score - 0.75).abs() < 1e-15);
        assert_eq!(s.predicted, Label::Male);
        assert!((s.confidence - 0.75).abs() < 1e-15);

        let s = normalize_record(&record("x", 0.02, 0.02, Label::Male));
        assert_eq!(s.score, 0.5);
        assert_eq!(s.predicted, Label::Female);
        assert_eq!(s.confidence, 0.5);

        // 1e-4 / (1e-4 + 999e-4) = 1/1000 exactly in rationals
        let s = normalize_record(&record("x", 0.0001, 0.0999, Label::Female));
        assert!((s.score - 1.0 / 1000.0).abs() < 1e-15);
        assert_eq!(s.predicted, Label::Female);
        assert!((s.confidence - 999.0 / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn validate_counts() {
        let recs = vec![
            record("a", 0.1, 0.2, Label::Male),
            record("b", 0.1, 0.2, Label::Male),
            record("c", 0.1, 0.2, Label::Male),
            record("d", 0.1, 0.2, Label::Female),
        ];
        let m = validate_records(&recs).unwrap();
        assert_eq!(m.record_count, 4);
        assert_eq!(m.label_balance, 0.75);
        assert_eq!(m.dataset_name, "winobias");
        assert!(!m.empty);
    }

    #[test]
    fn validate_duplicate() {
        let recs = vec![
            record("a", 0.1, 0.2, Label::Male),
            record("a", 0.1, 0.2, Label::Male),
        ];
        match validate_records(&recs).unwrap_err() {
            Error::Validation(v) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].instance_id, "a");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn validate_accumulates() {
        let recs = vec![
            record("a", 0.0, 0.2, Label::Male),
            record("b", 0.1, f64::NAN, Label::Male),
            record("b", 0.1, 0.2, Label::Male),
        ];
        match validate_records(&recs).unwrap_err() {
            Error::Validation(v) => assert_eq!(v.len(), 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn validate_empty() {
        let m = validate_records(&[]).unwrap();
        assert_eq!(m.record_count, 0);
        assert_eq!(m.label_balance, 0.0);
        assert!(m.empty);
    }

    fn arb_record() -> impl Strategy<Value = PronounPairRecord> {
        (
            "[a-z0-9]{1,8}",
            1e-300f64..=1.0,
            1e-300f64..=1.0,
            any::<bool>(),
            proptest::option::of("[a-z ]{0,6}"),
        )
            .prop_map(|(id, pm, pf, male, group)| PronounPairRecord {
                instance_id: id,
                dataset_name: "winoqueer".into(),
                model_name: "qwen \"2.5\"".into(),
                sentence_male: "The lawyer said it was won by him.".into(),
                sentence_female: "The lawyer said it was won by her.".into(),
                p_male: pm,
                p_female: pf,
                human_label: if male { Label::Male } else { Label::Female },
                group_tag: group,
            })
    }

    proptest! {
        #[test]
        fn parse_serialize_identity(recs in proptest::collection::vec(arb_record(), 0..20)) {
            let mut seen = BTreeSet::new();
            let recs: Vec<_> = recs.into_iter().filter(|r| seen.insert(r.instance_id.clone())).collect();
            let back = parse_records_str(&records_to_string(&recs)).unwrap();
            prop_assert_eq!(back, recs);
        }

        #[test]
        fn normalize_scale_invariant(pm in 1e-8f64..1.0, pf in 1e-8f64..1.0, lambda in 1e-3f64..1.0) {
            let a = normalize_record(&record("x", pm, pf, Label::Male));
            let b = normalize_record(&record("x", pm * lambda, pf * lambda, Label::Male));
            prop_assert!((a.score - b.score).abs() <= 1e-12);
            prop_assert!((a.confidence - b.confidence).abs() <= 1e-12);
            if (a.score - 0.5).abs() > 1e-12 {
                prop_assert_eq!(a.predicted, b.predicted);
            }
        }

        #[test]
        fn confidence_is_folded_score(pm in 1e-12f64..=1.0, pf in 1e-12f64..=1.0) {
            let s = normalize_record(&record("x", pm, pf, Label::Female));
            prop_assert!(s.confidence >= 0.5);
            prop_assert!((s.confidence - ((s.score - 0.5).abs() + 0.5)).abs() <= 1e-15);
        }
    }
}
