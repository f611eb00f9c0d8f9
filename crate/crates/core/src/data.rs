//! Domain vocabulary: exam items, references, enrichment artifacts and graded results.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Maximum length of a single key-point phrase, in characters.
pub const MAX_PHRASE_CHARS: usize = 25;
/// Maximum number of key-point phrases kept per answer.
pub const MAX_PHRASES: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("invalid max score {0}: must be > 0")]
    InvalidMax(f64),
    #[error("score {raw} outside [0, {max}]")]
    OutOfRange { raw: f64, max: f64 },
    #[error("missing field `{0}`")]
    Schema(String),
    #[error("field `{0}` is empty")]
    EmptyText(String),
    #[error("key points: {0}")]
    KeyPoints(String),
}

/// Maps a raw point value onto `[0, 1]`.
pub fn normalize_score(raw: f64, max: f64) -> Result<f64, DataError> {
    if !(max > 0.0) || !max.is_finite() {
        return Err(DataError::InvalidMax(max));
    }
    if !(0.0..=max).contains(&raw) {
        return Err(DataError::OutOfRange { raw, max });
    }
    Ok((raw / max).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Answer,
    /// Scoring guidelines only, no concrete answer.
    Rubric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceMaterial {
    pub kind: ReferenceKind,
    pub text: String,
}

impl ReferenceMaterial {
    pub fn answer(text: impl Into<String>) -> Self {
        Self { kind: ReferenceKind::Answer, text: text.into() }
    }

    pub fn rubric(text: impl Into<String>) -> Self {
        Self { kind: ReferenceKind::Rubric, text: text.into() }
    }

    pub fn is_rubric(&self) -> bool {
        self.kind == ReferenceKind::Rubric
    }
}

/// Ground-truth label of an item. Absent on ungraded submissions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreLabel {
    pub raw_score: f64,
    pub max_score: f64,
    /// `raw_score / max_score`, always in `[0, 1]`.
    pub score: f64,
}

impl ScoreLabel {
    pub fn new(raw_score: f64, max_score: f64) -> Result<Self, DataError> {
        let score = normalize_score(raw_score, max_score)?;
        Ok(Self { raw_score, max_score, score })
    }
}

/// One (question, student answer, reference, score) record.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamItem {
    pub id: String,
    pub question: String,
    pub student_answer: String,
    pub reference: ReferenceMaterial,
    pub label: Option<ScoreLabel>,
    pub domain: Option<String>,
    pub language: Option<String>,
}

impl ExamItem {
    /// Normalized ground truth, if the item is graded.
    pub fn score(&self) -> Option<f64> {
        self.label.map(|l| l.score)
    }
}

/// Wire form of an [`ExamItem`]: every field optional so that validation can
/// name the first missing one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    #[serde(default)]
    pub kind: Option<ReferenceKind>,
    #[serde(default)]
    pub text: Option<String>,
}

impl From<&ExamItem> for ItemRecord {
    fn from(item: &ExamItem) -> Self {
        ItemRecord {
            id: Some(item.id.clone()),
            question: Some(item.question.clone()),
            student_answer: Some(item.student_answer.clone()),
            reference: Some(ReferenceRecord {
                kind: Some(item.reference.kind),
                text: Some(item.reference.text.clone()),
            }),
            raw_score: item.label.map(|l| l.raw_score),
            max_score: item.label.map(|l| l.max_score),
            domain: item.domain.clone(),
            language: item.language.clone(),
        }
    }
}

fn required<T>(value: Option<T>, field: &str) -> Result<T, DataError> {
    value.ok_or_else(|| DataError::Schema(field.to_string()))
}

fn non_empty(text: String, field: &str) -> Result<String, DataError> {
    if text.trim().is_empty() {
        Err(DataError::EmptyText(field.to_string()))
    } else {
        Ok(text)
    }
}

fn validate_common(record: ItemRecord) -> Result<(ExamItem, Option<f64>, Option<f64>), DataError> {
    let id = required(record.id, "id")?;
    let question = required(record.question, "question")?;
    let student_answer = required(record.student_answer, "student_answer")?;
    let reference = required(record.reference, "reference")?;
    let kind = required(reference.kind, "reference.kind")?;
    let ref_text = required(reference.text, "reference.text")?;
    if id.is_empty() {
        return Err(DataError::EmptyText("id".into()));
    }
    let item = ExamItem {
        id,
        question: non_empty(question, "question")?,
        student_answer: non_empty(student_answer, "student_answer")?,
        reference: ReferenceMaterial { kind, text: non_empty(ref_text, "reference.text")? },
        label: None,
        domain: record.domain,
        language: record.language,
    };
    Ok((item, record.raw_score, record.max_score))
}

/// Validates a graded dataset record. Both score fields are required.
pub fn validate_item(record: ItemRecord) -> Result<ExamItem, DataError> {
    let (mut item, raw, max) = validate_common(record)?;
    let raw = required(raw, "raw_score")?;
    let max = required(max, "max_score")?;
    item.label = Some(ScoreLabel::new(raw, max)?);
    Ok(item)
}

/// Validates a submission for grading. Score fields may be omitted, but if
/// either is present both must be and they must be consistent.
pub fn validate_submission(record: ItemRecord) -> Result<ExamItem, DataError> {
    let (mut item, raw, max) = validate_common(record)?;
    item.label = match (raw, max) {
        (None, None) => None,
        (Some(r), Some(m)) => Some(ScoreLabel::new(r, m)?),
        (Some(_), None) => return Err(DataError::Schema("max_score".into())),
        (None, Some(_)) => return Err(DataError::Schema("raw_score".into())),
    };
    Ok(item)
}

/// Concise phrases distilled from an answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct KeyPoints {
    phrases: Vec<String>,
}

impl KeyPoints {
    /// Strict constructor: 1..=3 trimmed, non-empty phrases of at most 25 characters.
    pub fn new(phrases: Vec<String>) -> Result<Self, DataError> {
        if phrases.is_empty() || phrases.len() > MAX_PHRASES {
            return Err(DataError::KeyPoints(format!("expected 1..={MAX_PHRASES} phrases, got {}", phrases.len())));
        }
        let mut out = Vec::with_capacity(phrases.len());
        for p in phrases {
            let p = p.trim().to_string();
            if p.is_empty() {
                return Err(DataError::KeyPoints("empty phrase".into()));
            }
            if p.chars().count() > MAX_PHRASE_CHARS {
                return Err(DataError::KeyPoints(format!("phrase longer than {MAX_PHRASE_CHARS} chars: {p:?}")));
            }
            out.push(p);
        }
        Ok(Self { phrases: out })
    }

    /// Lenient constructor for model output: trims, drops empties, truncates
    /// long phrases to 25 characters and keeps the first three. Fails only
    /// when nothing survives.
    pub fn coerce<I, S>(phrases: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let kept: Vec<String> = phrases
            .into_iter()
            .filter_map(|p| {
                let t: String = p.as_ref().trim().chars().take(MAX_PHRASE_CHARS).collect();
                let t = t.trim_end().to_string();
                (!t.is_empty()).then_some(t)
            })
            .take(MAX_PHRASES)
            .collect();
        if kept.is_empty() {
            return Err(DataError::KeyPoints("no usable phrases".into()));
        }
        Ok(Self { phrases: kept })
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    /// Phrases joined with `"; "`, the form fed to the tokenizer.
    pub fn joined(&self) -> String {
        self.phrases.join("; ")
    }
}

impl TryFrom<Vec<String>> for KeyPoints {
    type Error = DataError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        KeyPoints::new(v)
    }
}

impl From<KeyPoints> for Vec<String> {
    fn from(k: KeyPoints) -> Self {
        k.phrases
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    VeryGood,
    Good,
    Fair,
    Poor,
    VeryPoor,
}

impl Rating {
    pub const ALL: [Rating; 5] = [Rating::VeryGood, Rating::Good, Rating::Fair, Rating::Poor, Rating::VeryPoor];

    pub fn as_str(self) -> &'static str {
        match self {
            Rating::VeryGood => "very_good",
            Rating::Good => "good",
            Rating::Fair => "fair",
            Rating::Poor => "poor",
            Rating::VeryPoor => "very_poor",
        }
    }

    /// Parses a rating label, accepting the five levels in any case and
    /// separator style plus a fixed synonym table.
    pub fn parse_lenient(s: &str) -> Option<Rating> {
        let norm: String = s
            .trim()
            .trim_end_matches(['.', '!'])
            .to_lowercase()
            .chars()
            .map(|c| if c == '-' || c == ' ' { '_' } else { c })
            .collect();
        let r = match norm.as_str() {
            "very_good" | "excellent" | "outstanding" => Rating::VeryGood,
            "good" => Rating::Good,
            "fair" | "average" | "medium" | "moderate" => Rating::Fair,
            "poor" | "weak" => Rating::Poor,
            "very_poor" | "bad" | "very_bad" => Rating::VeryPoor,
            _ => return None,
        };
        Some(r)
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Holistic assessment of an answer. `rendered` is derived, never stored independently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "AssessmentRecord", into = "AssessmentRecord")]
pub struct Assessment {
    pub rating: Rating,
    pub strengths: Vec<String>,
    pub weaknesses: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct AssessmentRecord {
    rating: Rating,
    #[serde(default)]
    strengths: Vec<String>,
    #[serde(default)]
    weaknesses: Vec<String>,
    #[serde(default, skip_deserializing)]
    rendered: String,
}

impl From<AssessmentRecord> for Assessment {
    fn from(r: AssessmentRecord) -> Self {
        Assessment { rating: r.rating, strengths: r.strengths, weaknesses: r.weaknesses }
    }
}

impl From<Assessment> for AssessmentRecord {
    fn from(a: Assessment) -> Self {
        let rendered = a.rendered();
        AssessmentRecord { rating: a.rating, strengths: a.strengths, weaknesses: a.weaknesses, rendered }
    }
}

impl Assessment {
    /// `rating: <level>. strengths: <s1; s2>. weaknesses: <w1; w2>.`
    pub fn rendered(&self) -> String {
        format!(
            "rating: {}. strengths: {}. weaknesses: {}.",
            self.rating,
            self.strengths.join("; "),
            self.weaknesses.join("; ")
        )
    }
}

/// The four evidence branches, in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "KPM")]
    KeyPoints,
    #[serde(rename = "PQM")]
    PseudoQuestion,
    #[serde(rename = "LGE")]
    GeneralEvaluation,
    #[serde(rename = "TSM")]
    TextSimilarity,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Branch::KeyPoints, Branch::PseudoQuestion, Branch::GeneralEvaluation, Branch::TextSimilarity];

    pub fn code(self) -> &'static str {
        match self {
            Branch::KeyPoints => "KPM",
            Branch::PseudoQuestion => "PQM",
            Branch::GeneralEvaluation => "LGE",
            Branch::TextSimilarity => "TSM",
        }
    }

    pub fn from_code(code: &str) -> Option<Branch> {
        Branch::ALL.into_iter().find(|b| b.code().eq_ignore_ascii_case(code))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Set of active branches, serialized as a list of branch codes in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Branch>", into = "Vec<Branch>")]
pub struct BranchMask([bool; 4]);

impl BranchMask {
    pub const FULL: BranchMask = BranchMask([true; 4]);
    pub const EMPTY: BranchMask = BranchMask([false; 4]);

    pub fn contains(&self, b: Branch) -> bool {
        self.0[b.index()]
    }

    pub fn with(mut self, b: Branch) -> Self {
        self.0[b.index()] = true;
        self
    }

    pub fn without(mut self, b: Branch) -> Self {
        self.0[b.index()] = false;
        self
    }

    pub fn active(&self) -> impl Iterator<Item = Branch> + '_ {
        Branch::ALL.into_iter().filter(|b| self.contains(*b))
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|x| **x).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

impl From<Vec<Branch>> for BranchMask {
    fn from(v: Vec<Branch>) -> Self {
        v.into_iter().fold(BranchMask::EMPTY, BranchMask::with)
    }
}

impl From<BranchMask> for Vec<Branch> {
    fn from(m: BranchMask) -> Self {
        m.active().collect()
    }
}

impl FromIterator<Branch> for BranchMask {
    fn from_iter<I: IntoIterator<Item = Branch>>(iter: I) -> Self {
        iter.into_iter().fold(BranchMask::EMPTY, BranchMask::with)
    }
}

/// An exam item with all four branch artifacts attached.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedItem {
    pub item: ExamItem,
    pub key_points_student: KeyPoints,
    pub key_points_reference: KeyPoints,
    pub pseudo_question: String,
    pub general_evaluation: Assessment,
    pub clean_student: String,
    pub clean_reference: String,
    pub enrichment_version: String,
}

/// Line format of the enriched dataset: item fields flattened next to the artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrichedRecord {
    #[serde(flatten)]
    pub item: ItemRecord,
    pub key_points_student: KeyPoints,
    pub key_points_reference: KeyPoints,
    pub pseudo_question: String,
    pub general_evaluation: Assessment,
    pub clean_student: String,
    pub clean_reference: String,
    pub enrichment_version: String,
}

impl From<&EnrichedItem> for EnrichedRecord {
    fn from(e: &EnrichedItem) -> Self {
        EnrichedRecord {
            item: ItemRecord::from(&e.item),
            key_points_student: e.key_points_student.clone(),
            key_points_reference: e.key_points_reference.clone(),
            pseudo_question: e.pseudo_question.clone(),
            general_evaluation: e.general_evaluation.clone(),
            clean_student: e.clean_student.clone(),
            clean_reference: e.clean_reference.clone(),
            enrichment_version: e.enrichment_version.clone(),
        }
    }
}

impl EnrichedRecord {
    /// Validates the embedded item. Labels are optional so that ungraded
    /// enriched files can be scored.
    pub fn into_enriched(self) -> Result<EnrichedItem, DataError> {
        if self.pseudo_question.trim().is_empty() {
            return Err(DataError::EmptyText("pseudo_question".into()));
        }
        Ok(EnrichedItem {
            item: validate_submission(self.item)?,
            key_points_student: self.key_points_student,
            key_points_reference: self.key_points_reference,
            pseudo_question: self.pseudo_question,
            general_evaluation: self.general_evaluation,
            clean_student: self.clean_student,
            clean_reference: self.clean_reference,
            enrichment_version: self.enrichment_version,
        })
    }
}

/// Model output for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedResult {
    pub id: String,
    pub predicted_score: f64,
    pub model_version: String,
    pub branch_mask: BranchMask,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> ItemRecord {
        ItemRecord {
            id: Some("q1".into()),
            question: Some("What is a LAN?".into()),
            student_answer: Some("A local network.".into()),
            reference: Some(ReferenceRecord { kind: Some(ReferenceKind::Answer), text: Some("Local area network.".into()) }),
            raw_score: Some(1.0),
            max_score: Some(2.0),
            ..Default::default()
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_score(5.0, 5.0).unwrap(), 1.0);
        assert_eq!(normalize_score(0.0, 10.0).unwrap(), 0.0);
        assert_eq!(normalize_score(2.5, 5.0).unwrap(), 0.5);
        assert_eq!(normalize_score(1.0, 0.0), Err(DataError::InvalidMax(0.0)));
        assert!(matches!(normalize_score(6.0, 5.0), Err(DataError::OutOfRange { .. })));
        assert!(matches!(normalize_score(-0.1, 5.0), Err(DataError::OutOfRange { .. })));
        assert!(matches!(normalize_score(f64::NAN, 5.0), Err(DataError::OutOfRange { .. })));
    }

    #[test]
    fn validate_item_contract() {
        let item = validate_item(record()).unwrap();
        assert_eq!(item.score(), Some(0.5));

        let mut r = record();
        r.question = None;
        assert_eq!(validate_item(r), Err(DataError::Schema("question".into())));

        let mut r = record();
        r.max_score = Some(0.0);
        assert_eq!(validate_item(r), Err(DataError::InvalidMax(0.0)));

        let mut r = record();
        r.student_answer = Some("   \n".into());
        assert_eq!(validate_item(r), Err(DataError::EmptyText("student_answer".into())));

        let mut r = record();
        r.raw_score = None;
        assert_eq!(validate_item(r), Err(DataError::Schema("raw_score".into())));
    }

    #[test]
    fn submissions_may_omit_labels() {
        let mut r = record();
        r.raw_score = None;
        r.max_score = None;
        assert_eq!(validate_submission(r).unwrap().label, None);
        let mut r = record();
        r.max_score = None;
        assert!(validate_submission(r).is_err());
    }

    #[test]
    fn key_points_bounds() {
        assert!(KeyPoints::new(vec![]).is_err());
        assert!(KeyPoints::new(vec!["a".into(); 4]).is_err());
        assert!(KeyPoints::new(vec!["x".repeat(26)]).is_err());
        assert!(KeyPoints::new(vec!["x".repeat(25)]).is_ok());

        let k = KeyPoints::coerce(["  ", "a".repeat(40).as_str(), "b", "c", "d"]).unwrap();
        assert_eq!(k.phrases().len(), 3);
        assert_eq!(k.phrases()[0].chars().count(), 25);
        assert_eq!(k.phrases()[1], "b");
        assert!(KeyPoints::coerce(["", " "]).is_err());
        assert_eq!(KeyPoints::coerce(["PPP: long-term", "BOT: transfer"]).unwrap().joined(), "PPP: long-term; BOT: transfer");
    }

    #[test]
    fn rating_synonyms() {
        assert_eq!(Rating::parse_lenient("Average"), Some(Rating::Fair));
        assert_eq!(Rating::parse_lenient("excellent"), Some(Rating::VeryGood));
        assert_eq!(Rating::parse_lenient("Very good"), Some(Rating::VeryGood));
        assert_eq!(Rating::parse_lenient("very-poor"), Some(Rating::VeryPoor));
        assert_eq!(Rating::parse_lenient("superb-ish"), None);
    }

    #[test]
    fn assessment_rendering_is_fixed() {
        let a = Assessment {
            rating: Rating::Good,
            strengths: vec!["clear".into(), "correct".into()],
            weaknesses: vec!["lacks depth".into()],
        };
        assert_eq!(a.rendered(), "rating: good. strengths: clear; correct. weaknesses: lacks depth.");
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"rendered\""));
        let back: Assessment = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn branch_mask_serializes_as_codes() {
        let m = BranchMask::FULL.without(Branch::PseudoQuestion);
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"["KPM","LGE","TSM"]"#);
        assert_eq!(m.count(), 3);
    }
}
