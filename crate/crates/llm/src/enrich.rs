use crate::gateway::{Gateway, LlmError};
use grader_core::data::{Assessment, Branch, EnrichedItem, ExamItem, KeyPoints, Rating, ReferenceMaterial};
use grader_core::model::{Encoder, PoolEntry};
use grader_core::text::{sentence_embedding, EncodeError};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Bumped whenever prompts or artifact post-processing change.
pub const ENRICHMENT_VERSION: &str = "enrich-v1";

pub const DEFAULT_MAX_SENTENCE_LEN: usize = 200;

const SENTENCE_END: [char; 9] = ['。', '．', '.', '!', '?', '！', '？', ';', '；'];

fn strip_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('<') {
        out.push_str(&rest[..i]);
        let after = &rest[i + 1..];
        let opens_tag = after.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '/' || c == '!');
        match after.find(['<', '>']) {
            Some(j) if opens_tag && after.as_bytes()[j] == b'>' => {
                out.push(' ');
                rest = &after[j + 1..];
            }
            _ => {
                out.push('<');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Cleans answer text: drops control characters and markup tags, collapses
/// whitespace and cuts every sentence to at most `max_sentence_len` characters.
pub fn preprocess_text(raw: &str, max_sentence_len: usize) -> String {
    // A cut can bring fragments together into something a single pass would
    // clean further, so repeat until stable. Passes never lengthen the text.
    let mut cur = clean_once(raw, max_sentence_len);
    for _ in 0..16 {
        let next = clean_once(&cur, max_sentence_len);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

fn clean_once(raw: &str, max_sentence_len: usize) -> String {
    let max = max_sentence_len.max(1);
    let no_controls: String = raw
        .chars()
        .filter_map(|c| match c {
            c if c.is_whitespace() => Some(' '),
            c if c.is_control() => None,
            c => Some(c),
        })
        .collect();
    let collapsed = strip_tags(&no_controls).split_whitespace().collect::<Vec<_>>().join(" ");

    let chars: Vec<char> = collapsed.chars().collect();
    let mut sentences: Vec<String> = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let at_boundary = SENTENCE_END.contains(&chars[i]) && (i + 1 == chars.len() || chars[i + 1] == ' ');
        if at_boundary || i + 1 == chars.len() {
            let sentence = &chars[start..=i];
            let cut = if sentence.len() <= max {
                sentence.iter().collect::<String>()
            } else if at_boundary {
                // Keep the terminator so the cut sentence stays separate on re-reading.
                let mut s: String = sentence[..max - 1].iter().collect::<String>().trim_end().to_string();
                s.push(chars[i]);
                s
            } else {
                sentence[..max].iter().collect::<String>().trim_end().to_string()
            };
            sentences.push(cut);
            start = i + 2;
        }
    }
    sentences.retain(|s| !s.is_empty());
    sentences.join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    pub question: String,
    pub answer: String,
    /// Unit-norm sentence embedding of `answer`.
    pub embedding: Vec<f64>,
}

/// Training-split (question, reference answer) pairs for one-shot retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionPool {
    pub entries: Vec<PoolItem>,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePair {
    pub question: String,
    pub answer: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoolError {
    #[error("question pool is empty")]
    Empty,
    #[error("no pool entry with a question different from {0:?}")]
    NoExample(String),
    #[error("embedding failed: {0}")]
    Encode(String),
}

impl From<EncodeError> for PoolError {
    fn from(e: EncodeError) -> Self {
        PoolError::Encode(e.to_string())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Builds a pool from `(question, reference answer)` pairs, keeping duplicates.
pub fn build_question_pool<E>(pairs: &[(String, String)], embedder: E) -> Result<QuestionPool, PoolError>
where
    E: Fn(&str) -> Result<Vec<f64>, EncodeError>,
{
    if pairs.is_empty() {
        return Err(PoolError::Empty);
    }
    let mut entries = Vec::with_capacity(pairs.len());
    for (q, a) in pairs {
        let e = embedder(a)?;
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(PoolError::Encode(format!("degenerate embedding for {q:?}")));
        }
        entries.push(PoolItem { question: q.clone(), answer: a.clone(), embedding: e.iter().map(|x| x / norm).collect() });
    }
    let embedding_dim = entries[0].embedding.len();
    if entries.iter().any(|e| e.embedding.len() != embedding_dim) {
        return Err(PoolError::Encode("embeddings differ in dimension".into()));
    }
    Ok(QuestionPool { entries, embedding_dim })
}

impl QuestionPool {
    pub fn from_items<E>(items: &[ExamItem], embedder: E) -> Result<Self, PoolError>
    where
        E: Fn(&str) -> Result<Vec<f64>, EncodeError>,
    {
        let pairs: Vec<(String, String)> = items.iter().map(|i| (i.question.clone(), i.reference.text.clone())).collect();
        build_question_pool(&pairs, embedder)
    }

    pub fn from_entries<E>(entries: &[PoolEntry], embedder: E) -> Result<Self, PoolError>
    where
        E: Fn(&str) -> Result<Vec<f64>, EncodeError>,
    {
        let pairs: Vec<(String, String)> = entries.iter().map(|e| (e.question.clone(), e.reference.clone())).collect();
        build_question_pool(&pairs, embedder)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest-cosine entry whose question differs from `exclude_question`;
    /// the lowest index wins ties.
    pub fn nearest(&self, query: &[f64], exclude_question: &str) -> Result<ExamplePair, PoolError> {
        if self.entries.is_empty() {
            return Err(PoolError::Empty);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if e.question == exclude_question {
                continue;
            }
            let s = cosine(query, &e.embedding);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, similarity) = best.ok_or_else(|| PoolError::NoExample(exclude_question.to_string()))?;
        let e = &self.entries[i];
        Ok(ExamplePair { question: e.question.clone(), answer: e.answer.clone(), similarity })
    }
}

/// Embeds `student_answer` and returns its nearest pool example.
pub fn retrieve_example<E>(pool: &QuestionPool, student_answer: &str, exclude_question: &str, embedder: E) -> Result<ExamplePair, PoolError>
where
    E: Fn(&str) -> Result<Vec<f64>, EncodeError>,
{
    if pool.is_empty() {
        return Err(PoolError::Empty);
    }
    pool.nearest(&embedder(student_answer)?, exclude_question)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Student,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no usable key points")]
    EmptyKeyPoints,
    #[error("pseudo-question repeats the original question: {0:?}")]
    Echo(String),
    #[error(transparent)]
    Retrieval(#[from] PoolError),
    #[error("{0}")]
    Text(String),
}

/// Failure of one branch for one item. No partial item is produced.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct EnrichError {
    pub item_id: String,
    pub branch: Branch,
    pub source: StepError,
}

impl fmt::Display for EnrichError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "enrichment of item {:?} failed in branch {}: {}", self.item_id, self.branch, self.source)
    }
}

fn normalized(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(['?', '？', '.', '。', '!'])
        .trim()
        .to_lowercase()
}

fn strings(v: &serde_json::Value, key: &str) -> Vec<String> {
    v[key].as_array().map(|xs| xs.iter().filter_map(|x| x.as_str().map(str::to_string)).collect()).unwrap_or_default()
}

/// Produces branch artifacts through the gateway.
pub struct Enricher {
    gateway: Arc<Gateway>,
    encoder: Encoder<f64>,
    pool: Arc<QuestionPool>,
    max_sentence_len: usize,
}

impl Enricher {
    pub fn new(gateway: Arc<Gateway>, encoder: Encoder<f64>, pool: Arc<QuestionPool>) -> Self {
        Self { gateway, encoder, pool, max_sentence_len: DEFAULT_MAX_SENTENCE_LEN }
    }

    pub fn with_max_sentence_len(mut self, n: usize) -> Self {
        self.max_sentence_len = n;
        self
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn pool(&self) -> &QuestionPool {
        &self.pool
    }

    /// Version tag stamped on every enriched item.
    pub fn version(&self) -> String {
        format!("{ENRICHMENT_VERSION}+{}", self.gateway.config().model)
    }

    /// Unit-norm sentence embedding from the shared encoder.
    pub fn embed(&self, text: &str) -> Result<Vec<f64>, EncodeError> {
        sentence_embedding(text, self.encoder.tokenizer(), self.encoder.provider())
    }

    /// Key points of a student answer (`Role::Student`, `text` = answer) or of
    /// the reference (`Role::Reference`, `text` = reference text).
    pub async fn extract_key_points(
        &self,
        question: &str,
        text: &str,
        reference: Option<&ReferenceMaterial>,
        role: Role,
    ) -> Result<KeyPoints, StepError> {
        if question.trim().is_empty() || text.trim().is_empty() {
            return Err(StepError::Text("question and text must be non-empty".into()));
        }
        let req = match role {
            Role::Student => self
                .gateway
                .request("kpm_student")
                .var("question", question)
                .var("answer", text)
                .var("reference", reference.map_or("(none)", |r| r.text.as_str())),
            Role::Reference => {
                let note = if reference.is_some_and(|r| r.is_rubric()) {
                    "The reference is a scoring rubric. Condense its guidelines into key points.\n\n"
                } else {
                    ""
                };
                self.gateway.request("kpm_reference").var("question", question).var("reference", text).var("rubric_note", note)
            }
        };
        let resp = self.gateway.complete(&req).await?;
        let parsed = resp.parsed.unwrap_or_default();
        KeyPoints::coerce(strings(&parsed, "key_points")).map_err(|_| StepError::EmptyKeyPoints)
    }

    /// One pseudo-question, guaranteed different from `original_question`.
    pub async fn generate_pseudo_question(
        &self,
        example: &ExamplePair,
        student_answer: &str,
        original_question: &str,
    ) -> Result<String, StepError> {
        let base = self
            .gateway
            .request("pqm")
            .var("example_question", &example.question)
            .var("example_answer", &example.answer)
            .var("answer", student_answer)
            .var("question", original_question);
        let original = normalized(original_question);
        let mut last = String::new();
        for avoid in [
            String::new(),
            format!("\nYour previous attempt repeated the original question. Write a different question and do not reuse the sentence {original_question:?}."),
        ] {
            let resp = self.gateway.complete(&base.clone().var("avoid_note", avoid)).await?;
            last = resp.parsed.as_ref().and_then(|v| v["pseudo_question"].as_str()).unwrap_or_default().trim().to_string();
            if normalized(&last) != original {
                return Ok(last);
            }
            log::warn!("pseudo-question echoed the original question");
        }
        Err(StepError::Echo(last))
    }

    pub async fn general_evaluate(&self, question: &str, reference: &ReferenceMaterial, student_answer: &str) -> Result<Assessment, StepError> {
        let req = self
            .gateway
            .request("lge")
            .var("question", question)
            .var("reference", &reference.text)
            .var("answer", student_answer);
        let resp = self.gateway.complete(&req).await?;
        let v = resp.parsed.unwrap_or_default();
        let label = v["rating"].as_str().unwrap_or_default();
        let rating = Rating::parse_lenient(label).ok_or_else(|| LlmError::MalformedOutput {
            raw: resp.text.clone(),
            reason: format!("unknown rating {label:?}"),
        })?;
        Ok(Assessment { rating, strengths: strings(&v, "strengths"), weaknesses: strings(&v, "weaknesses") })
    }

    /// All four branch artifacts for one item. LLM calls run concurrently.
    pub async fn enrich_item(&self, item: &ExamItem) -> Result<EnrichedItem, EnrichError> {
        let fail = |branch: Branch| move |source: StepError| EnrichError { item_id: item.id.clone(), branch, source };
        let kpm = async {
            tokio::try_join!(
                self.extract_key_points(&item.question, &item.student_answer, Some(&item.reference), Role::Student),
                self.extract_key_points(&item.question, &item.reference.text, Some(&item.reference), Role::Reference),
            )
            .map_err(fail(Branch::KeyPoints))
        };
        let pqm = async {
            let example = retrieve_example(&self.pool, &item.student_answer, &item.question, |t| self.embed(t))
                .map_err(|e| fail(Branch::PseudoQuestion)(e.into()))?;
            self.generate_pseudo_question(&example, &item.student_answer, &item.question)
                .await
                .map_err(fail(Branch::PseudoQuestion))
        };
        let lge = async {
            self.general_evaluate(&item.question, &item.reference, &item.student_answer)
                .await
                .map_err(fail(Branch::GeneralEvaluation))
        };
        let ((kps, kpr), pseudo_question, assessment) = tokio::try_join!(kpm, pqm, lge)?;

        let clean_student = preprocess_text(&item.student_answer, self.max_sentence_len);
        let clean_reference = preprocess_text(&item.reference.text, self.max_sentence_len);
        if clean_student.is_empty() || clean_reference.is_empty() {
            return Err(fail(Branch::TextSimilarity)(StepError::Text("text is empty after preprocessing".into())));
        }
        Ok(EnrichedItem {
            item: item.clone(),
            key_points_student: kps,
            key_points_reference: kpr,
            pseudo_question,
            general_evaluation: assessment,
            clean_student,
            clean_reference,
            enrichment_version: self.version(),
        })
    }

    /// Enriches every item concurrently; results keep input order.
    pub async fn enrich_all(&self, items: &[ExamItem]) -> Vec<Result<EnrichedItem, EnrichError>> {
        futures::future::join_all(items.iter().map(|i| self.enrich_item(i))).await
    }
}
