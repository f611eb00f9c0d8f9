use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Structured output a template asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSchema {
    /// `{"key_points": [string, ...]}`
    KeyPoints,
    /// `{"pseudo_question": string}`
    PseudoQuestion,
    /// `{"rating": string, "strengths": [string], "weaknesses": [string]}`
    Assessment,
}

impl OutputSchema {
    /// Checks the top-level keys and their JSON types.
    pub fn check(self, v: &serde_json::Value) -> Result<(), String> {
        let obj = v.as_object().ok_or("output is not a JSON object")?;
        let string_list = |key: &str, required: bool| -> Result<(), String> {
            match obj.get(key) {
                None if !required => Ok(()),
                None => Err(format!("missing key {key:?}")),
                Some(serde_json::Value::Array(xs)) if xs.iter().all(|x| x.is_string()) => Ok(()),
                Some(_) => Err(format!("{key:?} must be a list of strings")),
            }
        };
        let string = |key: &str| match obj.get(key) {
            Some(serde_json::Value::String(s)) if !s.trim().is_empty() => Ok(()),
            Some(_) => Err(format!("{key:?} must be a non-empty string")),
            None => Err(format!("missing key {key:?}")),
        };
        match self {
            OutputSchema::KeyPoints => string_list("key_points", true),
            OutputSchema::PseudoQuestion => string("pseudo_question"),
            OutputSchema::Assessment => {
                string("rating")?;
                string_list("strengths", false)?;
                string_list("weaknesses", false)
            }
        }
    }

    fn example(self) -> &'static str {
        match self {
            OutputSchema::KeyPoints => r#"{"key_points": ["phrase one", "phrase two"]}"#,
            OutputSchema::PseudoQuestion => r#"{"pseudo_question": "..."}"#,
            OutputSchema::Assessment => r#"{"rating": "good", "strengths": ["..."], "weaknesses": ["..."]}"#,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    pub version: String,
    pub system: String,
    /// Body with `{{name}}` placeholders.
    pub body: String,
    pub schema: Option<OutputSchema>,
}

impl Template {
    /// Placeholder names in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else { break };
            let name = after[..end].trim().to_string();
            if !out.contains(&name) {
                out.push(name);
            }
            rest = &after[end + 2..];
        }
        out
    }
}

/// A rendered chat prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    /// Single string form used for cache keys.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RenderError {
    UnknownTemplate(String),
    MissingVariable(String),
}

#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    templates: HashMap<String, Template>,
}

pub const TEMPLATE_VERSION: &str = "v1";

const SYSTEM: &str = "You are an experienced examiner grading short subjective answers. \
Follow the instructions exactly and reply with a single fenced JSON object.";

const KPM_STUDENT: &str = "Question:\n{{question}}\n\nReference material:\n{{reference}}\n\n\
Student answer:\n{{answer}}\n\n\
Extract the key points of the student answer as 1 to 3 short phrases, each at most 25 characters. \
Use the question and reference only to decide what matters; do not add points the student did not make.";

const KPM_REFERENCE: &str = "Question:\n{{question}}\n\nReference material:\n{{reference}}\n\n{{rubric_note}}\
Extract the key points a full-credit answer must contain as 1 to 3 short phrases, each at most 25 characters.";

const PQM: &str = "Here is an example question with its reference answer.\n\
Example question:\n{{example_question}}\nExample answer:\n{{example_answer}}\n\n\
Student answer:\n{{answer}}\n\nOriginal question (do not repeat it):\n{{question}}\n\n\
Write one question, in the style of the example, that the student answer actually responds to. \
It must stay in the same domain and must not copy the original question.{{avoid_note}}";

const LGE: &str = "Question:\n{{question}}\n\nReference material:\n{{reference}}\n\n\
Student answer:\n{{answer}}\n\n\
Assess the student answer for logical soundness, linguistic fluency and errors. \
Choose a rating from: very good, good, fair, poor, very poor. \
List the main strengths and weaknesses as short phrases.";

impl TemplateRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The four enrichment templates.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        for (id, body, schema) in [
            ("kpm_student", KPM_STUDENT, OutputSchema::KeyPoints),
            ("kpm_reference", KPM_REFERENCE, OutputSchema::KeyPoints),
            ("pqm", PQM, OutputSchema::PseudoQuestion),
            ("lge", LGE, OutputSchema::Assessment),
        ] {
            r.register(Template {
                id: id.into(),
                version: TEMPLATE_VERSION.into(),
                system: SYSTEM.into(),
                body: body.into(),
                schema: Some(schema),
            });
        }
        r
    }

    pub fn register(&mut self, t: Template) {
        self.templates.insert(t.id.clone(), t);
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.get(id)
    }

    /// Substitutes `variables` into template `id` at `version`.
    pub fn render(&self, id: &str, version: &str, variables: &BTreeMap<String, String>) -> Result<RenderedPrompt, RenderError> {
        let t = match self.templates.get(id) {
            Some(t) if t.version == version => t,
            _ => return Err(RenderError::UnknownTemplate(format!("{id}@{version}"))),
        };
        let mut user = t.body.clone();
        for name in t.variables() {
            let value = variables.get(&name).ok_or_else(|| RenderError::MissingVariable(name.clone()))?;
            user = user.replace(&format!("{{{{{name}}}}}"), value);
        }
        if let Some(schema) = t.schema {
            user.push_str("\n\nReply with a fenced JSON object of the form:\n```json\n");
            user.push_str(schema.example());
            user.push_str("\n```");
        }
        Ok(RenderedPrompt { system: t.system.clone(), user })
    }
}

/// Pulls the JSON object out of a completion: the first ```json fence, else
/// any fence, else the outermost braces.
pub fn extract_json(text: &str) -> Result<serde_json::Value, String> {
    let fenced = |marker: &str| {
        let start = text.find(marker)? + marker.len();
        let end = text[start..].find("```")? + start;
        Some(&text[start..end])
    };
    let candidate = fenced("```json").or_else(|| fenced("```")).or_else(|| {
        let (s, e) = (text.find('{')?, text.rfind('}')?);
        (s < e).then(|| &text[s..=e])
    });
    let body = candidate.ok_or("no JSON object in output")?;
    serde_json::from_str(body.trim()).map_err(|e| format!("invalid JSON: {e}"))
}
