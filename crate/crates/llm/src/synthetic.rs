//! Generated benchmark data: a synthetic corpus whose labels are a function
//! of answer/reference word overlap, and the three case-study items with
//! labelled look-alikes.

use crate::mock::overlap;
use crate::provider::{MockProvider, ProviderError};
use grader_core::data::{ExamItem, ReferenceMaterial, ScoreLabel};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONCEPTS: &[&str] = &[
    "latency", "bandwidth", "router", "firewall", "encryption", "checksum", "packet", "gateway", "switch", "protocol", "handshake",
    "socket", "cache", "index", "transaction", "rollback", "replica", "shard", "schema", "cursor", "buffer", "scheduler", "thread",
    "mutex", "deadlock", "semaphore", "kernel", "driver", "interrupt", "register", "pipeline", "compiler", "parser", "token", "grammar",
    "lexer", "optimizer", "linker", "loader", "heap", "stack", "pointer", "garbage", "allocator", "budget", "revenue", "liability",
    "equity", "dividend", "interest", "inflation", "tariff", "subsidy", "contract", "tender", "concession", "warranty", "insurance",
    "audit", "ledger", "invoice", "payroll", "pension", "mortgage", "collateral", "portfolio", "hedge", "volatility", "liquidity",
    "solvency", "photosynthesis", "chlorophyll", "enzyme", "protein", "membrane", "nucleus", "ribosome", "mitochondria", "glucose",
    "oxygen", "carbon", "nitrogen", "respiration", "osmosis", "diffusion", "catalyst", "isotope", "electron", "proton", "neutron",
    "velocity", "momentum", "friction", "gravity", "torque", "inertia", "voltage", "current", "resistance", "capacitor", "inductor",
    "transistor", "diode", "frequency", "amplitude", "wavelength", "refraction", "reflection", "lens", "prism", "magnet", "turbine",
    "generator", "battery", "circuit", "sensor", "actuator", "feedback", "controller", "signal", "filter", "sampling", "quantization",
    "modulation", "antenna",
];

const DOMAINS: &[&str] = &["networking", "databases", "systems", "finance", "biology", "physics", "electronics", "engineering"];
const GLUE: &[&str] = &["with", "through", "because", "and", "also"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub items: usize,
    pub questions: usize,
    pub concepts_per_reference: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { items: 240, questions: 20, concepts_per_reference: 6, seed: 2024 }
    }
}

fn sentence(words: &[&str], rng: &mut ChaCha8Rng) -> String {
    let parts: Vec<String> = words
        .chunks(2)
        .map(|c| match c {
            [a, b] => format!("{a} {} {b}", GLUE.choose(rng).expect("glue")),
            [a] => a.to_string(),
            _ => unreachable!(),
        })
        .collect();
    format!("{}.", parts.join("; "))
}

/// Quarter-level score from the overlap fraction.
pub fn overlap_label(answer: &str, reference: &str) -> ScoreLabel {
    let raw = (overlap(answer, reference) * 4.0).round();
    ScoreLabel::new(raw, 4.0).expect("raw score within 0..=4")
}

/// Items whose score is `round(4·overlap)/4`, where overlap is the fraction
/// of reference content words present in the student answer.
pub fn synthetic_corpus(cfg: &SyntheticConfig) -> Vec<ExamItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.concepts_per_reference.max(2);
    let mut pool: Vec<&str> = CONCEPTS.to_vec();
    pool.shuffle(&mut rng);
    let per_question = k.min(pool.len() / cfg.questions.max(1)).max(2);
    let topics: Vec<(String, Vec<&str>, String)> = (0..cfg.questions)
        .map(|q| {
            let concepts: Vec<&str> = pool.iter().cycle().skip(q * per_question).take(per_question).copied().collect();
            let domain = DOMAINS[q % DOMAINS.len()];
            let question = format!("In {domain}, how do {} and {} work together? (topic {q})", concepts[0], concepts[1]);
            let reference = sentence(&concepts, &mut rng);
            (question, concepts, reference)
        })
        .collect();

    (0..cfg.items)
        .map(|i| {
            let (question, concepts, reference) = &topics[i % topics.len()];
            let covered = rng.random_range(0..=concepts.len());
            let mut words: Vec<&str> = concepts.choose_multiple(&mut rng, covered).copied().collect();
            let distractors = rng.random_range(if covered == 0 { 2 } else { 1 }..=4);
            while words.len() < covered + distractors {
                let w = *CONCEPTS.choose(&mut rng).expect("concepts");
                if !concepts.contains(&w) && !words.contains(&w) {
                    words.push(w);
                }
            }
            words.shuffle(&mut rng);
            let answer = sentence(&words, &mut rng);
            ExamItem {
                id: format!("syn-{i:04}"),
                question: question.clone(),
                student_answer: answer.clone(),
                label: Some(overlap_label(&answer, reference)),
                reference: ReferenceMaterial::answer(reference.clone()),
                domain: Some(DOMAINS[(i % topics.len()) % DOMAINS.len()].to_string()),
                language: Some("en".into()),
            }
        })
        .collect()
}

/// Enrichment texts of one case study.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseArtifacts {
    pub key_points_student: Vec<&'static str>,
    pub key_points_reference: Vec<&'static str>,
    pub pseudo_question: &'static str,
    pub rating: &'static str,
    pub strengths: Vec<&'static str>,
    pub weaknesses: Vec<&'static str>,
}

/// The high, medium and low scoring cases, in that order.
pub fn case_studies() -> Vec<(ExamItem, CaseArtifacts)> {
    let item = |id: &str, q: &str, a: &str, r: &str, score: f64| ExamItem {
        id: id.into(),
        question: q.into(),
        student_answer: a.into(),
        reference: ReferenceMaterial::answer(r),
        label: Some(ScoreLabel::new(score, 1.0).expect("valid score")),
        domain: Some("engineering management".into()),
        language: Some("en".into()),
    };
    vec![
        (
            item(
                "case-high",
                "Explain the main differences between PPP and BOT models.",
                "PPP emphasizes long-term collaboration with government while BOT focuses on phased transfer before transferring it to the government.",
                "PPP: long-term partnership; BOT: specific-phase operation.",
                1.0,
            ),
            CaseArtifacts {
                key_points_student: vec!["PPP: long-term", "BOT: transfer"],
                key_points_reference: vec!["PPP: partnership", "BOT: phased operation"],
                pseudo_question: "Explain differences between PPP and BOT, focusing on cooperation methods and implementation.",
                rating: "Good",
                strengths: vec!["Correctly identifies core differences"],
                weaknesses: vec!["lacks depth on PPP collaboration scope"],
            },
        ),
        (
            item(
                "case-medium",
                "Describe the basic components and functions of a LAN.",
                "LAN consists of devices/adapters for data exchange. Its main functions are data exchange and resource sharing.",
                "LAN includes servers, workstations, and protocol; enables resource sharing, communication, and service sharing.",
                0.5,
            ),
            CaseArtifacts {
                key_points_student: vec!["Devices, adapters", "data exchange"],
                key_points_reference: vec!["Servers, workstations", "communication", "sharing"],
                pseudo_question: "List LAN components and describe their primary functions.",
                rating: "Average",
                strengths: vec!["Captures basic elements"],
                weaknesses: vec!["misses some components like servers/protocols and functionalities"],
            },
        ),
        (
            item(
                "case-low",
                "Explain the advantages and applications of PPP in construction projects.",
                "PPP improves efficiency in commercial sectors.",
                "PPP advantages: risk-sharing, higher service quality, diversified funding (reduces government burden).",
                0.0,
            ),
            CaseArtifacts {
                key_points_student: vec!["Efficiency"],
                key_points_reference: vec!["Risk-sharing", "service quality", "funding"],
                pseudo_question: "Describe PPP's main roles and application fields in projects.",
                rating: "Poor",
                strengths: vec![],
                weaknesses: vec!["Misses critical points (risk-sharing, funding)", "misrepresents applications"],
            },
        ),
    ]
}

/// A provider that answers the case prompts with the case-study texts and
/// fails on anything else. Used once to record a replay cache.
pub fn case_study_provider() -> MockProvider {
    let cases = case_studies();
    MockProvider::new(move |call| {
        let var = |k: &str| call.variables.get(k).map(String::as_str).unwrap_or_default();
        let (item, art) = cases
            .iter()
            .find(|(i, _)| i.question == var("question"))
            .ok_or_else(|| ProviderError::Fatal("not a case-study prompt".into()))?;
        let v = match call.template_id.as_str() {
            "kpm_student" => serde_json::json!({ "key_points": art.key_points_student }),
            "kpm_reference" => serde_json::json!({ "key_points": art.key_points_reference }),
            "pqm" => serde_json::json!({ "pseudo_question": art.pseudo_question }),
            "lge" => serde_json::json!({ "rating": art.rating, "strengths": art.strengths, "weaknesses": art.weaknesses }),
            other => return Err(ProviderError::Fatal(format!("unexpected template {other} for {}", item.id))),
        };
        Ok(format!("```json\n{v}\n```"))
    })
}

/// Labelled items on the case-study topics (PPP, BOT, LAN), scored by the
/// same overlap rule as [`synthetic_corpus`].
pub fn case_analogs(count: usize, seed: u64) -> Vec<ExamItem> {
    let topics: [(&str, &[&str]); 5] = [
        ("Compare the PPP and BOT procurement models.", &["partnership", "government", "long-term", "transfer", "operation", "phased"]),
        ("What components make up a LAN and what do they do?", &["servers", "workstations", "protocol", "communication", "resource", "sharing"]),
        ("Why do governments adopt PPP for construction projects?", &["risk-sharing", "service", "quality", "funding", "diversified", "burden"]),
        ("Describe the lifecycle of a BOT concession.", &["build", "operate", "transfer", "concession", "revenue", "period"]),
        ("Explain how a LAN supports resource sharing.", &["printers", "files", "switch", "adapters", "exchange", "access"]),
    ];
    let distractors = ["efficiency", "commercial", "sectors", "devices", "marketing", "weather", "history", "design"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (question, concepts) = topics[i % topics.len()];
            let reference = sentence(concepts, &mut rng);
            let covered = rng.random_range(0..=concepts.len());
            let mut words: Vec<&str> = concepts.choose_multiple(&mut rng, covered).copied().collect();
            let extra = rng.random_range(if covered == 0 { 2 } else { 1 }..=3);
            words.extend(distractors.choose_multiple(&mut rng, extra));
            words.shuffle(&mut rng);
            let answer = sentence(&words, &mut rng);
            ExamItem {
                id: format!("analog-{i:03}"),
                question: question.into(),
                student_answer: answer.clone(),
                label: Some(overlap_label(&answer, &reference)),
                reference: ReferenceMaterial::answer(reference),
                domain: Some("engineering management".into()),
                language: Some("en".into()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_labelled_by_overlap() {
        let cfg = SyntheticConfig::default();
        let a = synthetic_corpus(&cfg);
        assert_eq!(a, synthetic_corpus(&cfg));
        assert_eq!(a.len(), 240);
        let mut levels = [0usize; 5];
        for item in &a {
            let s = item.score().unwrap();
            assert_eq!(s, (overlap(&item.student_answer, &item.reference.text) * 4.0).round() / 4.0);
            levels[(s * 4.0) as usize] += 1;
        }
        assert!(levels.iter().all(|&n| n >= 15), "{levels:?}");
    }

    #[test]
    fn analogs_cover_all_levels() {
        let a = case_analogs(30, 1);
        assert_eq!(a.len(), 30);
        assert!(a.iter().any(|i| i.score() == Some(0.0)) && a.iter().any(|i| i.score() == Some(1.0)));
    }
}
