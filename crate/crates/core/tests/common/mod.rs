#![allow(dead_code)]

use grader_core::data::{Assessment, BranchMask, EnrichedItem, ExamItem, KeyPoints, Rating, ReferenceMaterial, ScoreLabel};
use grader_core::model::ModelConfig;
use grader_core::text::EncoderConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn enriched(id: usize, rng: &mut ChaCha8Rng) -> EnrichedItem {
    let words = ["network", "server", "protocol", "sharing", "risk", "funding", "transfer", "partnership"];
    let mut pick = |k: usize| (0..k).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ");
    let answer = pick(6);
    let level = answer.len() % 5;
    let reference = pick(6);
    EnrichedItem {
        item: ExamItem {
            id: format!("s{id}"),
            question: format!("Describe {}", pick(2)),
            student_answer: answer.clone(),
            reference: ReferenceMaterial::answer(reference.clone()),
            label: Some(ScoreLabel::new(level as f64, 4.0).unwrap()),
            domain: None,
            language: None,
        },
        key_points_student: KeyPoints::coerce([pick(2), pick(1)]).unwrap(),
        key_points_reference: KeyPoints::coerce([pick(2)]).unwrap(),
        pseudo_question: format!("Explain {}", pick(3)),
        // The rating tracks the label so that small models have something to learn.
        general_evaluation: Assessment { rating: Rating::ALL[4 - level], strengths: vec![pick(2)], weaknesses: vec![pick(2)] },
        clean_student: answer,
        clean_reference: reference,
        enrichment_version: "test-v1".into(),
    }
}

pub fn small_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig { d: 8, max_len: 16, seed: 3, ..Default::default() },
        heads: 2,
        fusion_layers: 1,
        branches: BranchMask::FULL,
        cross_fusion: true,
        seed: 21,
    }
}

