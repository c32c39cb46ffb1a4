//! Ranks test questions by how well they tell configurations apart.
//!
//! A configuration is whatever the samples' `m` field identifies: a
//! model, a knowledge-base revision, or a node acting as either. For
//! each question we cluster the usable samples per configuration and
//! score every configuration pair by `distance / (sigma_a + sigma_b)`.
//! A question's effectiveness is its worst pair: a question that fails
//! to separate even one pair is that weak overall.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::metrics::{cluster_distance, summarize, AnswerCluster, MetricsError, SampleSet};
use crate::network::ResponseSample;

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("ranking needs at least two configurations, got {0}")]
    TooFewConfigs(usize),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Separation scores for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionStats {
    pub question_id: String,
    /// `distance / (sigma_a + sigma_b)` per configuration pair, keyed
    /// with the pair in lexicographic order.
    pub pair_ratios: BTreeMap<(String, String), f64>,
    /// Minimum pair ratio. `None` marks a question unscored because
    /// some configuration has no usable samples for it.
    pub effectiveness: Option<f64>,
    /// Usable samples per configuration.
    pub sample_counts: BTreeMap<String, usize>,
}

/// Ratio of cluster separation to combined scatter. Zero-scatter pairs
/// degenerate cleanly: distinct point masses separate infinitely well,
/// coincident ones not at all.
fn pair_ratio(a: &AnswerCluster, b: &AnswerCluster) -> Result<f64, MetricsError> {
    let distance = cluster_distance(a, b)?;
    let denom = a.rms_scatter + b.rms_scatter;
    Ok(if denom > 0.0 {
        distance / denom
    } else if distance > 0.0 {
        f64::INFINITY
    } else {
        0.0
    })
}

/// Scores every question across every configuration pair and returns
/// them best first.
///
/// The configuration universe is every `m` value in the input; a
/// question must have at least one usable sample for each to be scored.
/// Scored questions sort by descending effectiveness with ties broken
/// by question id; unscored questions follow, also by question id.
pub fn rank_questions(samples: &[ResponseSample]) -> Result<Vec<QuestionStats>, RankerError> {
    let configs: BTreeSet<&str> = samples.iter().map(|s| s.node_id.as_str()).collect();
    if configs.len() < 2 {
        return Err(RankerError::TooFewConfigs(configs.len()));
    }

    let mut vectors: BTreeMap<(&str, &str), Vec<crate::metrics::EmbeddingVector>> =
        BTreeMap::new();
    let mut questions: BTreeSet<&str> = BTreeSet::new();
    for s in samples {
        questions.insert(&s.question_id);
        if let Some(v) = &s.embedding {
            if s.is_ok() {
                vectors
                    .entry((&s.question_id, &s.node_id))
                    .or_default()
                    .push(v.clone());
            }
        }
    }

    let mut scored = Vec::new();
    let mut unscored = Vec::new();
    for question in questions {
        let mut clusters: BTreeMap<&str, AnswerCluster> = BTreeMap::new();
        let mut sample_counts = BTreeMap::new();
        for config in &configs {
            if let Some(vs) = vectors.get(&(question, config)) {
                sample_counts.insert(config.to_string(), vs.len());
                let set = SampleSet::new(question, *config, vs.clone())?;
                clusters.insert(config, summarize(&set));
            }
        }

        if clusters.len() < configs.len() {
            unscored.push(QuestionStats {
                question_id: question.to_string(),
                pair_ratios: BTreeMap::new(),
                effectiveness: None,
                sample_counts,
            });
            continue;
        }

        let mut pair_ratios = BTreeMap::new();
        let mut worst = f64::INFINITY;
        let ids: Vec<&&str> = clusters.keys().collect();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let ratio = pair_ratio(&clusters[**a], &clusters[**b])?;
                worst = worst.min(ratio);
                pair_ratios.insert((a.to_string(), b.to_string()), ratio);
            }
        }
        scored.push(QuestionStats {
            question_id: question.to_string(),
            pair_ratios,
            effectiveness: Some(worst),
            sample_counts,
        });
    }

    scored.sort_by(|x, y| {
        y.effectiveness
            .unwrap()
            .total_cmp(&x.effectiveness.unwrap())
            .then_with(|| x.question_id.cmp(&y.question_id))
    });
    unscored.sort_by(|x, y| x.question_id.cmp(&y.question_id));
    scored.extend(unscored);
    Ok(scored)
}
