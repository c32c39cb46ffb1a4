//! Per-round node flagging.
//!
//! Three independent analyses run over one round's samples:
//!
//! - Outliers: each node's cluster mean is compared to a consensus
//!   center, the coordinate-wise median of all node means. The median
//!   tolerates any minority of colluding nodes. A node is flagged when
//!   its distance to consensus strictly exceeds `k` times (its own RMS
//!   scatter + the leave-one-out RMS scatter of the other nodes' means
//!   about consensus). Leave-one-out keeps a far-out node from inflating
//!   its own threshold.
//! - Slow nodes: per-node mean latency compared one-sided to the domain
//!   mean over node means, at `k` population standard deviations.
//! - Errors: timeouts and HTTP status codes map directly to flags.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{summarize, AnswerCluster, MetricsError, SampleSet};
use crate::network::{ResponseSample, SampleStatus};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("samples span multiple questions ({0} and {1}); group per question first")]
    MixedQuestions(String, String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn default_separation_k() -> f64 {
    crate::metrics::DEFAULT_SEPARATION_K
}

fn default_min_nodes() -> usize {
    3
}

/// Knobs for a round's analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Multiplier on scatter sums for both outlier and latency flagging.
    #[serde(default = "default_separation_k")]
    pub separation_k: f64,
    /// Minimum clustered nodes for a conclusive outlier verdict.
    #[serde(default = "default_min_nodes")]
    pub min_nodes: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            separation_k: default_separation_k(),
            min_nodes: default_min_nodes(),
        }
    }
}

/// Everything a node can be flagged for.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum FlagKind {
    #[serde(rename = "outlier")]
    Outlier,
    #[serde(rename = "slow")]
    Slow,
    #[serde(rename = "timeout")]
    Timeout,
    #[serde(rename = "error500")]
    Error500,
    #[serde(rename = "error404")]
    Error404,
    #[serde(rename = "errorOther")]
    ErrorOther,
}

impl std::fmt::Display for FlagKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FlagKind::Outlier => "outlier",
            FlagKind::Slow => "slow",
            FlagKind::Timeout => "timeout",
            FlagKind::Error500 => "error500",
            FlagKind::Error404 => "error404",
            FlagKind::ErrorOther => "errorOther",
        };
        f.write_str(s)
    }
}

/// One flag with numeric evidence: the separation ratio for outliers,
/// the latency z-score for slow, the event count for timeouts, and the
/// HTTP code for errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub kind: FlagKind,
    pub evidence: f64,
}

/// Per-node result of one analysis pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    #[serde(rename = "m")]
    pub node_id: String,
    pub flags: Vec<Flag>,
    /// True when too few nodes clustered for an outlier verdict.
    pub inconclusive: bool,
    /// Distance from this node's cluster mean to the consensus center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_distance: Option<f64>,
    /// The node's cluster; in-process only, not serialized.
    #[serde(skip)]
    pub cluster: Option<AnswerCluster>,
}

impl NodeReport {
    fn empty(node_id: &str) -> Self {
        Self {
            node_id: node_id.to_string(),
            flags: Vec::new(),
            inconclusive: false,
            consensus_distance: None,
            cluster: None,
        }
    }

    pub fn has_flag(&self, kind: FlagKind) -> bool {
        self.flags.iter().any(|f| f.kind == kind)
    }

    pub fn flag(&self, kind: FlagKind) -> Option<&Flag> {
        self.flags.iter().find(|f| f.kind == kind)
    }

    /// Adds a flag, keeping the larger evidence on duplicates.
    pub fn add_flag(&mut self, flag: Flag) {
        match self.flags.iter_mut().find(|f| f.kind == flag.kind) {
            Some(existing) => existing.evidence = existing.evidence.max(flag.evidence),
            None => self.flags.push(flag),
        }
        self.flags.sort_by_key(|f| f.kind);
    }
}

fn ok_vectors(samples: &[&ResponseSample]) -> BTreeMap<String, Vec<crate::metrics::EmbeddingVector>> {
    let mut by_node: BTreeMap<String, Vec<crate::metrics::EmbeddingVector>> = BTreeMap::new();
    for s in samples {
        if let (SampleStatus::Ok, Some(v)) = (&s.status, &s.embedding) {
            by_node.entry(s.node_id.clone()).or_default().push(v.clone());
        }
    }
    by_node
}

fn coordinate_median(means: &[&AnswerCluster]) -> Vec<f64> {
    let z = means[0].dimension();
    let mut center = Vec::with_capacity(z);
    let mut column: Vec<f64> = Vec::with_capacity(means.len());
    for j in 0..z {
        column.clear();
        column.extend(means.iter().map(|c| c.mean.as_slice()[j]));
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        let k = column.len();
        let median = if k % 2 == 1 {
            column[k / 2]
        } else {
            (column[k / 2 - 1] + column[k / 2]) / 2.0
        };
        center.push(median);
    }
    center
}

fn distance_to(point: &[f64], center: &[f64]) -> f64 {
    point
        .iter()
        .zip(center)
        .map(|(x, c)| (x - c) * (x - c))
        .sum::<f64>()
        .sqrt()
}

/// Outlier analysis over one question's samples.
///
/// Every node appearing in `samples` gets a report; only nodes with at
/// least one ok sample get a cluster and can be flagged. With fewer than
/// `min_nodes` clustered nodes all reports come back inconclusive and
/// unflagged.
pub fn detect_outliers(
    samples: &[ResponseSample],
    config: &DetectionConfig,
) -> Result<Vec<NodeReport>, DetectorError> {
    let refs: Vec<&ResponseSample> = samples.iter().collect();
    detect_outliers_impl(&refs, config)
}

fn detect_outliers_impl(
    samples: &[&ResponseSample],
    config: &DetectionConfig,
) -> Result<Vec<NodeReport>, DetectorError> {
    if let Some(first) = samples.first() {
        if let Some(other) = samples.iter().find(|s| s.question_id != first.question_id) {
            return Err(DetectorError::MixedQuestions(
                first.question_id.clone(),
                other.question_id.clone(),
            ));
        }
    }

    let mut reports: BTreeMap<String, NodeReport> = BTreeMap::new();
    for s in samples {
        reports
            .entry(s.node_id.clone())
            .or_insert_with(|| NodeReport::empty(&s.node_id));
    }

    let question_id = samples.first().map(|s| s.question_id.as_str()).unwrap_or("");
    let mut clustered: Vec<(String, AnswerCluster)> = Vec::new();
    for (node_id, vectors) in ok_vectors(samples) {
        let set = SampleSet::new(question_id, node_id.as_str(), vectors)?;
        clustered.push((node_id, summarize(&set)));
    }
    if let Some(((_, first), rest)) = clustered.split_first() {
        for (_, c) in rest {
            if c.dimension() != first.dimension() {
                return Err(DetectorError::Metrics(MetricsError::DimensionMismatch {
                    expected: first.dimension(),
                    got: c.dimension(),
                }));
            }
        }
    }

    // LOO needs at least 2 clustered nodes even if misconfigured lower.
    let min_nodes = config.min_nodes.max(2);
    if clustered.len() < min_nodes {
        for (node_id, cluster) in clustered {
            let report = reports.get_mut(&node_id).expect("node seen in samples");
            report.cluster = Some(cluster);
        }
        for report in reports.values_mut() {
            report.inconclusive = true;
        }
        return Ok(reports.into_values().collect());
    }

    let cluster_refs: Vec<&AnswerCluster> = clustered.iter().map(|(_, c)| c).collect();
    let consensus = coordinate_median(&cluster_refs);
    let z = consensus.len() as f64;
    let dev_sq: Vec<f64> = cluster_refs
        .iter()
        .map(|c| {
            let d = distance_to(c.mean.as_slice(), &consensus);
            d * d
        })
        .collect();
    let total_dev_sq: f64 = dev_sq.iter().sum();
    let k_nodes = clustered.len();

    for (idx, (node_id, cluster)) in clustered.into_iter().enumerate() {
        let distance = dev_sq[idx].sqrt();
        let consensus_scatter =
            ((total_dev_sq - dev_sq[idx]) / ((k_nodes - 1) as f64 * z)).sqrt();
        let threshold_scale = cluster.rms_scatter + consensus_scatter;
        let report = reports.get_mut(&node_id).expect("node seen in samples");
        if distance > config.separation_k * threshold_scale {
            let evidence = if threshold_scale > 0.0 {
                distance / threshold_scale
            } else {
                f64::MAX
            };
            report.add_flag(Flag {
                kind: FlagKind::Outlier,
                evidence,
            });
        }
        report.consensus_distance = Some(distance);
        report.cluster = Some(cluster);
    }
    Ok(reports.into_values().collect())
}

/// Latency analysis: nodes whose mean ok-latency exceeds the domain mean
/// by more than `k` population standard deviations (over node means).
/// One-sided; only slowness is penalized. Returns flagged nodes with
/// their z-scores.
pub fn detect_slow(samples: &[ResponseSample], k: f64) -> BTreeMap<String, Flag> {
    let mut latencies: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for s in samples {
        if s.status == SampleStatus::Ok {
            let entry = latencies.entry(&s.node_id).or_insert((0.0, 0));
            entry.0 += s.latency_ms;
            entry.1 += 1;
        }
    }
    if latencies.len() < 2 {
        return BTreeMap::new();
    }
    let node_means: Vec<(&str, f64)> = latencies
        .into_iter()
        .map(|(node, (sum, count))| (node, sum / count as f64))
        .collect();
    let n = node_means.len() as f64;
    let mean = node_means.iter().map(|(_, m)| m).sum::<f64>() / n;
    let var = node_means
        .iter()
        .map(|(_, m)| (m - mean) * (m - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();

    let mut flags = BTreeMap::new();
    for (node, node_mean) in node_means {
        if node_mean > mean + k * std {
            let evidence = if std > 0.0 {
                (node_mean - mean) / std
            } else {
                f64::MAX
            };
            flags.insert(
                node.to_string(),
                Flag {
                    kind: FlagKind::Slow,
                    evidence,
                },
            );
        }
    }
    flags
}

/// Maps failure statuses to flags: any timeout raises `timeout` (count
/// as evidence); HTTP codes raise `error500`, `error404`, or
/// `errorOther` (code as evidence, first-seen code for `errorOther`).
pub fn classify_errors(samples: &[ResponseSample]) -> BTreeMap<String, Vec<Flag>> {
    let mut timeouts: BTreeMap<&str, u32> = BTreeMap::new();
    let mut errors: BTreeMap<&str, BTreeMap<FlagKind, u16>> = BTreeMap::new();
    for s in samples {
        match s.status {
            SampleStatus::Ok => {}
            SampleStatus::Timeout => {
                *timeouts.entry(&s.node_id).or_insert(0) += 1;
            }
            SampleStatus::HttpError => {
                let code = s.code.unwrap_or(0);
                let kind = match code {
                    500 => FlagKind::Error500,
                    404 => FlagKind::Error404,
                    _ => FlagKind::ErrorOther,
                };
                errors
                    .entry(&s.node_id)
                    .or_default()
                    .entry(kind)
                    .or_insert(code);
            }
        }
    }

    let mut flags: BTreeMap<String, Vec<Flag>> = BTreeMap::new();
    for (node, count) in timeouts {
        flags.entry(node.to_string()).or_default().push(Flag {
            kind: FlagKind::Timeout,
            evidence: count as f64,
        });
    }
    for (node, kinds) in errors {
        let entry = flags.entry(node.to_string()).or_default();
        for (kind, code) in kinds {
            entry.push(Flag {
                kind,
                evidence: code as f64,
            });
        }
    }
    for entry in flags.values_mut() {
        entry.sort_by_key(|f| f.kind);
    }
    flags
}

/// Merges reports for one node (for example across a round's questions):
/// flags union with maximum evidence, the cluster and distance follow the
/// strongest consensus distance, and the merge is inconclusive only if
/// every part was.
pub fn merge_reports(reports: Vec<NodeReport>) -> Option<NodeReport> {
    let mut iter = reports.into_iter();
    let mut merged = iter.next()?;
    for report in iter {
        debug_assert_eq!(report.node_id, merged.node_id);
        merged.inconclusive &= report.inconclusive;
        if report.consensus_distance.unwrap_or(f64::NEG_INFINITY)
            > merged.consensus_distance.unwrap_or(f64::NEG_INFINITY)
        {
            merged.consensus_distance = report.consensus_distance;
            merged.cluster = report.cluster;
        }
        for flag in report.flags {
            merged.add_flag(flag);
        }
    }
    Some(merged)
}

/// Full analysis of one round: outlier detection per question, latency
/// and error analysis across the whole round, merged into one report per
/// node, sorted by node id.
pub fn analyze_round(
    samples: &[ResponseSample],
    config: &DetectionConfig,
) -> Result<Vec<NodeReport>, DetectorError> {
    let mut by_question: BTreeMap<&str, Vec<&ResponseSample>> = BTreeMap::new();
    for s in samples {
        by_question.entry(&s.question_id).or_default().push(s);
    }

    let mut per_node: BTreeMap<String, Vec<NodeReport>> = BTreeMap::new();
    for refs in by_question.values() {
        for report in detect_outliers_impl(refs, config)? {
            per_node.entry(report.node_id.clone()).or_default().push(report);
        }
    }

    let mut merged: BTreeMap<String, NodeReport> = per_node
        .into_iter()
        .map(|(node, reports)| {
            let report = merge_reports(reports).expect("non-empty per node");
            (node, report)
        })
        .collect();

    for (node, flag) in detect_slow(samples, config.separation_k) {
        merged
            .entry(node.clone())
            .or_insert_with(|| NodeReport::empty(&node))
            .add_flag(flag);
    }
    for (node, flags) in classify_errors(samples) {
        let report = merged
            .entry(node.clone())
            .or_insert_with(|| NodeReport::empty(&node));
        for flag in flags {
            report.add_flag(flag);
        }
    }
    Ok(merged.into_values().collect())
}
