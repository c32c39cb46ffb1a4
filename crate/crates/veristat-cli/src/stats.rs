//! Cluster statistics emitted as CSV, shared by `experiment` and
//! `replay`. Row order is fully determined by the input (sorted ids),
//! and floats print through the standard shortest-round-trip
//! formatter, so identical samples yield identical bytes.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::Context;

use veristat::metrics::{separation, summarize, AnswerCluster, SampleSet};
use veristat::network::ResponseSample;

use crate::artifacts::OutDir;

/// Per-(question, configuration) clusters over the usable samples.
pub fn build_clusters(
    samples: &[ResponseSample],
) -> anyhow::Result<BTreeMap<(String, String), AnswerCluster>> {
    let mut vectors: BTreeMap<(String, String), Vec<veristat::metrics::EmbeddingVector>> =
        BTreeMap::new();
    for s in samples {
        if let Some(v) = &s.embedding {
            if s.is_ok() {
                vectors
                    .entry((s.question_id.clone(), s.node_id.clone()))
                    .or_default()
                    .push(v.clone());
            }
        }
    }
    let mut clusters = BTreeMap::new();
    for ((question, node), vs) in vectors {
        let set = SampleSet::new(&question, &node, vs)
            .with_context(|| format!("samples for ({question}, {node})"))?;
        clusters.insert((question, node), summarize(&set));
    }
    Ok(clusters)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes clusters.csv, distances.csv, and summary.csv; returns the
/// artifact names written.
pub fn write_statistics(
    samples: &[ResponseSample],
    separation_k: f64,
    out: &OutDir,
) -> anyhow::Result<Vec<&'static str>> {
    let clusters = build_clusters(samples)?;
    let configs: BTreeSet<&str> = samples.iter().map(|s| s.node_id.as_str()).collect();
    let questions: BTreeSet<&str> = samples.iter().map(|s| s.question_id.as_str()).collect();

    let mut w = csv::Writer::from_path(out.file("clusters.csv"))?;
    w.write_record(["question_id", "node_id", "n_ok", "rms_scatter"])?;
    for ((question, node), cluster) in &clusters {
        w.write_record([
            question,
            node,
            &cluster.n.to_string(),
            &fmt_f64(cluster.rms_scatter),
        ])?;
    }
    w.flush()?;

    // Per-question pairwise separations; pairs lacking a cluster on
    // either side are simply absent (clusters.csv shows why).
    let mut w = csv::Writer::from_path(out.file("distances.csv"))?;
    w.write_record([
        "question_id",
        "config_a",
        "config_b",
        "distance",
        "scatter_a",
        "scatter_b",
        "ratio",
        "distinguishable",
    ])?;
    // (a, b) -> per-question (distance, scatter_a, scatter_b)
    type PairRow = (f64, f64, f64);
    let mut pair_rows: BTreeMap<(&str, &str), Vec<PairRow>> = BTreeMap::new();
    for question in &questions {
        let pairs = ordered_pairs(&configs);
        for (a, b) in pairs {
            let (Some(ca), Some(cb)) = (
                clusters.get(&(question.to_string(), a.to_string())),
                clusters.get(&(question.to_string(), b.to_string())),
            ) else {
                continue;
            };
            let sep = separation(ca, cb, separation_k)
                .with_context(|| format!("separating {a} and {b} on {question}"))?;
            w.write_record([
                *question,
                a,
                b,
                &fmt_f64(sep.distance),
                &fmt_f64(ca.rms_scatter),
                &fmt_f64(cb.rms_scatter),
                &sep.ratio.map(fmt_f64).unwrap_or_default(),
                &sep.distinguishable.to_string(),
            ])?;
            pair_rows
                .entry((a, b))
                .or_default()
                .push((sep.distance, ca.rms_scatter, cb.rms_scatter));
        }
    }
    w.flush()?;

    // Across-question averages per pair, judged with the same
    // distinguishability predicate.
    let mut w = csv::Writer::from_path(out.file("summary.csv"))?;
    w.write_record([
        "config_a",
        "config_b",
        "d_ave",
        "scatter_a_ave",
        "scatter_b_ave",
        "ratio",
        "distinguishable",
    ])?;
    for ((a, b), rows) in &pair_rows {
        let n = rows.len() as f64;
        let d_ave = rows.iter().map(|r| r.0).sum::<f64>() / n;
        let sa = rows.iter().map(|r| r.1).sum::<f64>() / n;
        let sb = rows.iter().map(|r| r.2).sum::<f64>() / n;
        let max_scatter = sa.max(sb);
        let ratio = if max_scatter > 0.0 {
            fmt_f64(d_ave / max_scatter)
        } else {
            String::new()
        };
        let distinguishable = d_ave > separation_k * (sa + sb);
        w.write_record([
            *a,
            *b,
            &fmt_f64(d_ave),
            &fmt_f64(sa),
            &fmt_f64(sb),
            &ratio,
            &distinguishable.to_string(),
        ])?;
    }
    w.flush()?;

    Ok(vec!["clusters.csv", "distances.csv", "summary.csv"])
}

fn ordered_pairs<'a>(configs: &'a BTreeSet<&'a str>) -> Vec<(&'a str, &'a str)> {
    let ids: Vec<&str> = configs.iter().copied().collect();
    let mut pairs = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            pairs.push((*a, *b));
        }
    }
    pairs
}
