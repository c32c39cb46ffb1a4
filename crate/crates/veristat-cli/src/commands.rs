//! Subcommand implementations. Each writes its artifacts into one
//! output directory and closes it with a manifest; stdout carries a
//! short human summary, never data.

use std::path::Path;

use anyhow::anyhow;

use veristat::detector::DetectionConfig;
use veristat::epoch::{
    admit_candidate, AdmissionDecision, BulletinBoard, EpochEngine, KeyedSigner, StakeLedger,
};
use veristat::network::{NodeConfig, ResponseSample};
use veristat::ranker::rank_questions;
use veristat::scenario::ScenarioConfig;

use crate::artifacts::{sha256_hex, OutDir};
use crate::stats;
use crate::{Failure, FailureExt};

fn out_dir(explicit: Option<&Path>) -> Result<OutDir, Failure> {
    OutDir::create(explicit.unwrap_or(Path::new("."))).or_runtime()
}

fn pretty_json(value: &impl serde::Serialize) -> Result<String, Failure> {
    Ok(format!(
        "{}\n",
        serde_json::to_string_pretty(value).or_runtime()?
    ))
}

/// Reads a samples JSONL file; returns the samples and the file's
/// digest, which stands in for a config hash in the manifest.
fn read_samples(path: &Path) -> Result<(Vec<ResponseSample>, String), Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::Config(anyhow!("reading {}: {e}", path.display())))?;
    let hash = sha256_hex(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|e| Failure::Config(anyhow!("{} is not UTF-8: {e}", path.display())))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: ResponseSample = serde_json::from_str(line)
            .map_err(|e| Failure::Config(anyhow!("{}:{}: {e}", path.display(), i + 1)))?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Failure::Config(anyhow!(
            "samples file {} is empty",
            path.display()
        )));
    }
    Ok((samples, hash))
}

fn require_questions(scenario: &ScenarioConfig) -> Result<(), Failure> {
    if scenario.questions.is_empty() {
        return Err(Failure::Config(anyhow!("scenario has no questions")));
    }
    Ok(())
}

pub fn experiment(scenario: &ScenarioConfig, config_sha: &str) -> Result<(), Failure> {
    require_questions(scenario)?;
    if scenario.repeats == 0 {
        return Err(Failure::Config(anyhow!("repeats must be at least 1")));
    }
    let domain = scenario.domain_spec().or_config()?;
    let poller = scenario.build_poller().or_config()?;
    let out = out_dir(scenario.out_dir.as_deref())?;

    let nodes: Vec<&NodeConfig> = domain.nodes.iter().collect();
    let mut samples = Vec::new();
    for question in &scenario.questions {
        samples.extend(
            poller
                .poll_many(&nodes, question, scenario.repeats, scenario.timeout_ms)
                .or_runtime()?,
        );
    }

    let mut jsonl = String::new();
    for sample in &samples {
        jsonl.push_str(&serde_json::to_string(sample).or_runtime()?);
        jsonl.push('\n');
    }
    out.write("samples.jsonl", jsonl).or_runtime()?;

    let mut names = vec!["samples.jsonl"];
    names.extend(
        stats::write_statistics(&samples, scenario.detection.separation_k, &out).or_runtime()?,
    );
    out.finish("experiment", config_sha, Some(scenario.seed), &names)
        .or_runtime()?;
    println!(
        "experiment: {} samples over {} questions x {} configurations -> {}",
        samples.len(),
        scenario.questions.len(),
        domain.nodes.len(),
        out.path().display()
    );
    Ok(())
}

pub fn epoch(scenario: &ScenarioConfig, config_sha: &str, epochs: u64) -> Result<(), Failure> {
    require_questions(scenario)?;
    let domain = scenario.domain_spec().or_config()?;
    let poller = scenario.build_poller().or_config()?;
    let cfg = scenario.epoch.clone();
    let signer = KeyedSigner::new(scenario.seed, cfg.validators.iter().cloned());
    let engine = EpochEngine::new(&poller, &signer, scenario.detection.clone(), cfg.clone());
    let owners = domain
        .nodes
        .iter()
        .map(|n| n.id.clone())
        .chain(cfg.validators.iter().cloned());
    let mut ledger = StakeLedger::with_accounts(owners, cfg.initial_stake);

    let out = out_dir(scenario.out_dir.as_deref())?;
    // The board file appends; rerunning into the same directory must
    // not replay onto a stale transcript.
    let board_path = out.file("board.jsonl");
    if board_path.exists() {
        std::fs::remove_file(&board_path).or_runtime()?;
    }
    let mut board = BulletinBoard::with_file(&board_path).or_runtime()?;

    let mut names: Vec<String> = vec!["board.jsonl".into()];
    for e in 1..=epochs {
        let outcome = engine
            .run_epoch(&domain, &scenario.questions, &mut ledger, &mut board, e)
            .or_runtime()?;
        let flagged: usize = outcome.node_verdicts.values().filter(|f| !f.is_empty()).count();
        println!(
            "epoch {e}: {flagged} flagged node(s), {} stake mutation(s)",
            outcome.stake_mutations.len()
        );
        let name = format!("epoch_{e:04}.json");
        out.write(&name, pretty_json(&outcome)?).or_runtime()?;
        names.push(name);
    }
    out.write("ledger.json", pretty_json(&ledger)?).or_runtime()?;
    names.push("ledger.json".into());

    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    out.finish("epoch", config_sha, Some(scenario.seed), &refs)
        .or_runtime()?;
    println!(
        "epoch: ran {epochs} epoch(s), total staked {} -> {}",
        ledger.total_staked(),
        out.path().display()
    );
    Ok(())
}

pub fn admit(scenario: &ScenarioConfig, config_sha: &str) -> Result<(), Failure> {
    let candidate = scenario
        .candidate
        .as_ref()
        .ok_or_else(|| Failure::Config(anyhow!("scenario has no [candidate] table")))?;
    require_questions(scenario)?;
    let domain = scenario.domain_spec().or_config()?;
    let poller = scenario.build_poller().or_config()?;
    let cfg = scenario.epoch.clone();
    let signer = KeyedSigner::new(scenario.seed, cfg.validators.iter().cloned());
    let engine = EpochEngine::new(&poller, &signer, scenario.detection.clone(), cfg.clone());
    let ledger = StakeLedger::with_accounts(
        domain.nodes.iter().map(|n| n.id.clone()),
        cfg.initial_stake,
    );

    let decision = admit_candidate(&engine, &domain, &scenario.questions, &ledger, candidate)
        .or_runtime()?;
    let out = out_dir(scenario.out_dir.as_deref())?;
    out.write("admit.json", pretty_json(&decision)?).or_runtime()?;
    out.finish("admit", config_sha, Some(scenario.seed), &["admit.json"])
        .or_runtime()?;
    match &decision {
        AdmissionDecision::Admit => println!("admit: {} admitted", candidate.id),
        AdmissionDecision::Reject { flags } => {
            println!("admit: {} rejected with {} flag(s)", candidate.id, flags.len())
        }
    }
    Ok(())
}

pub fn rank(samples_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let (samples, hash) = read_samples(samples_path)?;
    let ranking = rank_questions(&samples).or_config()?;
    let out = out_dir(out)?;

    // Union of pairs across questions; a question missing a pair
    // leaves that cell empty.
    let pairs: std::collections::BTreeSet<&(String, String)> =
        ranking.iter().flat_map(|q| q.pair_ratios.keys()).collect();
    let mut header = vec!["question_id".to_string(), "effectiveness".to_string()];
    header.extend(pairs.iter().map(|(a, b)| format!("ratio:{a}|{b}")));

    let mut w = csv::Writer::from_path(out.file("rank.csv")).or_runtime()?;
    w.write_record(&header).or_runtime()?;
    for q in &ranking {
        let mut row = vec![
            q.question_id.clone(),
            q.effectiveness.map(|e| format!("{e}")).unwrap_or_default(),
        ];
        for pair in &pairs {
            row.push(
                q.pair_ratios
                    .get(*pair)
                    .map(|r| format!("{r}"))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row).or_runtime()?;
    }
    w.flush().or_runtime()?;

    out.finish("rank", &hash, None, &["rank.csv"]).or_runtime()?;
    let scored = ranking.iter().filter(|q| q.effectiveness.is_some()).count();
    match ranking.first().and_then(|q| q.effectiveness.map(|e| (q, e))) {
        Some((best, eff)) => println!(
            "rank: {scored} of {} questions scored; best {} at {eff}",
            ranking.len(),
            best.question_id
        ),
        None => println!("rank: 0 of {} questions scored", ranking.len()),
    }
    Ok(())
}

pub fn replay(
    samples_path: &Path,
    out: Option<&Path>,
    detection: &DetectionConfig,
) -> Result<(), Failure> {
    let (samples, hash) = read_samples(samples_path)?;
    let out = out_dir(out)?;
    let names = stats::write_statistics(&samples, detection.separation_k, &out).or_runtime()?;
    let refs: Vec<&str> = names.to_vec();
    out.finish("replay", &hash, None, &refs).or_runtime()?;
    println!(
        "replay: {} samples recomputed -> {}",
        samples.len(),
        out.path().display()
    );
    Ok(())
}
