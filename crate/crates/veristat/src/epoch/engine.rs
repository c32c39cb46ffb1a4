//! Epoch orchestration: validators poll the domain in rounds, publish
//! signed reports, and a seeded aggregator turns the verified reports
//! into verdicts and stake mutations.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{analyze_round, DetectionConfig, Flag, FlagKind};
use crate::network::{DomainSpec, NodeConfig, Poller, Question};
use crate::rng::derive_rng;

use super::{
    apply_economics, reinstate_due, BulletinBoard, EpochConfig, EpochError, MessageSigner,
    StakeLedger, StakeMutation, ValidatorMessage,
};

/// Epoch-level consensus over all validator messages.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    /// Flags confirmed by a strict majority of reporting validators,
    /// per node, sorted by kind. Evidence is the strongest any
    /// confirming validator saw.
    pub node_flags: BTreeMap<String, Vec<Flag>>,
    /// Disagreement marks per reporting validator (zero entries kept).
    pub validator_marks: BTreeMap<String, u32>,
    /// Validators with at least one valid message this epoch.
    pub reporting: BTreeSet<String>,
}

/// Combines validator messages for one epoch.
///
/// A node carries a flag kind when a strict majority of reporting
/// validators flagged it (in any round). Validators on the losing side
/// of a vote accrue one disagreement mark per contested (node, kind);
/// on an exact tie nobody wins, so every reporter is marked. Only the
/// first message per (validator, round) counts.
pub fn aggregate(messages: &[ValidatorMessage]) -> Result<AggregateResult, EpochError> {
    if messages.is_empty() {
        return Err(EpochError::EmptyMessages);
    }

    let mut seen_rounds: BTreeSet<(&str, u32)> = BTreeSet::new();
    let mut reporting: BTreeSet<String> = BTreeSet::new();
    // (node, kind) -> (validators voting yes, strongest evidence).
    let mut votes: BTreeMap<(String, FlagKind), (BTreeSet<String>, f64)> = BTreeMap::new();

    for msg in messages {
        reporting.insert(msg.validator.clone());
        if !seen_rounds.insert((&msg.validator, msg.round)) {
            continue;
        }
        for report in &msg.reports {
            for flag in &report.flags {
                let entry = votes
                    .entry((report.node_id.clone(), flag.kind))
                    .or_insert_with(|| (BTreeSet::new(), f64::NEG_INFINITY));
                entry.0.insert(msg.validator.clone());
                entry.1 = entry.1.max(flag.evidence);
            }
        }
    }

    let total = reporting.len();
    let mut node_flags: BTreeMap<String, Vec<Flag>> = BTreeMap::new();
    let mut validator_marks: BTreeMap<String, u32> =
        reporting.iter().map(|v| (v.clone(), 0)).collect();

    for ((node, kind), (yes, evidence)) in votes {
        let mut mark = |v: &String| *validator_marks.get_mut(v).expect("reporting") += 1;
        if 2 * yes.len() > total {
            node_flags
                .entry(node)
                .or_default()
                .push(Flag { kind, evidence });
            for v in reporting.difference(&yes) {
                mark(v);
            }
        } else if 2 * (total - yes.len()) > total {
            for v in &yes {
                mark(v);
            }
        } else {
            for v in &reporting {
                mark(v);
            }
        }
    }
    for flags in node_flags.values_mut() {
        flags.sort_by_key(|f| f.kind);
    }

    Ok(AggregateResult {
        node_flags,
        validator_marks,
        reporting,
    })
}

/// Result of one epoch, as published by the aggregator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochOutcome {
    pub epoch: u64,
    /// Majority flags per participating node; clean nodes have an
    /// empty list.
    pub node_verdicts: BTreeMap<String, Vec<Flag>>,
    pub validator_marks: BTreeMap<String, u32>,
    pub stake_mutations: Vec<StakeMutation>,
    /// Which reporter combined the epoch; informational, so not part
    /// of the serialized record.
    #[serde(skip)]
    pub aggregator: String,
}

/// Drives epochs for one domain.
pub struct EpochEngine<'a> {
    poller: &'a Poller,
    signer: &'a dyn MessageSigner,
    pub detection: DetectionConfig,
    pub config: EpochConfig,
}

impl<'a> EpochEngine<'a> {
    pub fn new(
        poller: &'a Poller,
        signer: &'a dyn MessageSigner,
        detection: DetectionConfig,
        config: EpochConfig,
    ) -> Self {
        Self {
            poller,
            signer,
            detection,
            config,
        }
    }

    /// Runs one full epoch: reinstate lapsed suspensions, have every
    /// active validator poll the active nodes over `rounds_per_epoch`
    /// rounds, post signed reports to `board`, then verify, aggregate,
    /// and settle stakes.
    ///
    /// Everything is a pure function of the poller seed, the epoch
    /// number, and the inputs, so a re-run reproduces the outcome
    /// bit for bit.
    pub fn run_epoch(
        &self,
        domain: &DomainSpec,
        questions: &[Question],
        ledger: &mut StakeLedger,
        board: &mut BulletinBoard,
        epoch: u64,
    ) -> Result<EpochOutcome, EpochError> {
        self.config.validate()?;
        if questions.is_empty() {
            return Err(EpochError::NoQuestions);
        }
        if self.config.validators.is_empty() {
            return Err(EpochError::NoValidators);
        }
        for node in &domain.nodes {
            if ledger.account(&node.id).is_none() {
                return Err(EpochError::UnknownAccount(node.id.clone()));
            }
        }
        for validator in &self.config.validators {
            if ledger.account(validator).is_none() {
                return Err(EpochError::UnknownAccount(validator.clone()));
            }
        }

        let mut mutations = reinstate_due(ledger, epoch);

        let active_nodes: Vec<&NodeConfig> = domain
            .nodes
            .iter()
            .filter(|n| ledger.account(&n.id).expect("checked").is_active())
            .collect();
        if active_nodes.is_empty() {
            return Err(EpochError::NoActiveNodes);
        }
        let active_validators: Vec<String> = self
            .config
            .validators
            .iter()
            .filter(|v| ledger.account(v).expect("checked").is_active())
            .cloned()
            .collect();
        if active_validators.is_empty() {
            return Err(EpochError::NoValidators);
        }

        let seed = self.poller.seed();
        let rounds = self.config.rounds_per_epoch;
        let epoch_label = epoch.to_string();

        for (v_idx, validator) in active_validators.iter().enumerate() {
            for round in 0..rounds {
                let mut qrng = derive_rng(
                    seed,
                    &[
                        "epoch",
                        &epoch_label,
                        "validator",
                        validator,
                        "round",
                        &round.to_string(),
                        "question",
                    ],
                );
                let question = &questions[qrng.gen_range(0..questions.len())];

                // Globally unique trial range per (epoch, round, validator)
                // so no two validators ever see the same simulated draw.
                let slot = (epoch * rounds as u64 + round as u64)
                    * active_validators.len() as u64
                    + v_idx as u64;
                let base: u32 = (slot * self.config.repeats as u64)
                    .try_into()
                    .map_err(|_| {
                        EpochError::InvalidConfig("trial index space exhausted".into())
                    })?;
                let samples = self.poller.poll_trials(
                    &active_nodes,
                    question,
                    base..base + self.config.repeats,
                    self.config.timeout_ms,
                )?;

                let reports = analyze_round(&samples, &self.detection)?;
                let payload = ValidatorMessage::payload_bytes(
                    validator,
                    epoch,
                    round,
                    &question.id,
                    &reports,
                );
                let sig = self
                    .signer
                    .sign(validator, &payload)
                    .ok_or_else(|| EpochError::SignerMissingKey(validator.clone()))?;
                board.post(ValidatorMessage {
                    validator: validator.clone(),
                    epoch,
                    round,
                    question: question.id.clone(),
                    reports,
                    sig: hex::encode(sig),
                })?;
            }
        }

        // The aggregator trusts nothing on the board: only messages with
        // a verifiable signature count.
        let valid: Vec<ValidatorMessage> = board
            .for_epoch(epoch)
            .into_iter()
            .filter(|msg| {
                let sig = hex::decode(&msg.sig).unwrap_or_default();
                self.signer.verify(&msg.validator, &msg.own_payload(), &sig)
            })
            .cloned()
            .collect();
        if valid.is_empty() {
            return Err(EpochError::AllMessagesInvalid(epoch));
        }

        let agg = aggregate(&valid)?;

        let reporters: Vec<&String> = agg.reporting.iter().collect();
        let mut arng = derive_rng(seed, &["epoch", &epoch_label, "aggregator"]);
        let aggregator = reporters[arng.gen_range(0..reporters.len())].clone();

        let participating: Vec<String> =
            active_nodes.iter().map(|n| n.id.clone()).collect();
        mutations.extend(apply_economics(
            ledger,
            epoch,
            &agg,
            &participating,
            &active_validators,
            &self.config,
        )?);

        let mut node_verdicts: BTreeMap<String, Vec<Flag>> = participating
            .into_iter()
            .map(|n| (n, Vec::new()))
            .collect();
        for (node, flags) in agg.node_flags {
            node_verdicts.insert(node, flags);
        }

        Ok(EpochOutcome {
            epoch,
            node_verdicts,
            validator_marks: agg.validator_marks,
            stake_mutations: mutations,
            aggregator,
        })
    }
}

/// Verdict on a node asking to join a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum AdmissionDecision {
    Admit,
    Reject { flags: Vec<Flag> },
}

/// Probes a candidate node against the domain's active members before
/// it is allowed in: the candidate answers every question alongside
/// them and must come out of the analysis flag-free. An inconclusive
/// analysis (too few clustered nodes) refuses to decide.
pub fn admit_candidate(
    engine: &EpochEngine,
    domain: &DomainSpec,
    questions: &[Question],
    ledger: &StakeLedger,
    candidate: &NodeConfig,
) -> Result<AdmissionDecision, EpochError> {
    engine.config.validate()?;
    if questions.is_empty() {
        return Err(EpochError::NoQuestions);
    }
    if domain.node(&candidate.id).is_some() {
        return Err(EpochError::InvalidConfig(format!(
            "candidate {} is already a domain member",
            candidate.id
        )));
    }

    let mut probed: Vec<&NodeConfig> = domain
        .nodes
        .iter()
        .filter(|n| {
            ledger
                .account(&n.id)
                .map(|a| a.is_active())
                .unwrap_or(false)
        })
        .collect();
    if probed.is_empty() {
        return Err(EpochError::NoActiveNodes);
    }
    probed.push(candidate);

    let mut samples = Vec::new();
    for question in questions {
        samples.extend(engine.poller.poll_trials(
            &probed,
            question,
            0..engine.config.repeats,
            engine.config.timeout_ms,
        )?);
    }
    let reports = analyze_round(&samples, &engine.detection)?;
    let report = reports
        .iter()
        .find(|r| r.node_id == candidate.id)
        .expect("candidate was polled");
    if report.inconclusive {
        return Err(EpochError::NoConsensus);
    }
    if report.flags.is_empty() {
        Ok(AdmissionDecision::Admit)
    } else {
        Ok(AdmissionDecision::Reject {
            flags: report.flags.clone(),
        })
    }
}
