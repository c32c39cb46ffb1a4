//! The validator protocol.
//!
//! Each epoch, every validator independently polls the domain over
//! several rounds, analyzes the samples, and posts signed reports to a
//! bulletin board. One validator, chosen by a seeded draw, aggregates
//! all verified messages into per-node epoch verdicts and per-validator
//! disagreement marks; the stake ledger then applies rewards, suspension,
//! and slashing. Epochs tick on a simulation clock: a 12-hour epoch is
//! just a number.

mod board;
mod engine;
mod signer;
mod stake;

pub use board::{BulletinBoard, ValidatorMessage};
pub use engine::{
    admit_candidate, aggregate, AdmissionDecision, AggregateResult, EpochEngine, EpochOutcome,
};
pub use signer::{KeyedSigner, MessageSigner};
pub use stake::{
    apply_economics, reinstate_due, AccountStatus, EpochRecord, MutationKind, StakeAccount,
    StakeLedger, StakeMutation,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::DetectorError;
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum EpochError {
    #[error("no validators registered")]
    NoValidators,
    #[error("no valid validator messages for epoch {0}")]
    AllMessagesInvalid(u64),
    #[error("empty message set")]
    EmptyMessages,
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("no usable questions")]
    NoQuestions,
    #[error("no active nodes to poll")]
    NoActiveNodes,
    #[error("domain consensus inconclusive; cannot admit")]
    NoConsensus,
    #[error("signer has no key for validator {0}")]
    SignerMissingKey(String),
    #[error("invalid epoch config: {0}")]
    InvalidConfig(String),
    #[error("bulletin board parse error at line {line}: {message}")]
    BoardParse { line: usize, message: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("board io: {0}")]
    Io(#[from] std::io::Error),
}

fn default_epoch_duration_ms() -> u64 {
    43_200_000
}

fn default_rounds_per_epoch() -> u32 {
    6
}

fn default_reward() -> u64 {
    1_000
}

fn default_clean_epochs() -> u32 {
    10
}

fn default_suspension_epochs() -> u64 {
    3
}

fn default_slash_schedule() -> Vec<f64> {
    vec![0.0, 0.1, 0.5, 1.0]
}

fn default_disagreement_window() -> u32 {
    5
}

fn default_disagreement_threshold() -> u32 {
    3
}

fn default_repeats() -> u32 {
    8
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_slow_epochs() -> u32 {
    3
}

fn default_initial_stake() -> u64 {
    1_000_000
}

/// Protocol parameters for one domain's epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochConfig {
    /// Simulation-clock length of one epoch.
    #[serde(default = "default_epoch_duration_ms")]
    pub epoch_duration_ms: u64,
    #[serde(default = "default_rounds_per_epoch")]
    pub rounds_per_epoch: u32,
    #[serde(default)]
    pub validators: Vec<String>,
    #[serde(default = "default_reward")]
    pub reward_per_epoch: u64,
    /// Trailing flag-free epochs required before a reward.
    #[serde(default = "default_clean_epochs")]
    pub clean_epochs_for_reward: u32,
    #[serde(default = "default_suspension_epochs")]
    pub suspension_epochs: u64,
    /// Slash fraction by offense number (1-based, clamped to last).
    #[serde(default = "default_slash_schedule")]
    pub slash_fraction_schedule: Vec<f64>,
    #[serde(default = "default_disagreement_window")]
    pub disagreement_window: u32,
    #[serde(default = "default_disagreement_threshold")]
    pub disagreement_threshold: u32,
    /// Polls per node per round.
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Consecutive slow epochs that constitute an offense.
    #[serde(default = "default_slow_epochs")]
    pub slow_epochs_for_offense: u32,
    #[serde(default = "default_initial_stake")]
    pub initial_stake: u64,
}

impl Default for EpochConfig {
    fn default() -> Self {
        Self {
            epoch_duration_ms: default_epoch_duration_ms(),
            rounds_per_epoch: default_rounds_per_epoch(),
            validators: Vec::new(),
            reward_per_epoch: default_reward(),
            clean_epochs_for_reward: default_clean_epochs(),
            suspension_epochs: default_suspension_epochs(),
            slash_fraction_schedule: default_slash_schedule(),
            disagreement_window: default_disagreement_window(),
            disagreement_threshold: default_disagreement_threshold(),
            repeats: default_repeats(),
            timeout_ms: default_timeout_ms(),
            slow_epochs_for_offense: default_slow_epochs(),
            initial_stake: default_initial_stake(),
        }
    }
}

impl EpochConfig {
    pub fn validate(&self) -> Result<(), EpochError> {
        let fail = |m: String| Err(EpochError::InvalidConfig(m));
        if self.epoch_duration_ms == 0 {
            return fail("epoch duration must be positive".into());
        }
        if self.rounds_per_epoch == 0 {
            return fail("rounds_per_epoch must be at least 1".into());
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1".into());
        }
        if self.timeout_ms == 0 {
            return fail("timeout must be positive".into());
        }
        let mut prev = 0.0;
        for (i, f) in self.slash_fraction_schedule.iter().enumerate() {
            if !(0.0..=1.0).contains(f) {
                return fail(format!("slash fraction {f} at {i} outside [0, 1]"));
            }
            if *f < prev {
                return fail(format!("slash schedule decreases at {i}"));
            }
            prev = *f;
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.validators {
            if !seen.insert(v) {
                return fail(format!("duplicate validator {v}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(EpochConfig::default().validate().is_ok());
    }

    #[test]
    fn validation_catches_bad_schedules() {
        let mut cfg = EpochConfig {
            slash_fraction_schedule: vec![0.0, 1.5],
            ..EpochConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.slash_fraction_schedule = vec![0.5, 0.1];
        assert!(cfg.validate().is_err());
        cfg.slash_fraction_schedule = vec![0.0, 0.1];
        cfg.rounds_per_epoch = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn validation_catches_duplicate_validators() {
        let cfg = EpochConfig {
            validators: vec!["v1".into(), "v1".into()],
            ..EpochConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
