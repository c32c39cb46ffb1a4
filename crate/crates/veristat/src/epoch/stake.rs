//! Stake state machine: rewards, suspension, slashing.
//!
//! Stake is held in integer units so conservation is exact: after every
//! epoch, total stake equals the previous total plus minted rewards minus
//! slashed amounts, to the unit.
//!
//! Offense handling follows a gradual-punishment schedule. An offense is
//! an outlier or server-error verdict this epoch, or a slow verdict
//! sustained for a configured number of consecutive epochs. The k-th
//! offense suspends the account and slashes the fraction at schedule
//! position k-1 (clamped to the last entry), so the default schedule
//! [0, 0.1, 0.5, 1.0] suspends without slashing on the first offense and
//! escalates to full confiscation on the fourth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::FlagKind;

use super::{AggregateResult, EpochConfig, EpochError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountStatus {
    Active,
    /// Suspended through epoch `until`, inclusive; reinstated after.
    Suspended { until: u64 },
    /// Terminal: stake fully confiscated.
    Slashed,
}

/// What happened to an account in one epoch it participated in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EpochRecord {
    /// Epoch verdict flag kinds (nodes).
    pub flags: Vec<FlagKind>,
    /// Disagreement marks accrued (validators).
    pub marks: u32,
    /// Offense declared this epoch.
    pub suspended: bool,
    pub rewarded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StakeAccount {
    pub owner_id: String,
    pub staked: u64,
    pub status: AccountStatus,
    pub offense_count: u32,
    /// Epochs the account participated in. Suspended epochs have no
    /// entry, which is what breaks reward streaks.
    pub history: BTreeMap<u64, EpochRecord>,
    /// Most recent offense epoch; disagreement windows do not reach
    /// behind it, so one burst of marks is not punished twice.
    pub last_offense_epoch: Option<u64>,
}

impl StakeAccount {
    pub fn new(owner_id: impl Into<String>, staked: u64) -> Self {
        Self {
            owner_id: owner_id.into(),
            staked,
            status: AccountStatus::Active,
            offense_count: 0,
            history: BTreeMap::new(),
            last_offense_epoch: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == AccountStatus::Active
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    Reward,
    Slash,
    Suspend,
    Reinstate,
}

/// One applied stake change, in application order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StakeMutation {
    pub owner: String,
    pub kind: MutationKind,
    /// Stake units moved; zero for suspend/reinstate.
    pub amount: u64,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StakeLedger {
    pub accounts: BTreeMap<String, StakeAccount>,
}

impl StakeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_accounts(ids: impl IntoIterator<Item = String>, initial_stake: u64) -> Self {
        let accounts = ids
            .into_iter()
            .map(|id| (id.clone(), StakeAccount::new(id, initial_stake)))
            .collect();
        Self { accounts }
    }

    pub fn account(&self, id: &str) -> Option<&StakeAccount> {
        self.accounts.get(id)
    }

    pub fn total_staked(&self) -> u64 {
        self.accounts.values().map(|a| a.staked).sum()
    }

    fn require_mut(&mut self, id: &str) -> Result<&mut StakeAccount, EpochError> {
        self.accounts
            .get_mut(id)
            .ok_or_else(|| EpochError::UnknownAccount(id.to_string()))
    }
}

/// Reactivates accounts whose suspension has lapsed (epoch > until).
/// Call at the start of an epoch, before selecting participants.
pub fn reinstate_due(ledger: &mut StakeLedger, epoch: u64) -> Vec<StakeMutation> {
    let mut mutations = Vec::new();
    for account in ledger.accounts.values_mut() {
        if let AccountStatus::Suspended { until } = account.status {
            if epoch > until {
                account.status = AccountStatus::Active;
                mutations.push(StakeMutation {
                    owner: account.owner_id.clone(),
                    kind: MutationKind::Reinstate,
                    amount: 0,
                    epoch,
                });
            }
        }
    }
    mutations
}

fn is_node_offense(
    account: &StakeAccount,
    epoch: u64,
    flags: &[FlagKind],
    config: &EpochConfig,
) -> bool {
    if flags.contains(&FlagKind::Outlier) || flags.contains(&FlagKind::Error500) {
        return true;
    }
    if !flags.contains(&FlagKind::Slow) {
        return false;
    }
    // Slow counts as an offense only when sustained: this epoch plus the
    // preceding consecutive epochs must all carry a slow verdict.
    let needed = config.slow_epochs_for_offense;
    if needed <= 1 {
        return true;
    }
    for back in 1..needed as u64 {
        let Some(prior) = epoch.checked_sub(back) else {
            return false;
        };
        match account.history.get(&prior) {
            Some(record) if record.flags.contains(&FlagKind::Slow) => {}
            _ => return false,
        }
    }
    true
}

fn slash_fraction(schedule: &[f64], offense_count: u32) -> f64 {
    if schedule.is_empty() {
        return 0.0;
    }
    let idx = ((offense_count as usize).saturating_sub(1)).min(schedule.len() - 1);
    schedule[idx]
}

fn punish(
    account: &mut StakeAccount,
    epoch: u64,
    config: &EpochConfig,
    mutations: &mut Vec<StakeMutation>,
) {
    account.offense_count += 1;
    account.last_offense_epoch = Some(epoch);
    let fraction = slash_fraction(&config.slash_fraction_schedule, account.offense_count);
    // Stake units stay below 2^53, so the f64 product is exact enough
    // for a deterministic floor.
    let amount = (account.staked as f64 * fraction).floor() as u64;
    mutations.push(StakeMutation {
        owner: account.owner_id.clone(),
        kind: MutationKind::Suspend,
        amount: 0,
        epoch,
    });
    if amount > 0 {
        account.staked -= amount;
        mutations.push(StakeMutation {
            owner: account.owner_id.clone(),
            kind: MutationKind::Slash,
            amount,
            epoch,
        });
    }
    account.status = if fraction >= 1.0 {
        AccountStatus::Slashed
    } else {
        AccountStatus::Suspended {
            until: epoch + config.suspension_epochs,
        }
    };
    if let Some(record) = account.history.get_mut(&epoch) {
        record.suspended = true;
    }
}

fn reward_eligible(account: &StakeAccount, epoch: u64, clean_epochs: u32) -> bool {
    if clean_epochs == 0 {
        return true;
    }
    if epoch < clean_epochs as u64 {
        return false;
    }
    let start = epoch + 1 - clean_epochs as u64;
    (start..=epoch).all(|e| {
        account
            .history
            .get(&e)
            .map(|r| r.flags.is_empty())
            .unwrap_or(false)
    })
}

/// Applies one epoch's aggregated verdicts to the ledger.
///
/// `participating_nodes` are the nodes polled this epoch (active at its
/// start); `validators` are the validators that reported. Emits the
/// mutation list in application order: nodes first, then validators,
/// each sorted by id.
pub fn apply_economics(
    ledger: &mut StakeLedger,
    epoch: u64,
    agg: &AggregateResult,
    participating_nodes: &[String],
    validators: &[String],
    config: &EpochConfig,
) -> Result<Vec<StakeMutation>, EpochError> {
    let mut mutations = Vec::new();

    let mut nodes: Vec<&String> = participating_nodes.iter().collect();
    nodes.sort();
    for node in nodes {
        let flags: Vec<FlagKind> = agg
            .node_flags
            .get(node)
            .map(|fs| {
                let mut kinds: Vec<FlagKind> = fs.iter().map(|f| f.kind).collect();
                kinds.sort();
                kinds.dedup();
                kinds
            })
            .unwrap_or_default();
        let account = ledger.require_mut(node)?;
        account.history.insert(
            epoch,
            EpochRecord {
                flags: flags.clone(),
                ..EpochRecord::default()
            },
        );

        if is_node_offense(account, epoch, &flags, config) {
            punish(account, epoch, config, &mut mutations);
        } else if flags.is_empty()
            && reward_eligible(account, epoch, config.clean_epochs_for_reward)
        {
            account.staked += config.reward_per_epoch;
            account.history.get_mut(&epoch).expect("just inserted").rewarded = true;
            mutations.push(StakeMutation {
                owner: account.owner_id.clone(),
                kind: MutationKind::Reward,
                amount: config.reward_per_epoch,
                epoch,
            });
        }
    }

    let mut validator_ids: Vec<&String> = validators.iter().collect();
    validator_ids.sort();
    for validator in validator_ids {
        let marks = agg.validator_marks.get(validator).copied().unwrap_or(0);
        let account = ledger.require_mut(validator)?;
        account.history.insert(
            epoch,
            EpochRecord {
                marks,
                ..EpochRecord::default()
            },
        );

        let window = config.disagreement_window as u64;
        let mut start = epoch.saturating_sub(window.saturating_sub(1));
        if let Some(last) = account.last_offense_epoch {
            start = start.max(last + 1);
        }
        let window_marks: u32 = (start..=epoch)
            .filter_map(|e| account.history.get(&e).map(|r| r.marks))
            .sum();
        if window_marks > config.disagreement_threshold {
            punish(account, epoch, config, &mut mutations);
        }
    }

    Ok(mutations)
}
