//! Scenario files: one TOML document describing a complete run.
//!
//! A scenario carries the domain, its nodes, the questions, the
//! behavior profiles driving the synthetic provider, and the detection
//! and epoch parameters. The `seed` field is mandatory; a run has no
//! entropy beyond it, so a scenario file plus a seed pins every byte
//! of output.
//!
//! Profile centers are specified geometrically rather than as raw
//! coordinate dumps: a center can sit at the origin, at explicit or
//! sparse coordinates, or offset from another profile's center by a
//! distance (or a multiple of its own scatter) along an axis or a
//! seeded random direction. References between centers may chain but
//! not cycle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::DetectionConfig;
use crate::epoch::{EpochConfig, EpochError};
use crate::metrics::{EmbeddingVector, MetricsError};
use crate::network::{
    DomainSpec, NetworkError, NodeBehavior, NodeConfig, Poller, Question,
};
use crate::provider::{
    BehaviorProfile, EmbeddingProvider, EmbeddingStore, ProviderConfig, ProviderError,
    RemoteProvider, SecretToken, SyntheticProvider,
};
use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown profile {0}")]
    UnknownProfile(String),
    #[error("profile centers form a reference cycle through {0}")]
    CenterCycle(String),
    #[error("profile {profile}: index {index} out of range for dimension {dimension}")]
    BadIndex {
        profile: String,
        index: usize,
        dimension: usize,
    },
    #[error("profile {profile}: center has {got} coordinates, dimension is {expected}")]
    BadDimension {
        profile: String,
        expected: usize,
        got: usize,
    },
    #[error("profile {profile}: offset needs exactly one of distance or scatter_multiples")]
    BadMagnitude { profile: String },
    #[error("profile {profile}: sigma must be finite and non-negative")]
    BadSigma { profile: String },
    #[error("auth token variable {0} is not set")]
    MissingToken(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Epoch(#[from] EpochError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Displacement direction for offset centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Direction {
    /// Along one coordinate axis.
    Axis { index: usize },
    /// Seeded unit vector, reproducible from the provider seed.
    Random,
}

impl Default for Direction {
    fn default() -> Self {
        Self::Axis { index: 0 }
    }
}

/// Where a profile's cluster center sits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CenterSpec {
    /// The zero vector.
    #[default]
    Origin,
    /// Full explicit coordinates.
    Point { coords: Vec<f64> },
    /// Zero vector with a few coordinates set; entries are `[index, value]`.
    Sparse { entries: Vec<(usize, f64)> },
    /// Another profile's base center plus a displacement.
    Offset {
        from: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        distance: Option<f64>,
        /// Displacement as multiples of this profile's sigma.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scatter_multiples: Option<f64>,
        #[serde(default)]
        direction: Direction,
    },
}

/// One behavior profile as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    /// Per-dimension Gaussian noise.
    pub sigma: f64,
    #[serde(default)]
    pub center: CenterSpec,
    /// Per-question center overrides.
    #[serde(default)]
    pub question_centers: BTreeMap<String, CenterSpec>,
}

/// Domain identity; the member list lives in the scenario's `nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub domain_id: String,
    #[serde(default = "default_section_id")]
    pub question_set_id: String,
    #[serde(default = "default_section_id")]
    pub required_model_id: String,
    #[serde(default = "default_section_id")]
    pub required_kb_id: String,
}

fn default_section_id() -> String {
    "default".to_string()
}

fn default_repeats() -> u32 {
    25
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    8
}

fn default_chat_model() -> String {
    "default-model".to_string()
}

fn default_profile_name() -> String {
    "honest".to_string()
}

/// Everything one run needs, parsed from a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Root of every random stream in the run; mandatory, because a
    /// run carries no implicit entropy.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Polls per node per question.
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Model name sent to live nodes' chat endpoints.
    #[serde(default = "default_chat_model")]
    pub chat_model: String,
    /// Profile for nodes without an explicit assignment.
    #[serde(default = "default_profile_name")]
    pub default_profile: String,
    pub provider: ProviderConfig,
    pub domain: DomainSection,
    #[serde(default)]
    pub questions: Vec<Question>,
    #[serde(default)]
    pub profiles: BTreeMap<String, ProfileSpec>,
    #[serde(default)]
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub epoch: EpochConfig,
    /// Node probed by the admission flow, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<NodeConfig>,
}

impl ScenarioConfig {
    pub fn parse_str(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a scenario file. A relative file-provider path is taken
    /// relative to the scenario file itself.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let mut config = Self::parse_str(&std::fs::read_to_string(path)?)?;
        if let ProviderConfig::File { path: store } = &mut config.provider {
            if store.is_relative() {
                if let Some(dir) = path.parent() {
                    *store = dir.join(&store);
                }
            }
        }
        Ok(config)
    }

    /// Structural checks beyond what parsing enforces: the domain
    /// builds, the epoch config is sane, and with a synthetic provider
    /// every referenced profile resolves.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.domain_spec()?;
        self.epoch.validate()?;
        if let ProviderConfig::Synthetic { dimension, seed } = &self.provider {
            self.resolved_profiles(*dimension, seed.unwrap_or(self.seed))?;
            let known = |id: &str| self.profiles.contains_key(id);
            if !known(&self.default_profile) {
                return Err(ScenarioError::UnknownProfile(self.default_profile.clone()));
            }
            for (node, profile) in self.node_profiles() {
                if !known(&profile) {
                    return Err(ScenarioError::UnknownProfile(format!(
                        "{profile} (node {node})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn domain_spec(&self) -> Result<DomainSpec, ScenarioError> {
        Ok(DomainSpec::new(
            self.domain.domain_id.clone(),
            self.nodes.clone(),
            self.domain.question_set_id.clone(),
            self.domain.required_model_id.clone(),
            self.domain.required_kb_id.clone(),
        )?)
    }

    /// Profile assignments taken from `misconfigured` node behaviors,
    /// candidate included.
    pub fn node_profiles(&self) -> BTreeMap<String, String> {
        self.nodes
            .iter()
            .chain(self.candidate.as_ref())
            .filter_map(|n| match &n.behavior {
                NodeBehavior::Misconfigured { profile } => {
                    Some((n.id.clone(), profile.clone()))
                }
                _ => None,
            })
            .collect()
    }

    /// Resolves every profile's geometry into concrete vectors.
    pub fn resolved_profiles(
        &self,
        dimension: usize,
        seed: u64,
    ) -> Result<BTreeMap<String, BehaviorProfile>, ScenarioError> {
        for (id, spec) in &self.profiles {
            if !spec.sigma.is_finite() || spec.sigma < 0.0 {
                return Err(ScenarioError::BadSigma {
                    profile: id.clone(),
                });
            }
        }

        // Base centers first: offsets may chain, so resolve depth-first
        // with an explicit visiting state to reject cycles.
        #[derive(PartialEq)]
        enum State {
            Visiting,
            Done,
        }
        fn visit(
            id: &str,
            profiles: &BTreeMap<String, ProfileSpec>,
            dimension: usize,
            seed: u64,
            states: &mut BTreeMap<String, State>,
            bases: &mut BTreeMap<String, Vec<f64>>,
        ) -> Result<(), ScenarioError> {
            match states.get(id) {
                Some(State::Done) => return Ok(()),
                Some(State::Visiting) => {
                    return Err(ScenarioError::CenterCycle(id.to_string()))
                }
                None => {}
            }
            states.insert(id.to_string(), State::Visiting);
            let spec = profiles
                .get(id)
                .ok_or_else(|| ScenarioError::UnknownProfile(id.to_string()))?;
            if let CenterSpec::Offset { from, .. } = &spec.center {
                visit(from, profiles, dimension, seed, states, bases)?;
            }
            let center = resolve_center(
                &spec.center,
                id,
                spec.sigma,
                dimension,
                seed,
                &[id],
                bases,
            )?;
            bases.insert(id.to_string(), center);
            states.insert(id.to_string(), State::Done);
            Ok(())
        }

        let mut states = BTreeMap::new();
        let mut bases = BTreeMap::new();
        for id in self.profiles.keys() {
            visit(id, &self.profiles, dimension, seed, &mut states, &mut bases)?;
        }

        let mut out = BTreeMap::new();
        for (id, spec) in &self.profiles {
            let mut profile = BehaviorProfile::new(
                EmbeddingVector::new(bases[id].clone())?,
                spec.sigma,
            );
            for (question, center_spec) in &spec.question_centers {
                let coords = resolve_center(
                    center_spec,
                    id,
                    spec.sigma,
                    dimension,
                    seed,
                    &[id, question],
                    &bases,
                )?;
                profile
                    .question_centers
                    .insert(question.clone(), EmbeddingVector::new(coords)?);
            }
            out.insert(id.clone(), profile);
        }
        Ok(out)
    }

    /// Builds the embedding provider this scenario calls for. A remote
    /// provider's bearer token is read from the environment variable
    /// the config names; the token value itself is never logged or
    /// echoed back.
    pub fn build_provider(&self) -> Result<Arc<dyn EmbeddingProvider>, ScenarioError> {
        match &self.provider {
            ProviderConfig::Synthetic { dimension, seed } => {
                let seed = seed.unwrap_or(self.seed);
                let profiles = self.resolved_profiles(*dimension, seed)?;
                Ok(Arc::new(SyntheticProvider::new(
                    seed,
                    *dimension,
                    profiles,
                    self.node_profiles(),
                    self.default_profile.clone(),
                )?))
            }
            ProviderConfig::File { path } => Ok(Arc::new(EmbeddingStore::load(path)?)),
            ProviderConfig::Remote {
                endpoint,
                model,
                dimension,
                auth_token_env,
                max_in_flight,
            } => {
                let token = match auth_token_env {
                    Some(var) => Some(SecretToken::new(std::env::var(var).map_err(
                        |_| ScenarioError::MissingToken(var.clone()),
                    )?)),
                    None => None,
                };
                Ok(Arc::new(RemoteProvider::new(
                    endpoint.clone(),
                    model.clone(),
                    *dimension,
                    token,
                    max_in_flight.unwrap_or(self.max_in_flight),
                )?))
            }
        }
    }

    pub fn build_poller(&self) -> Result<Poller, ScenarioError> {
        Ok(Poller::new(
            self.build_provider()?,
            self.seed,
            self.max_in_flight,
            self.chat_model.clone(),
        )?)
    }
}

fn unit_axis(
    profile: &str,
    index: usize,
    dimension: usize,
) -> Result<Vec<f64>, ScenarioError> {
    if index >= dimension {
        return Err(ScenarioError::BadIndex {
            profile: profile.to_string(),
            index,
            dimension,
        });
    }
    let mut v = vec![0.0; dimension];
    v[index] = 1.0;
    Ok(v)
}

fn unit_random(seed: u64, labels: &[&str], dimension: usize) -> Vec<f64> {
    let mut full = vec!["center-direction"];
    full.extend_from_slice(labels);
    let mut rng = derive_rng(seed, &full);
    loop {
        let v: Vec<f64> = (0..dimension)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn resolve_center(
    spec: &CenterSpec,
    profile: &str,
    sigma: f64,
    dimension: usize,
    seed: u64,
    labels: &[&str],
    bases: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<f64>, ScenarioError> {
    match spec {
        CenterSpec::Origin => Ok(vec![0.0; dimension]),
        CenterSpec::Point { coords } => {
            if coords.len() != dimension {
                return Err(ScenarioError::BadDimension {
                    profile: profile.to_string(),
                    expected: dimension,
                    got: coords.len(),
                });
            }
            Ok(coords.clone())
        }
        CenterSpec::Sparse { entries } => {
            let mut v = vec![0.0; dimension];
            for (index, value) in entries {
                if *index >= dimension {
                    return Err(ScenarioError::BadIndex {
                        profile: profile.to_string(),
                        index: *index,
                        dimension,
                    });
                }
                v[*index] = *value;
            }
            Ok(v)
        }
        CenterSpec::Offset {
            from,
            distance,
            scatter_multiples,
            direction,
        } => {
            let base = bases
                .get(from)
                .ok_or_else(|| ScenarioError::UnknownProfile(from.clone()))?;
            let magnitude = match (distance, scatter_multiples) {
                (Some(d), None) => *d,
                (None, Some(m)) => m * sigma,
                _ => {
                    return Err(ScenarioError::BadMagnitude {
                        profile: profile.to_string(),
                    })
                }
            };
            let unit = match direction {
                Direction::Axis { index } => unit_axis(profile, *index, dimension)?,
                Direction::Random => unit_random(seed, labels, dimension),
            };
            Ok(base
                .iter()
                .zip(&unit)
                .map(|(b, u)| b + magnitude * u)
                .collect())
        }
    }
}
