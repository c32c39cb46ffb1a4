//! Deterministic synthetic embeddings.
//!
//! Each node is assigned a behavior profile: a cluster center plus an
//! isotropic Gaussian noise scale. Embedding a context draws the noise
//! from an RNG stream derived from (provider seed, node, question,
//! trial), so results are independent of polling order and concurrency.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::metrics::EmbeddingVector;
use crate::rng::derive_rng;

use super::{EmbedContext, EmbeddingProvider, ProviderError};

/// Cluster geometry for one node configuration.
#[derive(Debug, Clone)]
pub struct BehaviorProfile {
    /// Center used for any question without an explicit override.
    pub center: EmbeddingVector,
    /// Isotropic per-dimension noise scale; the expected RMS scatter of
    /// generated clusters equals this value.
    pub per_dim_sigma: f64,
    /// Per-question center overrides, for scenarios where separation
    /// varies by question.
    pub question_centers: BTreeMap<String, EmbeddingVector>,
}

impl BehaviorProfile {
    pub fn new(center: EmbeddingVector, per_dim_sigma: f64) -> Self {
        Self {
            center,
            per_dim_sigma,
            question_centers: BTreeMap::new(),
        }
    }

    pub fn center_for(&self, question_id: &str) -> &EmbeddingVector {
        self.question_centers.get(question_id).unwrap_or(&self.center)
    }
}

/// Generates embeddings as profile center plus seeded Gaussian noise.
///
/// The answer text is ignored: simulated texts are placeholders, and the
/// cluster geometry is what scenarios calibrate.
pub struct SyntheticProvider {
    seed: u64,
    dimension: usize,
    profiles: BTreeMap<String, BehaviorProfile>,
    /// node id -> profile id; nodes without an entry use `default_profile`.
    node_profiles: BTreeMap<String, String>,
    default_profile: String,
}

impl SyntheticProvider {
    pub fn new(
        seed: u64,
        dimension: usize,
        profiles: BTreeMap<String, BehaviorProfile>,
        node_profiles: BTreeMap<String, String>,
        default_profile: impl Into<String>,
    ) -> Result<Self, ProviderError> {
        let default_profile = default_profile.into();
        if !profiles.contains_key(&default_profile) {
            return Err(ProviderError::UnknownProfile(default_profile));
        }
        for id in node_profiles.values() {
            if !profiles.contains_key(id) {
                return Err(ProviderError::UnknownProfile(id.clone()));
            }
        }
        for profile in profiles.values() {
            for center in std::iter::once(&profile.center).chain(profile.question_centers.values())
            {
                if center.dimension() != dimension {
                    return Err(ProviderError::Dimension {
                        expected: dimension,
                        got: center.dimension(),
                    });
                }
            }
        }
        Ok(Self {
            seed,
            dimension,
            profiles,
            node_profiles,
            default_profile,
        })
    }

    fn profile_for(&self, node_id: &str) -> &BehaviorProfile {
        let id = self
            .node_profiles
            .get(node_id)
            .unwrap_or(&self.default_profile);
        &self.profiles[id]
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, _text: &str, ctx: &EmbedContext<'_>) -> Result<EmbeddingVector, ProviderError> {
        let profile = self.profile_for(ctx.node_id);
        let center = profile.center_for(ctx.question_id);
        if profile.per_dim_sigma == 0.0 {
            return Ok(center.clone());
        }
        let mut rng = derive_rng(
            self.seed,
            &["embed", ctx.node_id, ctx.question_id, &ctx.trial.to_string()],
        );
        let gauss = Normal::new(0.0, profile.per_dim_sigma)
            .expect("sigma validated non-negative finite");
        let values = center
            .as_slice()
            .iter()
            .map(|c| c + gauss.sample(&mut rng))
            .collect();
        Ok(EmbeddingVector::new(values)?)
    }
}

/// Places pairwise-calibrated centers for up to three profiles in a
/// plane: returns coordinates (embedded in dimension `z`) whose mutual
/// Euclidean distances equal the given side lengths.
///
/// Errors if the sides violate the triangle inequality.
pub fn triangle_points(
    z: usize,
    d_ab: f64,
    d_ac: f64,
    d_bc: f64,
) -> Result<[EmbeddingVector; 3], ProviderError> {
    if z < 2 || d_ab <= 0.0 {
        return Err(ProviderError::MalformedResponse(
            "triangle needs dimension >= 2 and d_ab > 0".into(),
        ));
    }
    let x = (d_ab * d_ab + d_ac * d_ac - d_bc * d_bc) / (2.0 * d_ab);
    let y_sq = d_ac * d_ac - x * x;
    if y_sq < 0.0 {
        return Err(ProviderError::MalformedResponse(format!(
            "side lengths {d_ab}, {d_ac}, {d_bc} violate the triangle inequality"
        )));
    }
    let a = vec![0.0; z];
    let mut b = vec![0.0; z];
    let mut c = vec![0.0; z];
    b[0] = d_ab;
    c[0] = x;
    c[1] = y_sq.sqrt();
    Ok([
        EmbeddingVector::new(a).expect("finite"),
        EmbeddingVector::new(b).expect("finite"),
        EmbeddingVector::new(c).expect("finite"),
    ])
}
