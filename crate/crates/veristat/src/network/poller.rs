//! Concurrent poll fan-out.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::provider::EmbeddingProvider;

use super::{live, sim, DomainSpec, NetworkError, NodeConfig, NodeKind, Question, ResponseSample};

/// Polls nodes and embeds their answers validator-side.
///
/// Cheap to share behind a reference; all state is immutable. Simulated
/// results depend only on (seed, node, question, trial), so fan-out
/// concurrency and scheduling never change output.
pub struct Poller {
    provider: Arc<dyn EmbeddingProvider>,
    seed: u64,
    max_in_flight: usize,
    chat_model: String,
    client: reqwest::blocking::Client,
}

impl Poller {
    pub fn new(
        provider: Arc<dyn EmbeddingProvider>,
        seed: u64,
        max_in_flight: usize,
        chat_model: impl Into<String>,
    ) -> Result<Self, NetworkError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| NetworkError::Client(e.to_string()))?;
        Ok(Self {
            provider,
            seed,
            max_in_flight: max_in_flight.max(1),
            chat_model: chat_model.into(),
            client,
        })
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Polls one node once. Node-side failures (timeouts, HTTP errors)
    /// come back as sample statuses; only validator-side embedding
    /// failures are errors.
    pub fn poll(
        &self,
        node: &NodeConfig,
        question: &Question,
        trial: u32,
        timeout_ms: u64,
    ) -> Result<ResponseSample, NetworkError> {
        match node.kind {
            NodeKind::Simulated => sim::poll_simulated(
                self.provider.as_ref(),
                self.seed,
                node,
                &question.id,
                trial,
                timeout_ms,
            ),
            NodeKind::Live => live::poll_live(
                &self.client,
                self.provider.as_ref(),
                &self.chat_model,
                node,
                question,
                trial,
                timeout_ms,
            ),
        }
    }

    /// Polls each node `repeats` times. Fan-out is concurrent with at
    /// most `max_in_flight` polls in flight; output is ordered by
    /// (node id, trial) regardless of completion order.
    pub fn poll_many(
        &self,
        nodes: &[&NodeConfig],
        question: &Question,
        repeats: u32,
        timeout_ms: u64,
    ) -> Result<Vec<ResponseSample>, NetworkError> {
        self.poll_trials(nodes, question, 0..repeats, timeout_ms)
    }

    /// Like [`Poller::poll_many`] with explicit trial indices. Distinct
    /// trial ranges give independent simulated draws, which is how
    /// concurrent validators obtain uncorrelated samples of one node.
    pub fn poll_trials(
        &self,
        nodes: &[&NodeConfig],
        question: &Question,
        trials: std::ops::Range<u32>,
        timeout_ms: u64,
    ) -> Result<Vec<ResponseSample>, NetworkError> {
        if trials.is_empty() {
            return Err(NetworkError::ZeroRepeats);
        }
        let mut ordered: Vec<&NodeConfig> = nodes.to_vec();
        ordered.sort_by(|a, b| a.id.cmp(&b.id));
        let tasks: Vec<(&NodeConfig, u32)> = ordered
            .iter()
            .flat_map(|node| trials.clone().map(move |trial| (*node, trial)))
            .collect();

        let mut slots: Vec<Option<Result<ResponseSample, NetworkError>>> = Vec::new();
        slots.resize_with(tasks.len(), || None);
        let next_task = AtomicUsize::new(0);
        let workers = self.max_in_flight.min(tasks.len()).max(1);

        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(workers);
            for _ in 0..workers {
                handles.push(scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next_task.fetch_add(1, Ordering::Relaxed);
                        if i >= tasks.len() {
                            break;
                        }
                        let (node, trial) = tasks[i];
                        local.push((i, self.poll(node, question, trial, timeout_ms)));
                    }
                    local
                }));
            }
            for handle in handles {
                let local = handle.join().expect("poll worker panicked");
                for (i, result) in local {
                    slots[i] = Some(result);
                }
            }
        });

        let mut out = Vec::with_capacity(tasks.len());
        for slot in slots {
            out.push(slot.expect("every task ran")?);
        }
        Ok(out)
    }

    /// Polls every node in the domain. See [`Poller::poll_many`].
    pub fn poll_round(
        &self,
        domain: &DomainSpec,
        question: &Question,
        repeats: u32,
        timeout_ms: u64,
    ) -> Result<Vec<ResponseSample>, NetworkError> {
        let refs: Vec<&NodeConfig> = domain.nodes.iter().collect();
        self.poll_many(&refs, question, repeats, timeout_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EmbeddingVector;
    use crate::network::{NodeBehavior, SampleStatus};
    use crate::provider::{BehaviorProfile, SyntheticProvider};
    use crate::testutil::{MockResponse, MockServer};
    use std::collections::BTreeMap;

    fn synthetic(sigma: f64) -> Arc<dyn EmbeddingProvider> {
        let mut profiles = BTreeMap::new();
        profiles.insert(
            "base".to_string(),
            BehaviorProfile::new(EmbeddingVector::new(vec![1.0, 2.0, 3.0]).unwrap(), sigma),
        );
        Arc::new(SyntheticProvider::new(17, 3, profiles, BTreeMap::new(), "base").unwrap())
    }

    fn poller(seed: u64, max_in_flight: usize) -> Poller {
        Poller::new(synthetic(0.01), seed, max_in_flight, "sim-model").unwrap()
    }

    fn q() -> Question {
        Question::new("q1", "What is the answer?")
    }

    #[test]
    fn honest_zero_noise_returns_center() {
        let p = Poller::new(synthetic(0.0), 1, 4, "m").unwrap();
        let node = NodeConfig::simulated("n1", NodeBehavior::Honest);
        let sample = p.poll(&node, &q(), 0, 30_000).unwrap();
        assert_eq!(sample.status, SampleStatus::Ok);
        assert_eq!(sample.embedding.unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        assert!(sample.latency_ms <= 30_000.0);
        assert!(sample.text.starts_with("answer:"));
    }

    #[test]
    fn dead_node_always_times_out() {
        let p = poller(1, 4);
        let node = NodeConfig::simulated(
            "n1",
            NodeBehavior::Dead {
                timeout_probability: 1.0,
            },
        );
        let sample = p.poll(&node, &q(), 0, 5_000).unwrap();
        assert_eq!(sample.status, SampleStatus::Timeout);
        assert_eq!(sample.latency_ms, 5_000.0);
        assert!(sample.embedding.is_none());
        assert!(sample.text.is_empty());
    }

    #[test]
    fn flaky_node_returns_configured_code() {
        let p = poller(1, 4);
        let node = NodeConfig::simulated(
            "n1",
            NodeBehavior::Flaky {
                code: 500,
                probability: 1.0,
            },
        );
        let sample = p.poll(&node, &q(), 0, 5_000).unwrap();
        assert_eq!(sample.status, SampleStatus::HttpError);
        assert_eq!(sample.code, Some(500));
        assert!(sample.embedding.is_none());
    }

    #[test]
    fn latency_beyond_timeout_becomes_timeout() {
        let p = poller(1, 4);
        let mut node = NodeConfig::simulated("n1", NodeBehavior::Honest);
        node.base_latency_ms = 10_000.0;
        node.latency_jitter_ms = 0.0;
        let sample = p.poll(&node, &q(), 0, 1_000).unwrap();
        assert_eq!(sample.status, SampleStatus::Timeout);
        assert_eq!(sample.latency_ms, 1_000.0);
    }

    #[test]
    fn slow_multiplier_scales_honest_latency() {
        let p = poller(3, 4);
        let honest = NodeConfig::simulated("n1", NodeBehavior::Honest);
        let slow = NodeConfig::simulated(
            "n1",
            NodeBehavior::Slow {
                latency_multiplier: 2.5,
            },
        );
        let a = p.poll(&honest, &q(), 0, 60_000).unwrap();
        let b = p.poll(&slow, &q(), 0, 60_000).unwrap();
        assert!((b.latency_ms - a.latency_ms * 2.5).abs() < 1e-9);
    }

    #[test]
    fn round_size_is_nodes_times_repeats() {
        let nodes = vec![
            NodeConfig::simulated("c", NodeBehavior::Honest),
            NodeConfig::simulated("a", NodeBehavior::Honest),
            NodeConfig::simulated("b", NodeBehavior::Honest),
        ];
        let domain = DomainSpec::new("d", nodes, "qs", "model", "kb").unwrap();
        let p = poller(5, 8);
        let samples = p.poll_round(&domain, &q(), 25, 30_000).unwrap();
        assert_eq!(samples.len(), 75);
        // Ordered by (node id, trial) despite unordered input.
        let keys: Vec<(String, u32)> = samples
            .iter()
            .map(|s| (s.node_id.clone(), s.trial))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(keys[0], ("a".to_string(), 0));

        let single = DomainSpec::new(
            "d",
            vec![NodeConfig::simulated("only", NodeBehavior::Honest)],
            "qs",
            "model",
            "kb",
        )
        .unwrap();
        assert_eq!(p.poll_round(&single, &q(), 1, 30_000).unwrap().len(), 1);
    }

    #[test]
    fn equal_seeds_replay_identical_streams() {
        let nodes = vec![
            NodeConfig::simulated("a", NodeBehavior::Honest),
            NodeConfig::simulated(
                "b",
                NodeBehavior::Flaky {
                    code: 500,
                    probability: 0.5,
                },
            ),
            NodeConfig::simulated(
                "c",
                NodeBehavior::Dead {
                    timeout_probability: 0.5,
                },
            ),
        ];
        let domain = DomainSpec::new("d", nodes, "qs", "model", "kb").unwrap();
        let first = poller(99, 4).poll_round(&domain, &q(), 10, 2_000).unwrap();
        let second = poller(99, 4).poll_round(&domain, &q(), 10, 2_000).unwrap();
        assert_eq!(first, second);
        let other_seed = poller(100, 4).poll_round(&domain, &q(), 10, 2_000).unwrap();
        assert_ne!(first, other_seed);
    }

    #[test]
    fn concurrency_level_does_not_change_output() {
        let nodes: Vec<NodeConfig> = (0..10)
            .map(|i| {
                let behavior = match i % 3 {
                    0 => NodeBehavior::Honest,
                    1 => NodeBehavior::Flaky {
                        code: 404,
                        probability: 0.3,
                    },
                    _ => NodeBehavior::Dead {
                        timeout_probability: 0.2,
                    },
                };
                NodeConfig::simulated(format!("n{i}"), behavior)
            })
            .collect();
        let domain = DomainSpec::new("d", nodes, "qs", "model", "kb").unwrap();
        let serial = poller(7, 1).poll_round(&domain, &q(), 5, 2_000).unwrap();
        let parallel = poller(7, 64).poll_round(&domain, &q(), 5, 2_000).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn fault_frequency_tracks_configured_probability() {
        let p = poller(123, 16);
        let node = NodeConfig::simulated(
            "n1",
            NodeBehavior::Dead {
                timeout_probability: 0.3,
            },
        );
        let trials = 10_000u32;
        let samples = p.poll_many(&[&node], &q(), trials, 30_000).unwrap();
        let timeouts = samples
            .iter()
            .filter(|s| s.status == SampleStatus::Timeout)
            .count();
        let freq = timeouts as f64 / trials as f64;
        let se = (0.3f64 * 0.7 / trials as f64).sqrt();
        assert!(
            (freq - 0.3).abs() <= 3.0 * se,
            "observed {freq}, expected 0.3 +/- {}",
            3.0 * se
        );
    }

    #[test]
    fn zero_repeats_is_rejected() {
        let p = poller(1, 1);
        let node = NodeConfig::simulated("n", NodeBehavior::Honest);
        assert!(matches!(
            p.poll_many(&[&node], &q(), 0, 1_000),
            Err(NetworkError::ZeroRepeats)
        ));
    }

    fn live_node(url: &str) -> NodeConfig {
        let mut node = NodeConfig::simulated("live-1", NodeBehavior::Honest);
        node.kind = NodeKind::Live;
        node.endpoint = Some(url.to_string());
        node
    }

    #[test]
    fn live_poll_sends_chat_request_and_embeds_reply() {
        let server = MockServer::start(1, |_req| {
            MockResponse::json(
                r#"{"choices":[{"message":{"role":"assistant","content":"Paris is the capital."}}]}"#,
            )
        });
        let p = Poller::new(synthetic(0.0), 1, 2, "required-model").unwrap();
        let node = live_node(&server.url());
        let sample = p.poll(&node, &q(), 0, 5_000).unwrap();
        assert_eq!(sample.status, SampleStatus::Ok);
        assert_eq!(sample.text, "Paris is the capital.");
        assert_eq!(sample.embedding.unwrap().as_slice(), &[1.0, 2.0, 3.0]);

        let requests = server.finish();
        assert_eq!(requests[0].path, "/v1/chat/completions");
        let body: serde_json::Value = serde_json::from_str(&requests[0].body).unwrap();
        assert_eq!(body["model"], "required-model");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][0]["content"], "You are a helpful assistant.");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], "What is the answer?");
    }

    #[test]
    fn live_poll_maps_http_status_to_sample() {
        let server = MockServer::start(1, |_req| MockResponse::status(404, "{}"));
        let p = Poller::new(synthetic(0.0), 1, 2, "m").unwrap();
        let sample = p.poll(&live_node(&server.url()), &q(), 0, 5_000).unwrap();
        assert_eq!(sample.status, SampleStatus::HttpError);
        assert_eq!(sample.code, Some(404));
        server.finish();
    }

    #[test]
    fn live_poll_timeout_becomes_timeout_status() {
        let server = MockServer::start(1, |_req| {
            std::thread::sleep(std::time::Duration::from_millis(400));
            MockResponse::json("{}")
        });
        let p = Poller::new(synthetic(0.0), 1, 2, "m").unwrap();
        let sample = p.poll(&live_node(&server.url()), &q(), 0, 50).unwrap();
        assert_eq!(sample.status, SampleStatus::Timeout);
        assert_eq!(sample.latency_ms, 50.0);
        server.finish();
    }

    #[test]
    fn live_poll_transport_failure_is_code_zero() {
        // Nothing listens on port 1.
        let p = Poller::new(synthetic(0.0), 1, 2, "m").unwrap();
        let sample = p
            .poll(&live_node("http://127.0.0.1:1"), &q(), 0, 2_000)
            .unwrap();
        assert_eq!(sample.status, SampleStatus::HttpError);
        assert_eq!(sample.code, Some(0));
    }

    #[test]
    fn live_poll_malformed_body_is_code_zero() {
        let server = MockServer::start(2, |req| {
            if req.body.contains("first") {
                MockResponse::json("not json at all")
            } else {
                MockResponse::json(r#"{"choices":[]}"#)
            }
        });
        let p = Poller::new(synthetic(0.0), 1, 2, "m").unwrap();
        let node = live_node(&server.url());
        let sample = p
            .poll(&node, &Question::new("q1", "first question"), 0, 5_000)
            .unwrap();
        assert_eq!((sample.status.clone(), sample.code), (SampleStatus::HttpError, Some(0)));
        let sample = p
            .poll(&node, &Question::new("q1", "second question"), 0, 5_000)
            .unwrap();
        assert_eq!((sample.status, sample.code), (SampleStatus::HttpError, Some(0)));
        server.finish();
    }
}
