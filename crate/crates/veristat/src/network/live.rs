//! Live node polling over the JSON chat-completions protocol.
//!
//! Node-side failures never raise: timeouts and HTTP errors become
//! sample statuses, and transport or protocol breakage (no HTTP status
//! to report) is recorded as `http_error` with code 0. Only a
//! validator-side embedding failure surfaces as an error.

use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::provider::{EmbedContext, EmbeddingProvider};

use super::{NetworkError, NodeConfig, Question, ResponseSample, SampleStatus};

const SYSTEM_PROMPT: &str = "You are a helpful assistant.";

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

pub(super) fn poll_live(
    client: &reqwest::blocking::Client,
    provider: &dyn EmbeddingProvider,
    model: &str,
    node: &NodeConfig,
    question: &Question,
    trial: u32,
    timeout_ms: u64,
) -> Result<ResponseSample, NetworkError> {
    let endpoint = node
        .endpoint
        .as_deref()
        .ok_or_else(|| NetworkError::MissingEndpoint(node.id.clone()))?;
    let url = format!("{}/v1/chat/completions", endpoint.trim_end_matches('/'));
    let body = serde_json::json!({
        "model": model,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": question.text},
        ],
    });

    let started = Instant::now();
    let outcome = client
        .post(&url)
        .timeout(Duration::from_millis(timeout_ms))
        .json(&body)
        .send();
    let latency = started.elapsed().as_secs_f64() * 1000.0;

    let fail = |status: SampleStatus, code: Option<u16>, latency_ms: f64| {
        Ok(ResponseSample::failure(
            &node.id,
            &question.id,
            trial,
            status,
            code,
            latency_ms,
        ))
    };

    let response = match outcome {
        Ok(response) => response,
        Err(e) if e.is_timeout() => {
            return fail(SampleStatus::Timeout, None, timeout_ms as f64);
        }
        Err(_) => return fail(SampleStatus::HttpError, Some(0), latency),
    };

    let status = response.status();
    if !status.is_success() {
        return fail(SampleStatus::HttpError, Some(status.as_u16()), latency);
    }
    let text = match response.json::<ChatResponse>() {
        Ok(parsed) => match parsed.choices.into_iter().next() {
            Some(choice) => choice.message.content,
            None => return fail(SampleStatus::HttpError, Some(0), latency),
        },
        Err(_) => return fail(SampleStatus::HttpError, Some(0), latency),
    };

    let embedding = provider.embed(
        &text,
        &EmbedContext {
            question_id: &question.id,
            node_id: &node.id,
            trial,
        },
    )?;

    Ok(ResponseSample {
        node_id: node.id.clone(),
        question_id: question.id.clone(),
        trial,
        status: SampleStatus::Ok,
        code: None,
        latency_ms: latency,
        text,
        embedding: Some(embedding),
    })
}
