//! JSON-over-HTTP next-step protocol.
//!
//! This is the seam where a real LLM generator plugs in. The request carries
//! the task id, the prefix, and how many alternative continuations to sample:
//!
//! ```json
//! {"task_id": "...", "prefix": [{"index": 1, "value": 3}], "n_samples": 2}
//! ```
//!
//! and the server answers with one step list per sample:
//!
//! ```json
//! {"steps": [[{"index": 2, "value": 4}], [{"index": 2, "value": 0}]]}
//! ```

use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{GeneratorPolicy, Step, Task, Trajectory};

#[derive(Debug, Clone)]
pub struct RemotePolicyConfig {
    /// Full URL of the next-step endpoint.
    pub endpoint: String,
    pub timeout: Duration,
    /// Number of retries after the first attempt fails with a transport error.
    pub max_retries: u32,
}

impl RemotePolicyConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemotePolicyConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(10),
            max_retries: 2,
        }
    }
}

/// Generator backed by a remote next-step server.
pub struct RemotePolicy {
    config: RemotePolicyConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct NextStepRequest<'a> {
    task_id: &'a str,
    prefix: Vec<WireStep>,
    n_samples: usize,
}

#[derive(Serialize, Deserialize)]
struct WireStep {
    index: usize,
    value: u64,
}

#[derive(Deserialize)]
struct NextStepResponse {
    steps: Vec<Vec<WireStep>>,
}

impl RemotePolicy {
    pub fn new(config: RemotePolicyConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Remote {
                step: 0,
                message: format!("client construction failed: {e}"),
            })?;
        Ok(RemotePolicy { config, client })
    }

    /// Request `n_samples` alternative continuations for a prefix.
    pub fn sample_steps(
        &self,
        task_id: &str,
        prefix: &Trajectory,
        n_samples: usize,
    ) -> Result<Vec<Vec<Step>>> {
        let step_index = prefix.steps.len() + 1;
        let request = NextStepRequest {
            task_id,
            prefix: prefix
                .steps
                .iter()
                .map(|s| WireStep {
                    index: s.index,
                    value: s.asserted_value,
                })
                .collect(),
            n_samples,
        };

        let mut last_err = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(10 << attempt));
            }
            match self.try_once(&request) {
                Ok(response) => {
                    return response
                        .steps
                        .into_iter()
                        .map(|sample| {
                            Ok(sample
                                .into_iter()
                                .map(|w| Step {
                                    index: w.index,
                                    asserted_value: w.value,
                                })
                                .collect())
                        })
                        .collect();
                }
                Err(message) => last_err = message,
            }
        }
        Err(Error::Remote {
            step: step_index,
            message: format!(
                "{} after {} attempts: {last_err}",
                self.config.endpoint,
                self.config.max_retries + 1
            ),
        })
    }

    fn try_once(&self, request: &NextStepRequest<'_>) -> std::result::Result<NextStepResponse, String> {
        let response = self
            .client
            .post(&self.config.endpoint)
            .json(request)
            .send()
            .map_err(|e| format!("transport: {e}"))?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("status {status}"));
        }
        response.json().map_err(|e| format!("decode: {e}"))
    }
}

impl GeneratorPolicy for RemotePolicy {
    fn next_step(&self, task: &Task, prefix: &Trajectory, _rng: &mut dyn RngCore) -> Result<Step> {
        let step_index = prefix.steps.len() + 1;
        let samples = self.sample_steps(&task.id, prefix, 1)?;
        let step = samples
            .first()
            .and_then(|s| s.first())
            .copied()
            .ok_or_else(|| Error::Remote {
                step: step_index,
                message: "server returned no steps".into(),
            })?;
        if step.index != step_index {
            return Err(Error::Remote {
                step: step_index,
                message: format!("server returned step index {}", step.index),
            });
        }
        Ok(step)
    }
}
