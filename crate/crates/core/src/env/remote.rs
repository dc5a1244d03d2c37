//! HTTP client for a remote role-based dialogue environment.
//!
//! One POST per step against a `/step` endpoint. Responses are validated
//! against the wire schema before anything reaches the engine; a request is
//! retried once with an identical payload, and a failed retry aborts the
//! current tree rather than the whole run.

use super::{EnvError, StepOutcome};
use crate::model::{DialogueState, Role, Strategy, TurnScores};
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Environment variables consulted by the CLI for endpoint configuration.
pub const ENV_URL_VAR: &str = "DIALOGUE_ENV_URL";
pub const ENV_TOKEN_VAR: &str = "DIALOGUE_ENV_TOKEN";

#[derive(Debug, Serialize)]
struct WireUtterance<'a> {
    role: &'a str,
    text: &'a str,
}

#[derive(Debug, Serialize)]
struct StepRequest<'a> {
    history: Vec<WireUtterance<'a>>,
    action_index: usize,
}

#[derive(Debug, Deserialize)]
struct WireScores {
    empathy: f64,
    info_quality: f64,
    naturalness: f64,
    strategic_efficacy: f64,
}

#[derive(Debug, Deserialize)]
struct StepResponse {
    supporter_text: String,
    seeker_text: String,
    scores: WireScores,
    terminal: bool,
    terminal_reward: Option<f64>,
}

pub struct RemoteEnv {
    agent: ureq::Agent,
    step_url: String,
    bearer_token: Option<String>,
}

impl RemoteEnv {
    pub fn new(base_url: &str, bearer_token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_read(timeout)
            .timeout_write(timeout)
            .timeout_connect(timeout)
            .build();
        let step_url = format!("{}/step", base_url.trim_end_matches('/'));
        RemoteEnv {
            agent,
            step_url,
            bearer_token,
        }
    }

    /// Build a client from `DIALOGUE_ENV_URL` / `DIALOGUE_ENV_TOKEN`.
    pub fn from_env(timeout: Duration) -> Result<Self, EnvError> {
        let url = std::env::var(ENV_URL_VAR)
            .map_err(|_| EnvError::Config(format!("{ENV_URL_VAR} is not set")))?;
        let token = std::env::var(ENV_TOKEN_VAR).ok();
        Ok(RemoteEnv::new(&url, token, timeout))
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<StepResponse, EnvError> {
        let mut req = self.agent.post(&self.step_url);
        if let Some(token) = &self.bearer_token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = req
            .send_json(body.clone())
            .map_err(|e| EnvError::Transport(e.to_string()))?;
        resp.into_json::<StepResponse>()
            .map_err(|e| EnvError::Protocol(format!("malformed response body: {e}")))
    }

    fn validate(resp: StepResponse) -> Result<StepOutcome, EnvError> {
        let check = |name: &str, v: f64| -> Result<(), EnvError> {
            if !v.is_finite() || !(0.0..=5.0).contains(&v) {
                Err(EnvError::Protocol(format!("{name} out of range [0,5]")))
            } else {
                Ok(())
            }
        };
        check("empathy", resp.scores.empathy)?;
        check("info_quality", resp.scores.info_quality)?;
        check("naturalness", resp.scores.naturalness)?;
        check("strategic_efficacy", resp.scores.strategic_efficacy)?;
        match (resp.terminal, resp.terminal_reward) {
            (false, Some(_)) => {
                return Err(EnvError::Protocol(
                    "terminal_reward present on non-terminal step".into(),
                ))
            }
            (true, Some(r)) if !r.is_finite() || r < 0.0 => {
                return Err(EnvError::Protocol(format!(
                    "terminal_reward {r} must be a non-negative number"
                )))
            }
            _ => {}
        }
        Ok(StepOutcome {
            supporter_text: resp.supporter_text,
            seeker_text: resp.seeker_text,
            scores: TurnScores::new(
                resp.scores.empathy,
                resp.scores.info_quality,
                resp.scores.naturalness,
                resp.scores.strategic_efficacy,
            ),
            terminal: resp.terminal,
            terminal_reward: resp.terminal_reward,
        })
    }
}

impl super::DialogueEnv for RemoteEnv {
    fn step(&self, state: &DialogueState, action: Strategy) -> Result<StepOutcome, EnvError> {
        if state.terminal {
            return Err(EnvError::Contract(format!(
                "step called on terminal state {}",
                state.node_id
            )));
        }
        let history = state
            .utterances
            .iter()
            .map(|(role, text)| WireUtterance {
                role: match role {
                    Role::Seeker => "seeker",
                    Role::Supporter => "supporter",
                },
                text,
            })
            .collect();
        let request = StepRequest {
            history,
            action_index: action.index(),
        };
        let body = serde_json::to_value(&request)
            .map_err(|e| EnvError::Protocol(format!("request encoding failed: {e}")))?;

        // one retry with an identical payload; schema errors are not retried
        match self.post_once(&body) {
            Ok(resp) => Self::validate(resp),
            Err(EnvError::Transport(first)) => match self.post_once(&body) {
                Ok(resp) => Self::validate(resp),
                Err(second) => Err(EnvError::Transport(format!(
                    "retry failed ({second}); first attempt: {first}"
                ))),
            },
            Err(other) => Err(other),
        }
    }
}
