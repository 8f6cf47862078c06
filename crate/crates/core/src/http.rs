//! Blocking JSON-over-HTTP client shared by the remote model contracts.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct JsonClient {
    base: String,
    agent: ureq::Agent,
}

impl JsonClient {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        JsonClient {
            base: base_url.trim_end_matches('/').to_owned(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{}", self.base, path);
        let fail = |msg: String| Error::Transport {
            endpoint: url.clone(),
            msg,
        };
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| fail(e.to_string()))?;
        resp.body_mut().read_json::<R>().map_err(|e| fail(e.to_string()))
    }
}
