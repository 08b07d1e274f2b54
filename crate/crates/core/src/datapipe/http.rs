//! A verifier that asks a remote service for each verdict.
//!
//! The service receives `{"transition", "principle", "frames"}` with frames
//! as nested `[row][col][channel]` arrays in [0, 1] and answers
//! `{"verdict": "align" | "contradict" | "unknown"}`.

use serde::{Deserialize, Serialize};

use super::verify::VerifierClient;
use crate::error::{Error, Result};
use crate::synthworld::{Trajectory, Verdict};

/// Environment variable naming the verifier endpoint.
pub const VERIFIER_URL_ENV: &str = "PHYSTRAN_VERIFIER_URL";

#[derive(Debug, Clone)]
pub struct HttpVerifier {
    pub url: String,
}

#[derive(Serialize)]
struct Request<'a> {
    transition: &'a str,
    principle: &'a str,
    frames: Vec<Vec<Vec<Vec<f32>>>>,
}

#[derive(Deserialize)]
struct Response {
    verdict: Verdict,
}

impl HttpVerifier {
    pub fn from_env() -> Option<Self> {
        std::env::var(VERIFIER_URL_ENV)
            .ok()
            .map(|url| HttpVerifier { url })
    }
}

impl VerifierClient for HttpVerifier {
    fn judge(&self, traj: &Trajectory, principle_id: &str) -> Result<Verdict> {
        let frames = traj
            .frames
            .iter()
            .map(|f| {
                (0..f.height())
                    .map(|y| (0..f.width()).map(|x| f.pixel(y, x).to_vec()).collect())
                    .collect()
            })
            .collect();
        let body = Request {
            transition: &traj.spec.transition_type,
            principle: principle_id,
            frames,
        };
        let resp: Response = ureq::post(&self.url)
            .send_json(&body)
            .map_err(|e| Error::Verifier(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| Error::Verifier(e.to_string()))?;
        Ok(resp.verdict)
    }
}
