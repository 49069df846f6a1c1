//! Finite prompt/response universe and the evaluation prompt distribution.
//!
//! Prompt and response identifiers are opaque strings; they are interned to
//! dense indices at construction time so inner loops index matrices directly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the evaluation distribution summing to one.
pub const EVAL_DIST_TOL: f64 = 1e-12;

/// Finite prompt space, finite response space, and the evaluation prompt
/// distribution that weights per-prompt expectations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawWorld", into = "RawWorld")]
pub struct World {
    prompts: Vec<String>,
    responses: Vec<String>,
    eval_dist: Vec<f64>,
    prompt_index: HashMap<String, usize>,
    response_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawWorld {
    prompts: Vec<String>,
    responses: Vec<String>,
    eval_dist: Vec<f64>,
}

impl TryFrom<RawWorld> for World {
    type Error = Error;

    fn try_from(raw: RawWorld) -> Result<Self> {
        World::new(raw.prompts, raw.responses, raw.eval_dist)
    }
}

impl From<World> for RawWorld {
    fn from(world: World) -> Self {
        RawWorld {
            prompts: world.prompts,
            responses: world.responses,
            eval_dist: world.eval_dist,
        }
    }
}

fn intern(kind: &str, ids: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate {kind} identifier `{id}`"
            )));
        }
    }
    Ok(index)
}

impl World {
    pub fn new(prompts: Vec<String>, responses: Vec<String>, eval_dist: Vec<f64>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::InvalidInput("prompt list is empty".into()));
        }
        if responses.is_empty() {
            return Err(Error::InvalidInput("response list is empty".into()));
        }
        if eval_dist.len() != prompts.len() {
            return Err(Error::DimensionMismatch(format!(
                "eval_dist has {} entries for {} prompts",
                eval_dist.len(),
                prompts.len()
            )));
        }
        for (i, &p) in eval_dist.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "eval_dist[{i}] = {p} is not a probability"
                )));
            }
        }
        let total: f64 = eval_dist.iter().sum();
        if (total - 1.0).abs() > EVAL_DIST_TOL {
            return Err(Error::InvalidInput(format!(
                "eval_dist sums to {total}, expected 1 within {EVAL_DIST_TOL:e}"
            )));
        }
        let prompt_index = intern("prompt", &prompts)?;
        let response_index = intern("response", &responses)?;
        Ok(World {
            prompts,
            responses,
            eval_dist,
            prompt_index,
            response_index,
        })
    }

    /// Convenience constructor with a uniform evaluation distribution.
    pub fn with_uniform_eval(prompts: Vec<String>, responses: Vec<String>) -> Result<Self> {
        let n = prompts.len();
        let eval_dist = vec![1.0 / n as f64; n];
        Self::new(prompts, responses, eval_dist)
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn num_responses(&self) -> usize {
        self.responses.len()
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn responses(&self) -> &[String] {
        &self.responses
    }

    pub fn eval_dist(&self) -> &[f64] {
        &self.eval_dist
    }

    pub fn prompt_index(&self, id: &str) -> Result<usize> {
        self.prompt_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownPrompt(id.to_string()))
    }

    pub fn response_index(&self, id: &str) -> Result<usize> {
        self.response_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownResponse(id.to_string()))
    }
}
