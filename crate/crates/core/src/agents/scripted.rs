//! Deterministic policies for tests, fixtures and baselines.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::protocol::{format_action, Action, Observation, Policy, PolicyError, Reply, Stage};
use crate::tools::{map_to_tool, Point};

/// Wraps a closure from observation to raw text.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&Observation<'_>) -> String,
{
    type Trace = ();

    fn respond(&self, obs: &Observation<'_>, _rng: &mut ChaCha8Rng) -> Result<Reply<()>, PolicyError> {
        Ok(Reply {
            text: (self.0)(obs),
            trace: (),
        })
    }
}

/// Answers every instruction with a fixed point given in original-image
/// coordinates. At stage 2 the point is expressed in the tool image, so the
/// policy clicks the same screen location whatever crop it is shown.
/// Unknown instructions get an unparseable reply.
#[derive(Debug, Clone, Default)]
pub struct AnswerKey {
    answers: HashMap<String, Point>,
}

#[derive(Deserialize)]
struct AnswerLine {
    instruction: String,
    point: Point,
}

impl AnswerKey {
    pub fn new(answers: HashMap<String, Point>) -> Self {
        Self { answers }
    }

    pub fn insert(&mut self, instruction: impl Into<String>, point: Point) {
        self.answers.insert(instruction.into(), point);
    }

    /// Reads `{"instruction": ..., "point": [x, y]}` lines.
    pub fn from_jsonl(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut key = Self::default();
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let a: AnswerLine = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("answer line {}: {e}", i + 1),
                )
            })?;
            key.insert(a.instruction, a.point);
        }
        Ok(key)
    }
}

impl Policy for AnswerKey {
    type Trace = ();

    fn respond(&self, obs: &Observation<'_>, _rng: &mut ChaCha8Rng) -> Result<Reply<()>, PolicyError> {
        let Some(&p) = self.answers.get(obs.instruction) else {
            return Ok(Reply {
                text: "I cannot find it.".into(),
                trace: (),
            });
        };
        let point = match (obs.stage, obs.tool_meta) {
            (Stage::Two, Some(meta)) => map_to_tool(p, &meta.region, meta.scale),
            _ => p,
        };
        Ok(Reply {
            text: format_action(&Action::Answer { point }),
            trace: (),
        })
    }
}
