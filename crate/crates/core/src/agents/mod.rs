//! Policies: a remote model client, scripted policies, the trainable grid
//! policy, and the synthetic screens it trains on.

pub mod remote;
pub mod screen;
pub mod scripted;
pub mod toy;

pub use remote::{ChatMessage, ChatPart, ChatRequest, ChatResponse, RemoteConfig, RemoteError, RemotePolicy};
pub use screen::{generate_screen, ScreenConfig, ScreenElement, SyntheticScreen};
pub use scripted::{AnswerKey, FnPolicy};
pub use toy::{toy_act, ActMode, ToyChoice, ToyPolicy, ToyPolicyParams, ToyStep, WeightTying};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("screen generation failed: {0}")]
    Generation(String),
    #[error("invalid policy configuration: {0}")]
    Config(String),
}
