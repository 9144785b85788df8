//! Few-shot prompting baseline over a chat-completion endpoint, with a
//! record/replay transport so runs can be reproduced offline.

pub mod parse;
pub mod prompt;
pub mod runner;
pub mod transport;

pub use parse::parse_llm_output;
pub use prompt::{build_prompt, default_exemplars, sample_exemplars, ChatMessage, Exemplar, PromptBundle, SYSTEM_PROMPT};
pub use runner::{run_baseline, BaselineRun, ExemplarMode, FallbackPolicy, LlmRunConfig, RunLog};
pub use transport::{ChatTransport, EndpointConfig, HttpTransport, ReplayTransport, TranscriptRecord};
