use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::parse::parse_llm_output;
use super::prompt::{build_prompt, Exemplar};
use super::transport::{AttemptStatus, ChatRequest, ChatTransport, EndpointConfig, TranscriptRecord};
use crate::data::{AspectInstance, PredictionRecord};
use crate::error::{Error, Result};
use crate::va::VaPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// The scale midpoint (5, 5).
    Midpoint,
    Constant { valence: f64, arousal: f64 },
}

impl FallbackPolicy {
    pub fn value(&self) -> Result<VaPair> {
        match *self {
            FallbackPolicy::Midpoint => Ok(VaPair::MIDPOINT),
            FallbackPolicy::Constant { valence, arousal } => VaPair::new(valence, arousal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExemplarMode {
    /// The six built-in examples.
    Fixed,
    /// `k` examples drawn from the training pool with the run seed.
    Sampled { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmRunConfig {
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub fallback: FallbackPolicy,
    pub exemplars: ExemplarMode,
    /// Requests in flight at once.
    pub concurrency: usize,
    pub endpoint: EndpointConfig,
}

impl Default for LlmRunConfig {
    fn default() -> Self {
        Self {
            model: "gpt-5.2".into(),
            temperature: 0.1,
            max_retries: 2,
            fallback: FallbackPolicy::Midpoint,
            exemplars: ExemplarMode::Fixed,
            concurrency: 1,
            endpoint: EndpointConfig::default(),
        }
    }
}

impl LlmRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        if let ExemplarMode::Sampled { k } = self.exemplars {
            if k == 0 {
                return Err(Error::Config("sampled exemplar count must be positive".into()));
            }
        }
        self.fallback.value().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub key: String,
    pub va: VaPair,
    pub attempts: u32,
    pub fallback: bool,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub model: String,
    pub temperature: f64,
    pub instances: usize,
    pub requests: usize,
    pub parsed: usize,
    pub parse_failures: usize,
    pub transport_errors: usize,
    pub fallbacks: Vec<String>,
}

impl RunLog {
    pub fn all_failed(&self) -> bool {
        self.instances > 0 && self.fallbacks.len() == self.instances
    }
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub predictions: Vec<PredictionRecord>,
    pub outcomes: Vec<InstanceOutcome>,
    pub transcript: Vec<TranscriptRecord>,
    pub log: RunLog,
}

fn run_one(
    inst: &AspectInstance,
    exemplars: &[Exemplar],
    system_text: &str,
    config: &LlmRunConfig,
    fallback: VaPair,
    transport: &dyn ChatTransport,
) -> (InstanceOutcome, Vec<TranscriptRecord>) {
    let key = inst.key().to_string();
    let messages = build_prompt(inst, exemplars, system_text);
    let mut records = Vec::new();
    let mut last_error = None;
    for attempt in 0..=config.max_retries {
        let request = ChatRequest {
            key: key.clone(),
            attempt,
            model: config.model.clone(),
            temperature: config.temperature,
            messages: messages.clone(),
        };
        let mut record = TranscriptRecord {
            key: key.clone(),
            attempt,
            model: config.model.clone(),
            temperature: config.temperature,
            messages: messages.clone(),
            response: None,
            error: None,
            parsed: None,
            status: AttemptStatus::Ok,
        };
        let parsed = match transport.complete(&request) {
            Ok(response) => {
                let parsed = parse_llm_output(&response);
                record.response = Some(response);
                parsed.map_err(|e| (AttemptStatus::ParseFailure, e))
            }
            Err(e) => Err((AttemptStatus::TransportError, e)),
        };
        match parsed {
            Ok(va) => {
                record.parsed = Some(va.to_va_string());
                records.push(record);
                let outcome = InstanceOutcome {
                    key,
                    va,
                    attempts: attempt + 1,
                    fallback: false,
                    last_error,
                };
                return (outcome, records);
            }
            Err((status, e)) => {
                log::warn!("{key} attempt {attempt}: {e}");
                record.status = status;
                // Replay re-wraps the stored text, so keep only the inner message.
                record.error = Some(match &e {
                    Error::Transport(m) => m.clone(),
                    other => other.to_string(),
                });
                last_error = Some(e.to_string());
                records.push(record);
            }
        }
    }
    log::warn!("{key}: falling back to {}", fallback.to_va_string());
    let outcome = InstanceOutcome {
        key,
        va: fallback,
        attempts: config.max_retries + 1,
        fallback: true,
        last_error,
    };
    (outcome, records)
}

/// Queries the model once per instance (plus retries on failure). Every
/// instance gets exactly one prediction, and results follow input order
/// whatever the completion order.
pub fn run_baseline(
    instances: &[AspectInstance],
    exemplars: &[Exemplar],
    system_text: &str,
    config: &LlmRunConfig,
    transport: &dyn ChatTransport,
) -> Result<BaselineRun> {
    config.validate()?;
    let fallback = config.fallback.value()?;
    let slots: Vec<Mutex<Option<(InstanceOutcome, Vec<TranscriptRecord>)>>> =
        instances.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(inst) = instances.get(i) else { break };
        let result = run_one(inst, exemplars, system_text, config, fallback, transport);
        *slots[i].lock().expect("slot lock") = Some(result);
    };
    let threads = config.concurrency.min(instances.len()).max(1);
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(worker);
            }
        });
    }

    let mut predictions = Vec::with_capacity(instances.len());
    let mut outcomes = Vec::with_capacity(instances.len());
    let mut transcript = Vec::new();
    for (inst, slot) in instances.iter().zip(slots) {
        let (outcome, records) = slot.into_inner().expect("slot lock").expect("every slot filled");
        predictions.push(PredictionRecord::new(inst, outcome.va));
        outcomes.push(outcome);
        transcript.extend(records);
    }
    let count = |s: AttemptStatus| transcript.iter().filter(|r| r.status == s).count();
    let log = RunLog {
        model: config.model.clone(),
        temperature: config.temperature,
        instances: instances.len(),
        requests: transcript.len(),
        parsed: count(AttemptStatus::Ok),
        parse_failures: count(AttemptStatus::ParseFailure),
        transport_errors: count(AttemptStatus::TransportError),
        fallbacks: outcomes.iter().filter(|o| o.fallback).map(|o| o.key.clone()).collect(),
    };
    Ok(BaselineRun {
        predictions,
        outcomes,
        transcript,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompt::{default_exemplars, SYSTEM_PROMPT};
    use crate::llm::transport::ReplayTransport;
    use crate::model::tests::instance;

    struct Scripted(Vec<(&'static str, Result<&'static str, &'static str>)>);

    impl ChatTransport for Scripted {
        fn complete(&self, request: &ChatRequest) -> Result<String> {
            let n = self.0.iter().filter(|(k, _)| *k == request.key).count();
            let (_, r) = self
                .0
                .iter()
                .filter(|(k, _)| *k == request.key)
                .nth(request.attempt as usize)
                .unwrap_or_else(|| panic!("{} attempts for {}", n, request.key));
            r.map(str::to_string).map_err(|e| Error::Transport(e.into()))
        }
    }

    fn instances() -> Vec<AspectInstance> {
        vec![
            instance("a", 0, "great battery", "battery", None),
            instance("b", 0, "awful screen", "screen", None),
            instance("c", 1, "fine keyboard", "keyboard", None),
        ]
    }

    #[test]
    fn retries_then_falls_back() {
        let t = Scripted(vec![
            ("a#0", Ok("7.25#6.00")),
            ("b#0", Ok("no idea")),
            ("b#0", Err("timeout")),
            ("b#0", Ok("still no idea")),
            ("c#1", Err("reset")),
            ("c#1", Ok("Answer: 5.5#4.5")),
        ]);
        let config = LlmRunConfig {
            concurrency: 3,
            ..Default::default()
        };
        let run = run_baseline(&instances(), &default_exemplars(), SYSTEM_PROMPT, &config, &t).unwrap();
        let vas: Vec<String> = run.predictions.iter().map(|p| p.va.to_va_string()).collect();
        assert_eq!(vas, vec!["7.25#6.00", "5.00#5.00", "5.50#4.50"]);
        assert_eq!(run.log.fallbacks, vec!["b#0"]);
        assert_eq!((run.log.requests, run.log.parsed), (6, 2));
        assert_eq!((run.log.parse_failures, run.log.transport_errors), (2, 2));
        assert!(!run.log.all_failed());
        let order: Vec<(&str, u32)> = run.transcript.iter().map(|r| (r.key.as_str(), r.attempt)).collect();
        assert_eq!(order, vec![("a#0", 0), ("b#0", 0), ("b#0", 1), ("b#0", 2), ("c#1", 0), ("c#1", 1)]);

        let replay = ReplayTransport::new(run.transcript.clone());
        let again = run_baseline(&instances(), &default_exemplars(), SYSTEM_PROMPT, &config, &replay).unwrap();
        assert_eq!(again.predictions, run.predictions);
        assert_eq!(again.transcript, run.transcript);
    }

    #[test]
    fn all_failures_are_reported() {
        let t = Scripted(vec![("a#0", Err("down")), ("b#0", Err("down")), ("c#1", Err("down"))]);
        let config = LlmRunConfig {
            max_retries: 0,
            ..Default::default()
        };
        let run = run_baseline(&instances(), &[], SYSTEM_PROMPT, &config, &t).unwrap();
        assert!(run.log.all_failed());
    }

    #[test]
    fn config_validation() {
        let bad = LlmRunConfig {
            temperature: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LlmRunConfig {
            fallback: FallbackPolicy::Constant {
                valence: 0.0,
                arousal: 5.0,
            },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(LlmRunConfig::default().temperature, 0.1);
    }
}
