use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::directive::{parse_reply, AgentDirective};
use super::template::{render_prompt, Bindings};
use super::{ChatProvider, ChatRequest, ChatRole, ChatTurn, ProviderError};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    /// Retries after the first attempt for transient failures.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Budget for one `complete` call, including waits.
    pub deadline_ms: u64,
    pub temperature: f32,
    /// Token bucket: burst capacity and refill rate per provider key.
    pub rate_capacity: u32,
    pub rate_per_sec: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base_ms: 250,
            backoff_max_ms: 8_000,
            deadline_ms: 60_000,
            temperature: 0.2,
            rate_capacity: 10,
            rate_per_sec: 5.0,
        }
    }
}

impl GatewayConfig {
    /// Delay before retry number `retry` (0-based): base·2ʳ capped at the max.
    pub fn backoff_ms(&self, retry: u32) -> u64 {
        let factor = 1u64.checked_shl(retry.min(63)).unwrap_or(u64::MAX);
        self.backoff_base_ms
            .saturating_mul(factor)
            .min(self.backoff_max_ms)
    }
}

/// Time source and sleeper, swappable so retry timing can be tested without waiting.
pub trait Pacer: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

pub struct SystemPacer {
    origin: Instant,
}

impl Default for SystemPacer {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Pacer for SystemPacer {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Virtual clock: sleeping advances time instantly and is recorded.
#[derive(Default)]
pub struct VirtualPacer {
    inner: Mutex<(u64, Vec<u64>)>,
}

impl VirtualPacer {
    pub fn sleeps(&self) -> Vec<u64> {
        self.inner.lock().unwrap().1.clone()
    }

    pub fn advance(&self, ms: u64) {
        self.inner.lock().unwrap().0 += ms;
    }
}

impl Pacer for VirtualPacer {
    fn now_ms(&self) -> u64 {
        self.inner.lock().unwrap().0
    }

    fn sleep_ms(&self, ms: u64) {
        let mut g = self.inner.lock().unwrap();
        g.0 += ms;
        g.1.push(ms);
    }
}

pub struct TokenBucket {
    capacity: f64,
    per_ms: f64,
    state: Mutex<(f64, u64)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, per_sec: f64, now_ms: u64) -> Self {
        let capacity = capacity.max(1) as f64;
        Self {
            capacity,
            per_ms: per_sec.max(0.0) / 1000.0,
            state: Mutex::new((capacity, now_ms)),
        }
    }

    /// Takes a token, returning how long the caller must wait first.
    pub fn reserve(&self, now_ms: u64) -> u64 {
        let mut g = self.state.lock().unwrap();
        let (tokens, last) = *g;
        let refilled = (tokens + now_ms.saturating_sub(last) as f64 * self.per_ms).min(self.capacity);
        let after = refilled - 1.0;
        *g = (after, now_ms.max(last));
        if after >= 0.0 || self.per_ms == 0.0 {
            0
        } else {
            (-after / self.per_ms).ceil() as u64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub agent: AgentDirective,
    pub template_id: String,
    /// The rendered system prompt that was sent.
    pub prompt: String,
    pub attempts: u32,
    pub retries: u32,
    /// Delays slept between attempts, in order.
    pub backoff_ms: Vec<u64>,
}

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    config: GatewayConfig,
    pacer: Arc<dyn Pacer>,
    bucket: Arc<TokenBucket>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, config: GatewayConfig) -> Self {
        Self::with_pacer(provider, config, Arc::new(SystemPacer::default()))
    }

    pub fn with_pacer(provider: Arc<dyn ChatProvider>, config: GatewayConfig, pacer: Arc<dyn Pacer>) -> Self {
        let bucket = Arc::new(TokenBucket::new(
            config.rate_capacity,
            config.rate_per_sec,
            pacer.now_ms(),
        ));
        Self {
            provider,
            config,
            pacer,
            bucket,
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Renders the template, calls the provider with bounded retries and
    /// parses the reply into an [`AgentDirective`].
    pub fn complete(&self, template_id: &str, bindings: &Bindings, transcript: &[ChatTurn]) -> Result<Completion> {
        let prompt = render_prompt(template_id, bindings)?;
        self.complete_rendered(template_id, prompt, transcript)
    }

    pub fn complete_rendered(&self, template_id: &str, prompt: String, transcript: &[ChatTurn]) -> Result<Completion> {
        if let Some(bad) = transcript
            .iter()
            .find(|t| t.role != ChatRole::System && t.text.trim().is_empty())
        {
            return Err(Error::validation(format!("empty {:?} turn in transcript", bad.role)));
        }
        let request = ChatRequest {
            template_id: template_id.to_owned(),
            turn_index: transcript.iter().filter(|t| t.role == ChatRole::User).count(),
            system_prompt: prompt,
            transcript: transcript.to_vec(),
            temperature: self.config.temperature,
        };

        let started = self.pacer.now_ms();
        let deadline = started.saturating_add(self.config.deadline_ms);
        let mut backoff = Vec::new();
        let mut retries = 0u32;
        loop {
            let wait = self.bucket.reserve(self.pacer.now_ms());
            if wait > 0 {
                if self.pacer.now_ms() + wait > deadline {
                    return Err(Error::GatewayUnavailable("rate limit wait exceeds deadline".into()));
                }
                self.pacer.sleep_ms(wait);
            }
            match self.provider.chat(&request) {
                Ok(raw) => {
                    return Ok(Completion {
                        agent: parse_reply(&raw),
                        template_id: request.template_id,
                        prompt: request.system_prompt,
                        attempts: retries + 1,
                        retries,
                        backoff_ms: backoff,
                    })
                }
                Err(ProviderError::Fatal { code, message }) => {
                    return Err(Error::Provider { code, message })
                }
                Err(ProviderError::Transient(msg)) => {
                    if retries >= self.config.max_retries {
                        return Err(Error::GatewayUnavailable(format!(
                            "gave up after {} attempts: {msg}",
                            retries + 1
                        )));
                    }
                    let delay = self.config.backoff_ms(retries);
                    if self.pacer.now_ms().saturating_add(delay) > deadline {
                        return Err(Error::GatewayUnavailable(format!("deadline exceeded: {msg}")));
                    }
                    tracing::warn!(retry = retries + 1, delay, "transient provider failure: {msg}");
                    self.pacer.sleep_ms(delay);
                    backoff.push(delay);
                    retries += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use super::*;
    use crate::llm::directive::{format_reply, Directive};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        fatal: bool,
    }

    impl ChatProvider for Flaky {
        fn chat(&self, _request: &ChatRequest) -> Result<String, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                if self.fatal {
                    return Err(ProviderError::Fatal {
                        code: "401".into(),
                        message: "bad key".into(),
                    });
                }
                return Err(ProviderError::Transient("reset".into()));
            }
            Ok(format_reply("ok", &Directive::None))
        }
    }

    fn bindings() -> Bindings {
        [
            ("speaking_summary", "s"),
            ("attendance_summary", "a"),
            ("feedback_items", "f"),
            ("adopted_goal", "g"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    fn gateway(provider: Arc<Flaky>, config: GatewayConfig) -> (Gateway, Arc<VirtualPacer>) {
        let pacer = Arc::new(VirtualPacer::default());
        (Gateway::with_pacer(provider, config, pacer.clone()), pacer)
    }

    #[test]
    fn two_transient_failures_then_success() {
        let provider = Arc::new(Flaky {
            failures: 2,
            calls: AtomicU32::new(0),
            fatal: false,
        });
        let (gw, pacer) = gateway(provider.clone(), GatewayConfig::default());
        let c = gw.complete("solicitation.probing", &bindings(), &[]).unwrap();
        assert_eq!(c.retries, 2);
        assert_eq!(c.attempts, 3);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
        assert_eq!(pacer.sleeps(), vec![250, 500]);
    }

    #[test]
    fn retry_limit_is_respected() {
        let provider = Arc::new(Flaky {
            failures: 10,
            calls: AtomicU32::new(0),
            fatal: false,
        });
        let (gw, _) = gateway(provider.clone(), GatewayConfig::default());
        let err = gw.complete("solicitation.probing", &bindings(), &[]).unwrap_err();
        assert!(matches!(err, Error::GatewayUnavailable(_)));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn deadline_stops_retries() {
        let provider = Arc::new(Flaky {
            failures: 10,
            calls: AtomicU32::new(0),
            fatal: false,
        });
        let config = GatewayConfig {
            max_retries: 10,
            deadline_ms: 600,
            ..GatewayConfig::default()
        };
        let (gw, pacer) = gateway(provider, config);
        assert!(matches!(
            gw.complete("solicitation.probing", &bindings(), &[]),
            Err(Error::GatewayUnavailable(_))
        ));
        assert_eq!(pacer.sleeps(), vec![250]);
    }

    #[test]
    fn fatal_errors_surface_provider_code() {
        let provider = Arc::new(Flaky {
            failures: 1,
            calls: AtomicU32::new(0),
            fatal: true,
        });
        let (gw, _) = gateway(provider, GatewayConfig::default());
        match gw.complete("solicitation.probing", &bindings(), &[]) {
            Err(Error::Provider { code, .. }) => assert_eq!(code, "401"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_bindings_fail_before_calling() {
        let provider = Arc::new(Flaky {
            failures: 0,
            calls: AtomicU32::new(0),
            fatal: false,
        });
        let (gw, _) = gateway(provider.clone(), GatewayConfig::default());
        assert!(matches!(
            gw.complete("solicitation.probing", &Bindings::new(), &[]),
            Err(Error::Validation(_))
        ));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn backoff_is_non_decreasing_and_capped() {
        let c = GatewayConfig::default();
        let delays: Vec<u64> = (0..70).map(|r| c.backoff_ms(r)).collect();
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*delays.last().unwrap(), c.backoff_max_ms);
    }

    #[test]
    fn token_bucket_delays_when_empty() {
        let bucket = TokenBucket::new(2, 1.0, 0);
        assert_eq!(bucket.reserve(0), 0);
        assert_eq!(bucket.reserve(0), 0);
        assert_eq!(bucket.reserve(0), 1000);
        assert_eq!(bucket.reserve(5000), 0);
    }
}
