//! Chat-completion client with an append-only response cache and an offline
//! replay mode.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::EventPair;
use crate::io::{self, JsonlError};
use crate::predictions::{Prediction, PredictionSet, Provenance};
use crate::prompting::{
    answers_to_relations, parse_batchqa_response, parse_yes_no, Answer, AnswerSet, PromptScript,
    Slot, Strategy,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error("replay cache has no entry for key {key} ({pair}, turn {turn})")]
    CacheMiss {
        key: String,
        pair: EventPair,
        turn: usize,
    },
    #[error("api key variable {0} is not set")]
    MissingApiKey(String),
    #[error(transparent)]
    Cache(#[from] JsonlError),
    #[error("cache {path}: {source}")]
    CacheIo {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A failed request; `retriable` ones are retried with backoff.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
    pub retriable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GatewayMode {
    Live,
    Replay,
    #[default]
    LiveWithCache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub mode: GatewayMode,
    pub cache_path: Option<PathBuf>,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
    /// Attempts per request, including the first.
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            model: "local-model".into(),
            api_key_env: None,
            temperature: 0.0,
            max_tokens: 256,
            timeout_secs: 60.0,
            mode: GatewayMode::default(),
            cache_path: None,
            max_in_flight: 4,
            requests_per_minute: None,
            attempts: 3,
            backoff_ms: 500,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.into()));
        if self.mode != GatewayMode::Live && self.cache_path.is_none() {
            return bad("REPLAY and LIVE_WITH_CACHE need a cache path");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite value >= 0");
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout must be positive");
        }
        if self.max_in_flight == 0 || self.attempts == 0 || self.requests_per_minute == Some(0) {
            return bad("max_in_flight, attempts and requests_per_minute must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn user(content: &str) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    fn assistant(content: &str) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError>;
}

/// OpenAI-style `chat/completions` over HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| GatewayError::MissingApiKey(var.clone()))?)
            }
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTransport {
            agent,
            url: format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/')),
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            api_key,
        })
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| TransportError {
            message: e.to_string(),
            retriable: true,
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError {
                message: e.to_string(),
                retriable: true,
            })?;
        if !(200..300).contains(&status) {
            return Err(TransportError {
                message: format!("HTTP {status}: {text}"),
                retriable: status == 429 || status >= 500,
            });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| TransportError {
            message: format!("response is not JSON: {e}"),
            retriable: false,
        })?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError {
                message: "response lacks choices[0].message.content".into(),
                retriable: false,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedExchange {
    pub key: String,
    pub model: String,
    pub strategy: Strategy,
    pub doc_id: String,
    pub source: String,
    pub target: String,
    pub turn: usize,
    pub prompt: String,
    pub response: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// SHA-256 over the model, strategy, pair, turn index and the whole
/// conversation up to and including the current prompt.
pub fn cache_key(
    model: &str,
    strategy: Strategy,
    pair: &EventPair,
    turn: usize,
    conversation: &[ChatMessage],
) -> String {
    let canonical = json!([
        model,
        strategy.as_str(),
        pair.doc_id,
        pair.source_id,
        pair.target_id,
        turn,
        conversation,
    ]);
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

/// Append-only JSONL store; later records win on duplicate keys.
pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, CachedExchange>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    /// Loads `path` if it exists. A read-only cache never creates the file.
    pub fn open(path: &Path, writable: bool) -> Result<Self, GatewayError> {
        let mut entries = HashMap::new();
        if path.exists() {
            for e in io::read_jsonl::<CachedExchange>(path)? {
                entries.insert(e.key.clone(), e);
            }
        }
        let writer = if writable {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| GatewayError::CacheIo {
                    path: path.to_path_buf(),
                    source,
                })?;
            Some(f)
        } else {
            None
        };
        Ok(ResponseCache {
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn get(&self, key: &str) -> Option<CachedExchange> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&self, exchange: CachedExchange) -> Result<(), GatewayError> {
        let line = serde_json::to_string(&exchange).expect("exchange serializes") + "\n";
        let mut writer = self.writer.lock().expect("cache lock");
        if let Some(f) = writer.as_mut() {
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|source| GatewayError::CacheIo {
                    path: self.path.clone(),
                    source,
                })?;
        }
        self.entries
            .lock()
            .expect("cache lock")
            .insert(exchange.key.clone(), exchange);
        Ok(())
    }
}

/// Spaces request starts at least `60 / rpm` seconds apart.
struct RateLimiter {
    interval: Option<Duration>,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(rpm: Option<u32>) -> Self {
        RateLimiter {
            interval: rpm.map(|r| Duration::from_secs_f64(60.0 / f64::from(r))),
            next: Mutex::new(Instant::now()),
        }
    }

    fn wait(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let slot = {
            let mut next = self.next.lock().expect("limiter lock");
            let slot = (*next).max(Instant::now());
            *next = slot + interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub turn: usize,
    pub slot: Slot,
    pub prompt: String,
    pub response: String,
    pub key: String,
}

/// Verbatim record of one pair's conversation and its parsed answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub doc_id: String,
    pub source: String,
    pub target: String,
    pub strategy: Strategy,
    pub order: Vec<crate::algebra::Relation>,
    pub exchanges: Vec<Exchange>,
    pub answers: AnswerSet,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Transcript {
    pub fn event_pair(&self) -> EventPair {
        EventPair::new(&self.doc_id, &self.source, &self.target)
    }

    pub fn prediction(&self) -> Prediction {
        let provenance = match self.strategy {
            Strategy::BatchQa => Provenance::BatchQa,
            Strategy::Cot => Provenance::Cot,
        };
        Prediction {
            relations: answers_to_relations(&self.answers),
            provenance,
            answers: Some(self.answers),
        }
    }

    /// Answers parsed from the recorded responses; a failed conversation
    /// is all UNCERTAIN.
    pub fn parse_answers(&self) -> AnswerSet {
        let mut answers = AnswerSet::uniform(Answer::Uncertain);
        if self.failed {
            return answers;
        }
        for ex in &self.exchanges {
            match ex.slot {
                Slot::Batch => answers = parse_batchqa_response(&ex.response, &self.order),
                Slot::SameEvent => answers.same_event = Some(parse_yes_no(&ex.response)),
                Slot::Relation(r) => answers.set(r, parse_yes_no(&ex.response)),
            }
        }
        answers
    }
}

pub struct Gateway {
    cfg: GatewayConfig,
    transport: Option<Box<dyn ChatTransport>>,
    cache: Option<ResponseCache>,
    limiter: RateLimiter,
}

impl Gateway {
    /// Gateway over HTTP; REPLAY never builds a transport.
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        let transport: Option<Box<dyn ChatTransport>> = match cfg.mode {
            GatewayMode::Replay => None,
            _ => Some(Box::new(HttpTransport::new(&cfg)?)),
        };
        Self::assemble(cfg, transport)
    }

    pub fn with_transport(
        cfg: GatewayConfig,
        transport: Box<dyn ChatTransport>,
    ) -> Result<Self, GatewayError> {
        Self::assemble(cfg, Some(transport))
    }

    fn assemble(
        cfg: GatewayConfig,
        transport: Option<Box<dyn ChatTransport>>,
    ) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let cache = match (&cfg.cache_path, cfg.mode) {
            (Some(p), GatewayMode::Replay) => Some(ResponseCache::open(p, false)?),
            (Some(p), GatewayMode::LiveWithCache) => Some(ResponseCache::open(p, true)?),
            _ => None,
        };
        Ok(Gateway {
            limiter: RateLimiter::new(cfg.requests_per_minute),
            cfg,
            transport,
            cache,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    fn call(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let transport = self.transport.as_ref().ok_or_else(|| TransportError {
            message: "no transport in replay mode".into(),
            retriable: false,
        })?;
        let mut attempt = 0;
        loop {
            self.limiter.wait();
            match transport.complete(messages) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    attempt += 1;
                    if !e.retriable || attempt >= self.cfg.attempts {
                        return Err(e);
                    }
                    log::debug!("request failed (attempt {attempt}): {e}");
                    thread::sleep(Duration::from_millis(
                        self.cfg
                            .backoff_ms
                            .saturating_mul(1 << (attempt - 1).min(16)),
                    ));
                }
            }
        }
    }

    /// Runs one pair's conversation. Transport failures mark the pair failed
    /// with all answers UNCERTAIN; a replay miss is an error.
    pub fn run_script(&self, script: &PromptScript) -> Result<Transcript, GatewayError> {
        let pair = script.event_pair();
        let mut history: Vec<ChatMessage> = Vec::new();
        let mut exchanges = Vec::with_capacity(script.turns.len());
        let mut same_event = None;
        let mut failure = None;

        for i in 0..script.turns.len() {
            let prompt = script.render_turn(i, same_event);
            history.push(ChatMessage::user(&prompt));
            let key = cache_key(&self.cfg.model, script.strategy, &pair, i, &history);
            let cached = self.cache.as_ref().and_then(|c| c.get(&key));
            let response = match (cached, self.cfg.mode) {
                (Some(hit), GatewayMode::Replay | GatewayMode::LiveWithCache) => hit.response,
                (None, GatewayMode::Replay) => {
                    return Err(GatewayError::CacheMiss { key, pair, turn: i })
                }
                _ => match self.call(&history) {
                    Ok(text) => {
                        if let Some(cache) = &self.cache {
                            cache.append(CachedExchange {
                                key: key.clone(),
                                model: self.cfg.model.clone(),
                                strategy: script.strategy,
                                doc_id: pair.doc_id.clone(),
                                source: pair.source_id.clone(),
                                target: pair.target_id.clone(),
                                turn: i,
                                prompt: prompt.clone(),
                                response: text.clone(),
                                timestamp: SystemTime::now()
                                    .duration_since(UNIX_EPOCH)
                                    .map_or(0, |d| d.as_secs()),
                            })?;
                        }
                        text
                    }
                    Err(e) => {
                        log::warn!("{pair}: turn {i} failed: {e}");
                        failure = Some(e.message);
                        break;
                    }
                },
            };
            if script.turns[i].slot == Slot::SameEvent {
                same_event = Some(parse_yes_no(&response));
            }
            history.push(ChatMessage::assistant(&response));
            exchanges.push(Exchange {
                turn: i,
                slot: script.turns[i].slot,
                prompt,
                response,
                key,
            });
        }

        let mut transcript = Transcript {
            doc_id: script.doc_id.clone(),
            source: script.pair.source.clone(),
            target: script.pair.target.clone(),
            strategy: script.strategy,
            order: script.order.clone(),
            exchanges,
            answers: AnswerSet::uniform(Answer::Uncertain),
            failed: failure.is_some(),
            error: failure,
        };
        transcript.answers = transcript.parse_answers();
        Ok(transcript)
    }

    /// Runs scripts with at most `max_in_flight` conversations at a time;
    /// transcripts come back in input order.
    pub fn run_batch(&self, scripts: &[PromptScript]) -> Result<Vec<Transcript>, GatewayError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.max_in_flight)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        pool.install(|| scripts.par_iter().map(|s| self.run_script(s)).collect())
    }
}

pub fn transcripts_to_predictions(transcripts: &[Transcript]) -> PredictionSet {
    transcripts
        .iter()
        .map(|t| (t.event_pair(), t.prediction()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Relation;
    use crate::corpus::{Document, Event, EventKind};
    use crate::prompting::{build_batchqa, build_cot};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn doc() -> Document {
        let text = "She had fever and a rash.".to_string();
        let ev = |id: &str, s: usize, e: usize| Event {
            id: id.into(),
            text: text.chars().skip(s).take(e - s).collect(),
            char_start: s,
            char_end: e,
            sentence_index: 0,
            kind: EventKind::Medical,
        };
        Document {
            id: "d".into(),
            events: vec![ev("e1", 8, 13), ev("e2", 20, 24)],
            text,
            admission_event_id: None,
            discharge_event_id: None,
            gold_links: vec![],
        }
    }

    /// Answers "Yes" to the same-event probe and to BEFORE, "No" otherwise.
    struct Scripted {
        calls: Arc<AtomicUsize>,
        fail_first: usize,
    }

    impl ChatTransport for Scripted {
        fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(TransportError {
                    message: "connection reset".into(),
                    retriable: true,
                });
            }
            let last = &messages.last().unwrap().content;
            Ok(if last.contains("ONLY with Yes or No.\n1.") {
                "1. No\n2. Yes\n3. No\n4. No\n5. No".into()
            } else if last.contains("same event") || last.contains("start before") {
                "Yes.".into()
            } else {
                "No.".into()
            })
        }
    }

    fn cfg(mode: GatewayMode, cache: Option<PathBuf>) -> GatewayConfig {
        GatewayConfig {
            mode,
            cache_path: cache,
            backoff_ms: 1,
            ..GatewayConfig::default()
        }
    }

    fn scripted(fail_first: usize) -> (Box<dyn ChatTransport>, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        (
            Box::new(Scripted {
                calls: calls.clone(),
                fail_first,
            }),
            calls,
        )
    }

    #[test]
    fn config_validation() {
        assert!(cfg(GatewayMode::Replay, None).validate().is_err());
        assert!(cfg(GatewayMode::Live, None).validate().is_ok());
        let mut c = cfg(GatewayMode::Live, None);
        c.temperature = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn cot_branching_and_answers() {
        let (t, calls) = scripted(0);
        let gw = Gateway::with_transport(cfg(GatewayMode::Live, None), t).unwrap();
        let pair = EventPair::new("d", "e1", "e2");
        let tr = gw.run_script(&build_cot(&doc(), &pair).unwrap()).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 6);
        assert_eq!(tr.exchanges.len(), 6);
        assert!(tr.exchanges[1..]
            .iter()
            .all(|e| e.prompt.starts_with("In that event, Did")));
        assert_eq!(tr.answers.same_event, Some(Answer::Yes));
        assert_eq!(
            answers_to_relations(&tr.answers),
            [Relation::Before].into_iter().collect()
        );
        assert!(!tr.failed);
    }

    #[test]
    fn batch_answers_follow_order() {
        let (t, _) = scripted(0);
        let gw = Gateway::with_transport(cfg(GatewayMode::Live, None), t).unwrap();
        let pair = EventPair::new("d", "e1", "e2");
        let script = build_batchqa(&doc(), &pair, 5).unwrap();
        let tr = gw.run_script(&script).unwrap();
        assert_eq!(
            answers_to_relations(&tr.answers).iter().collect::<Vec<_>>(),
            [script.order[1]]
        );
    }

    #[test]
    fn retries_then_fails_softly() {
        let (t, calls) = scripted(2);
        let gw = Gateway::with_transport(cfg(GatewayMode::Live, None), t).unwrap();
        let pair = EventPair::new("d", "e1", "e2");
        let tr = gw
            .run_script(&build_batchqa(&doc(), &pair, 1).unwrap())
            .unwrap();
        assert!(!tr.failed);
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let (t, calls) = scripted(usize::MAX);
        let gw = Gateway::with_transport(cfg(GatewayMode::Live, None), t).unwrap();
        let tr = gw.run_script(&build_cot(&doc(), &pair).unwrap()).unwrap();
        assert!(tr.failed);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(tr.answers, AnswerSet::uniform(Answer::Uncertain));
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let pair = EventPair::new("d", "e1", "e2");
        let scripts = vec![
            build_cot(&doc(), &pair).unwrap(),
            build_batchqa(&doc(), &pair.reversed(), 3).unwrap(),
        ];
        let (t, _) = scripted(0);
        let rec = Gateway::with_transport(cfg(GatewayMode::LiveWithCache, Some(path.clone())), t)
            .unwrap()
            .run_batch(&scripts)
            .unwrap();

        let replay = || Gateway::new(cfg(GatewayMode::Replay, Some(path.clone()))).unwrap();
        let a = replay().run_batch(&scripts).unwrap();
        let b = replay().run_batch(&scripts).unwrap();
        assert_eq!(a, rec);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );

        // drop the third CoT turn from the cache
        let lines: Vec<String> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .filter(|l| !l.contains("\"turn\":2,") || !l.contains("\"strategy\":\"cot\""))
            .map(str::to_string)
            .collect();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        match replay().run_script(&scripts[0]) {
            Err(GatewayError::CacheMiss { key, turn, .. }) => {
                assert_eq!(turn, 2);
                assert_eq!(key, rec[0].exchanges[2].key);
            }
            other => panic!("expected a cache miss, got {other:?}"),
        }
    }
}
