//! Synonym generation through a chat-completion service.
//!
//! Prompts follow a fixed template; responses are cached as raw text keyed
//! by the SHA-256 of the rendered prompt, so editing a template invalidates
//! its cache entries. With `offline` set the client never touches the
//! transport and serves only cached responses.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, AceError, Result};
use crate::vocab::{ActionLabel, SynonymTree, Vocabulary};

/// The appendix prompt, written for toy assembly.
pub const APPENDIX_TEMPLATE: &str = "appendix";
/// The appendix prompt with the domain hint substituted into constraint 2.
pub const GENERIC_TEMPLATE: &str = "generic";

const APPENDIX_CONSTRAINTS: [&str; 6] = [
    "list each synonym in a new line without any numbering and period or commas.",
    "make sure the resulting sentences semantically and contextually make sense given the assembly context.",
    "start each line with a verb and all in small letters.",
    "use the same object and sentence structure as the query.",
    "if the verb is a phrasal verb like 'put down', then place the whole phrasal verb in the begging of the sentence.",
    "if the query is a phrasal verb, then I encourage you to output phrasal verbs too, specially if the phrasal verb indicates some spatial information about the scene.",
];

/// Numbered constraint lines of a template, in order.
pub fn template_constraints(template_id: &str, domain_hint: &str) -> Result<Vec<String>> {
    match template_id {
        APPENDIX_TEMPLATE => Ok(APPENDIX_CONSTRAINTS.iter().map(|s| s.to_string()).collect()),
        GENERIC_TEMPLATE => Ok(APPENDIX_CONSTRAINTS
            .iter()
            .map(|s| s.replace("the assembly context", &format!("the {domain_hint} context")))
            .collect()),
        other => Err(AceError::TemplateNotFound(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymRequest {
    pub action: ActionLabel,
    /// Synonyms requested.
    pub m: usize,
    pub domain_hint: String,
    pub template_id: String,
    /// Verbs the service is told not to return.
    pub exclude: Vec<String>,
}

impl SynonymRequest {
    pub fn new(action: ActionLabel, m: usize, domain_hint: &str) -> Self {
        Self {
            action,
            m,
            domain_hint: domain_hint.to_string(),
            template_id: APPENDIX_TEMPLATE.to_string(),
            exclude: Vec::new(),
        }
    }
}

/// Renders the prompt for `req`.
///
/// ```
/// use ace_core::llm::{render_prompt, SynonymRequest};
/// use ace_core::vocab::ActionLabel;
///
/// let req = SynonymRequest::new(ActionLabel::new("spin", "block")?, 11, "toy assembly");
/// let prompt = render_prompt(&req)?;
/// assert!(prompt.starts_with("what are 11 synonyms of the action (spin block) during toy assembly?"));
/// assert!(prompt.contains("\n6- if the query is a phrasal verb"));
/// # Ok::<(), ace_core::AceError>(())
/// ```
pub fn render_prompt(req: &SynonymRequest) -> Result<String> {
    if req.m == 0 {
        return Err(config_err("a synonym request needs m >= 1"));
    }
    let constraints = template_constraints(&req.template_id, &req.domain_hint)?;
    let noun = if req.m == 1 { "synonym" } else { "synonyms" };
    let mut out = format!(
        "what are {} {noun} of the action ({}) during {}? please follow the constraints below:",
        req.m,
        req.action.text(),
        req.domain_hint
    );
    for (i, c) in constraints.iter().enumerate() {
        out.push_str(&format!("\n{}- {c}", i + 1));
    }
    if !req.exclude.is_empty() {
        out.push_str(&format!("\ndo not use these verbs: {}.", req.exclude.join(", ")));
    }
    Ok(out)
}

/// Hex SHA-256 of the rendered prompt.
pub fn cache_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymResponse {
    /// Normalized response lines.
    pub lines: Vec<String>,
    /// Verb phrase of each line with the object removed.
    pub verbs: Vec<String>,
    pub raw: String,
    pub cache_key: String,
    /// Fix-ups applied during normalization.
    pub warnings: Vec<String>,
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim_start();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')', '-']) {
            return r;
        }
    }
    t.strip_prefix(['-', '*', '•']).unwrap_or(t)
}

/// Parses a response into `req.m` verb phrases.
///
/// Lines are lowercased, list markers and punctuation are dropped (each fix
/// recorded as a warning), and the query's object is stripped from the end.
pub fn parse_response(req: &SynonymRequest, raw: &str, key: &str) -> Result<SynonymResponse> {
    let object: Vec<&str> = req.action.object().split_whitespace().collect();
    let mut lines = Vec::new();
    let mut verbs = Vec::new();
    let mut warnings = Vec::new();
    let mut problems = Vec::new();
    for (n, original) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let n = n + 1;
        let unmarked = strip_list_marker(original);
        if unmarked.len() != original.trim_start().len() {
            warnings.push(format!("line {n}: removed list marker"));
        }
        let lower = unmarked.to_lowercase();
        if lower != unmarked {
            warnings.push(format!("line {n}: lowercased"));
        }
        let cleaned: String = lower
            .chars()
            .map(|c| {
                if c.is_alphanumeric() || c.is_whitespace() || c == '-' || c == '\'' {
                    c
                } else {
                    ' '
                }
            })
            .collect();
        let tokens: Vec<&str> = cleaned.split_whitespace().collect();
        if tokens.join(" ") != lower.split_whitespace().collect::<Vec<_>>().join(" ") {
            warnings.push(format!("line {n}: removed punctuation"));
        }
        let line = tokens.join(" ");
        if tokens.len() <= object.len() || tokens[tokens.len() - object.len()..] != object[..] {
            problems.push(format!(
                "line {n} {line:?} does not end with the object {:?}",
                req.action.object()
            ));
            continue;
        }
        verbs.push(tokens[..tokens.len() - object.len()].join(" "));
        lines.push(line);
    }
    if lines.len() + problems.len() != req.m {
        problems.push(format!(
            "expected {} lines, got {}",
            req.m,
            lines.len() + problems.len()
        ));
    }
    if !problems.is_empty() {
        return Err(AceError::MalformedResponse(format!(
            "{}: {}",
            req.action,
            problems.join("; ")
        )));
    }
    for w in &warnings {
        log::warn!("{}: {w}", req.action);
    }
    Ok(SynonymResponse {
        lines,
        verbs,
        raw: raw.to_string(),
        cache_key: key.to_string(),
        warnings,
    })
}

/// Sends one prompt and returns the completion text.
pub trait Transport: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Generic chat-completion endpoint over HTTP.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    pub url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
}

impl HttpTransport {
    /// Reads `ACE_LLM_URL`, `ACE_LLM_KEY` and `ACE_LLM_MODEL`; the timeout
    /// comes from `ACE_LLM_TIMEOUT_SECS` (default 60).
    pub fn from_env() -> Result<Self> {
        let var = |k: &str| std::env::var(k).map_err(|_| AceError::ServiceUnavailable(format!("{k} is not set")));
        let timeout = match std::env::var("ACE_LLM_TIMEOUT_SECS") {
            Ok(s) => s
                .parse()
                .map_err(|_| config_err(format!("ACE_LLM_TIMEOUT_SECS is not a number: {s:?}")))?,
            Err(_) => 60,
        };
        Ok(Self {
            url: var("ACE_LLM_URL")?,
            api_key: var("ACE_LLM_KEY")?,
            model: var("ACE_LLM_MODEL")?,
            timeout: Duration::from_secs(timeout),
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, prompt: &str) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let response: serde_json::Value = agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .and_then(|r| r.into_body().read_json())
            .map_err(|e| AceError::ServiceUnavailable(e.to_string()))?;
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AceError::MalformedResponse("no choices[0].message.content in reply".into()))
    }
}

/// One file per cache key: a JSON metadata line, then the raw payload.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    writes: Mutex<()>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub key: String,
    pub template_id: String,
    pub action: String,
    pub m: usize,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            writes: Mutex::new(()),
        })
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>> {
        let path = self.path_for(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let (meta, raw) = text.split_once('\n').unwrap_or((&text, ""));
        let meta: CacheMeta = serde_json::from_str(meta).map_err(|e| AceError::IngestError {
            path: path.clone(),
            reason: format!("bad metadata line: {e}"),
        })?;
        if meta.key != key {
            return Err(AceError::IngestError {
                path,
                reason: format!("entry records key {}", meta.key),
            });
        }
        Ok(Some(raw.to_string()))
    }

    pub fn put(&self, meta: &CacheMeta, raw: &str) -> Result<()> {
        let _guard = self.writes.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.path_for(&meta.key);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, format!("{}\n{raw}", serde_json::to_string(meta)?))?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    /// Extra attempts after the first failure.
    pub max_retries: usize,
    /// Backoff before retry `k` is `backoff_ms * 2^k`.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Request rate cap; 0 disables it.
    pub requests_per_second: f64,
    pub offline: bool,
    pub domain_hint: String,
    pub template_id: String,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            requests_per_second: 2.0,
            offline: false,
            domain_hint: "toy assembly".into(),
            template_id: APPENDIX_TEMPLATE.into(),
        }
    }
}

pub struct LlmClient {
    transport: Option<Box<dyn Transport>>,
    cache: Option<ResponseCache>,
    config: ClientConfig,
    next_slot: Mutex<Instant>,
}

impl LlmClient {
    pub fn new(transport: Option<Box<dyn Transport>>, cache: Option<ResponseCache>, config: ClientConfig) -> Self {
        Self {
            transport,
            cache,
            config,
            next_slot: Mutex::new(Instant::now()),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn wait_for_slot(&self) {
        if self.config.requests_per_second <= 0.0 {
            return;
        }
        let gap = Duration::from_secs_f64(1.0 / self.config.requests_per_second);
        let at = {
            let mut next = self.next_slot.lock().unwrap_or_else(|p| p.into_inner());
            let at = (*next).max(Instant::now());
            *next = at + gap;
            at
        };
        thread::sleep(at.saturating_duration_since(Instant::now()));
    }

    /// Cached response for `req`, else a fresh one from the transport.
    pub fn fetch_synonyms(&self, req: &SynonymRequest) -> Result<SynonymResponse> {
        let prompt = render_prompt(req)?;
        let key = cache_key(&prompt);
        if let Some(cache) = &self.cache {
            if let Some(raw) = cache.get(&key)? {
                return parse_response(req, &raw, &key);
            }
        }
        let transport = match (&self.transport, self.config.offline) {
            (Some(t), false) => t,
            (_, true) => {
                return Err(AceError::ServiceUnavailable(format!(
                    "offline and no cached response for {} (key {key})",
                    req.action
                )))
            }
            (None, false) => return Err(AceError::ServiceUnavailable("no transport configured".into())),
        };
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let ms = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                log::info!(
                    "retrying {} in {ms} ms: {}",
                    req.action,
                    last.as_ref().map_or(String::new(), |e: &AceError| e.to_string())
                );
                thread::sleep(Duration::from_millis(ms));
            }
            self.wait_for_slot();
            match transport
                .complete(&prompt)
                .and_then(|raw| parse_response(req, &raw, &key))
            {
                Ok(resp) => {
                    if let Some(cache) = &self.cache {
                        cache.put(
                            &CacheMeta {
                                key: key.clone(),
                                template_id: req.template_id.clone(),
                                action: req.action.text(),
                                m: req.m,
                            },
                            &resp.raw,
                        )?;
                    }
                    return Ok(resp);
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// `m` distinct synonyms of `verb` (other than `verb` itself). A
    /// shortfall after deduplication triggers one re-fetch that excludes
    /// what is already known; a remaining shortfall is accepted with a
    /// warning.
    pub fn synonyms_of(
        &self,
        verb: &str,
        object: &str,
        m: usize,
        warnings: &Mutex<Vec<String>>,
    ) -> Result<Vec<String>> {
        if m == 0 {
            return Ok(Vec::new());
        }
        let action = ActionLabel::new(verb, object)?;
        let mut req = SynonymRequest {
            template_id: self.config.template_id.clone(),
            ..SynonymRequest::new(action.clone(), m, &self.config.domain_hint)
        };
        let mut out: Vec<String> = Vec::new();
        let absorb = |verbs: Vec<String>, out: &mut Vec<String>| {
            for v in verbs {
                if v != action.verb() && !out.contains(&v) && out.len() < m {
                    out.push(v);
                }
            }
        };
        absorb(self.fetch_synonyms(&req)?.verbs, &mut out);
        if out.len() < m {
            req.m = m - out.len();
            req.exclude = std::iter::once(action.verb().to_string())
                .chain(out.iter().cloned())
                .collect();
            absorb(self.fetch_synonyms(&req)?.verbs, &mut out);
            if out.len() < m {
                let w = format!("{verb}: only {} of {m} distinct synonyms after re-fetch", out.len());
                log::warn!("{w}");
                warnings.lock().unwrap_or_else(|p| p.into_inner()).push(w);
            }
        }
        Ok(out)
    }
}

/// Trees built by [`build_trees`] and the shortfall warnings raised on the
/// way.
#[derive(Debug, Clone)]
pub struct BuiltTrees {
    pub vocabulary: Vocabulary,
    pub warnings: Vec<String>,
}

/// Builds a depth-one or depth-two tree for every root verb of `actions`.
///
/// `m_per_level` counts children including the replicated parent, so the
/// service is asked for `m - 1` synonyms per node. When a second-level
/// shortfall leaves a tree uneven, all of its second-level lists are cut to
/// the shortest one.
pub fn build_trees(client: &LlmClient, actions: &[ActionLabel], m_per_level: &[usize]) -> Result<BuiltTrees> {
    if m_per_level.is_empty() || m_per_level.len() > 2 || m_per_level.contains(&0) {
        return Err(config_err("m_per_level must hold one or two positive counts"));
    }
    let warnings = Mutex::new(Vec::new());
    let mut roots: IndexMap<String, String> = IndexMap::new();
    for a in actions {
        roots
            .entry(a.verb().to_string())
            .or_insert_with(|| a.object().to_string());
    }

    let level1: Vec<Vec<String>> =
        run_limited(client.config.max_in_flight, roots.iter().collect(), |(verb, object)| {
            client.synonyms_of(verb, object, m_per_level[0] - 1, &warnings)
        })?;

    let mut jobs = Vec::new();
    if let Some(&m2) = m_per_level.get(1) {
        for ((_, object), first) in roots.iter().zip(&level1) {
            for node in first {
                jobs.push((node.clone(), object.clone(), m2 - 1));
            }
        }
    }
    let level2 = run_limited(
        client.config.max_in_flight,
        jobs.iter().collect(),
        |(node, object, m)| client.synonyms_of(node, object, *m, &warnings),
    )?;

    let mut level2 = level2.into_iter();
    let mut trees = IndexMap::new();
    for ((root, _), first) in roots.iter().zip(&level1) {
        let mut second: IndexMap<String, Vec<String>> = IndexMap::new();
        if m_per_level.len() == 2 {
            for node in first {
                second.insert(node.clone(), level2.next().expect("one result per job"));
            }
            let shortest = second.values().map(Vec::len).min().unwrap_or(0);
            if second.values().any(|v| v.len() != shortest) {
                let w = format!("{root}: second-level lists cut to {shortest} synonyms to keep the level uniform");
                log::warn!("{w}");
                warnings.lock().unwrap_or_else(|p| p.into_inner()).push(w);
                for v in second.values_mut() {
                    v.truncate(shortest);
                }
            }
        }
        trees.insert(root.clone(), SynonymTree::from_synonyms(root, first, &second)?);
    }
    Ok(BuiltTrees {
        vocabulary: Vocabulary::new(actions.to_vec(), trees)?,
        warnings: warnings.into_inner().unwrap_or_else(|p| p.into_inner()),
    })
}

/// Runs `f` over `items` with at most `limit` calls in flight, keeping order.
fn run_limited<T: Sync, R: Send>(limit: usize, items: Vec<T>, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let limit = limit.max(1);
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(limit) {
        let results: Vec<Result<R>> = thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|item| s.spawn(|| f(item))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fetch thread panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

/// Trees for `actions` taken from an existing vocabulary file, cut down to
/// `m_per_level` when given. No service is involved.
pub fn trees_from_file(path: &Path, actions: &[ActionLabel], m_per_level: Option<&[usize]>) -> Result<Vocabulary> {
    let source = Vocabulary::load(path)?;
    let mut trees = IndexMap::new();
    for a in actions {
        if trees.contains_key(a.verb()) {
            continue;
        }
        let t = source
            .trees()
            .get(a.verb())
            .ok_or_else(|| AceError::SchemaError(format!("{} has no tree for verb {:?}", path.display(), a.verb())))?;
        trees.insert(a.verb().to_string(), t.clone());
    }
    let vocab = Vocabulary::new(actions.to_vec(), trees)?;
    match m_per_level {
        Some(m) => vocab.truncated(m),
        None => Ok(vocab),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn req(verb: &str, object: &str, m: usize) -> SynonymRequest {
        SynonymRequest::new(ActionLabel::new(verb, object).unwrap(), m, "toy assembly")
    }

    #[test]
    fn prompt_carries_count_action_hint_and_constraints() {
        let p = render_prompt(&req("spin", "block", 11)).unwrap();
        assert!(p.contains("11 synonyms of the action (spin block) during toy assembly"));
        for (i, c) in APPENDIX_CONSTRAINTS.iter().enumerate() {
            assert!(p.contains(&format!("{}- {c}", i + 1)));
        }
        assert_eq!(p, render_prompt(&req("spin", "block", 11)).unwrap());
    }

    #[test]
    fn single_synonym_is_singular() {
        let p = render_prompt(&req("spin", "block", 1)).unwrap();
        assert!(p.contains("what are 1 synonym of"));
        assert!(!p.contains("1 synonyms"));
    }

    #[test]
    fn unknown_template() {
        let r = SynonymRequest {
            template_id: "nope".into(),
            ..req("spin", "block", 2)
        };
        assert!(matches!(render_prompt(&r), Err(AceError::TemplateNotFound(_))));
    }

    #[test]
    fn generic_template_uses_hint() {
        let r = SynonymRequest {
            template_id: GENERIC_TEMPLATE.into(),
            domain_hint: "cooking".into(),
            ..req("pour", "ingredient", 2)
        };
        assert!(render_prompt(&r).unwrap().contains("given the cooking context"));
    }

    #[test]
    fn normalizes_case_and_punctuation() {
        let r = req("spin", "block", 2);
        let resp = parse_response(&r, "Rotate block.\nturn block\n", "k").unwrap();
        assert_eq!(resp.verbs, vec!["rotate", "turn"]);
        assert_eq!(resp.lines, vec!["rotate block", "turn block"]);
        assert_eq!(resp.warnings.len(), 2);
    }

    #[test]
    fn phrasal_verbs_and_markers() {
        let r = req("put down", "screwdriver", 2);
        let resp = parse_response(&r, "1. set down screwdriver\n- lay down screwdriver", "k").unwrap();
        assert_eq!(resp.verbs, vec!["set down", "lay down"]);
    }

    #[test]
    fn wrong_count_or_object_is_malformed() {
        let r = req("spin", "block", 2);
        assert!(matches!(
            parse_response(&r, "rotate block", "k"),
            Err(AceError::MalformedResponse(_))
        ));
        assert!(matches!(
            parse_response(&r, "rotate block\nturn wheel", "k"),
            Err(AceError::MalformedResponse(_))
        ));
        assert!(matches!(
            parse_response(&r, "block\nturn block", "k"),
            Err(AceError::MalformedResponse(_))
        ));
    }

    /// Answers from a verb → synonyms table and counts calls.
    struct Scripted {
        calls: Arc<AtomicUsize>,
        answers: Vec<(&'static str, &'static str)>,
        fail_first: usize,
    }

    impl Transport for Scripted {
        fn complete(&self, prompt: &str) -> Result<String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(AceError::ServiceUnavailable("scripted outage".into()));
            }
            for (needle, answer) in &self.answers {
                if prompt.contains(needle) {
                    return Ok(answer.to_string());
                }
            }
            panic!("unscripted prompt: {prompt}");
        }
    }

    fn fast() -> ClientConfig {
        ClientConfig {
            backoff_ms: 0,
            requests_per_second: 0.0,
            ..ClientConfig::default()
        }
    }

    #[test]
    fn retries_then_succeeds_then_serves_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let t = Scripted {
            calls: calls.clone(),
            answers: vec![("(spin block)", "rotate block\nturn block")],
            fail_first: 2,
        };
        let client = LlmClient::new(
            Some(Box::new(t)),
            Some(ResponseCache::open(dir.path()).unwrap()),
            fast(),
        );
        let r = req("spin", "block", 2);
        assert_eq!(client.fetch_synonyms(&r).unwrap().verbs, vec!["rotate", "turn"]);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        client.fetch_synonyms(&r).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_retry_limit() {
        let calls = Arc::new(AtomicUsize::new(0));
        let t = Scripted {
            calls: calls.clone(),
            answers: vec![],
            fail_first: usize::MAX,
        };
        let client = LlmClient::new(
            Some(Box::new(t)),
            None,
            ClientConfig {
                max_retries: 2,
                ..fast()
            },
        );
        assert!(matches!(
            client.fetch_synonyms(&req("spin", "block", 2)),
            Err(AceError::ServiceUnavailable(_))
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn offline_cold_cache_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let client = LlmClient::new(
            None,
            Some(ResponseCache::open(dir.path()).unwrap()),
            ClientConfig {
                offline: true,
                ..fast()
            },
        );
        assert!(matches!(
            client.fetch_synonyms(&req("spin", "block", 2)),
            Err(AceError::ServiceUnavailable(_))
        ));
    }

    #[test]
    fn duplicate_answers_trigger_one_refetch() {
        let calls = Arc::new(AtomicUsize::new(0));
        let t = Scripted {
            calls: calls.clone(),
            answers: vec![
                ("do not use these verbs: spin, rotate", "twirl block\nrotate block"),
                ("(spin block)", "rotate block\nspin block\nrotate block"),
            ],
            fail_first: 0,
        };
        let client = LlmClient::new(Some(Box::new(t)), None, fast());
        let w = Mutex::new(Vec::new());
        let got = client.synonyms_of("spin", "block", 3, &w).unwrap();
        assert_eq!(got, vec!["rotate", "twirl"]);
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert_eq!(w.into_inner().unwrap().len(), 1);
    }

    #[test]
    fn two_by_two_trees() {
        let t = Scripted {
            calls: Arc::new(AtomicUsize::new(0)),
            answers: vec![
                ("(spin block)", "rotate block"),
                ("(rotate block)", "turn block"),
                ("(hammer pin)", "pound pin"),
                ("(pound pin)", "strike pin"),
            ],
            fail_first: 0,
        };
        let client = LlmClient::new(Some(Box::new(t)), None, fast());
        let actions = vec![
            ActionLabel::new("spin", "block").unwrap(),
            ActionLabel::new("hammer", "pin").unwrap(),
        ];
        let built = build_trees(&client, &actions, &[2, 2]).unwrap();
        let v = &built.vocabulary;
        assert_eq!(v.trees().len(), 2);
        let spin = &v.trees()["spin"];
        assert_eq!(spin.first_order(), ["rotate", "spin"]);
        assert_eq!(spin.children_of("rotate").unwrap(), ["turn", "rotate"]);
        assert_eq!(spin.m_per_level(), vec![2, 2]);
        assert!(built.warnings.is_empty());
    }
}
