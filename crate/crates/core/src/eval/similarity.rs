//! Sentence similarity providers. Scores are `(1 + cos)/2` of two sentence
//! embeddings, so orthogonal embeddings score 0.5.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENDPOINT_ENV: &str = "SEMCOM_EMBEDDING_URL";
pub const TOKEN_ENV: &str = "SEMCOM_EMBEDDING_TOKEN";

pub trait SimilarityProvider: Sync {
    fn name(&self) -> &str;

    /// One score in `[0, 1]` per `(a, b)` pair.
    fn similarities(&self, pairs: &[(String, String)]) -> Result<Vec<f64>>;
}

/// `(1 + cos(a, b)) / 2`; a zero vector counts as orthogonal to everything
/// except another zero vector.
pub fn cosine_score(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = match (na > 0.0, nb > 0.0) {
        (true, true) => dot / (na * nb),
        (false, false) => 1.0,
        _ => 0.0,
    };
    ((1.0 + cos) / 2.0).clamp(0.0, 1.0)
}

/// Offline fallback: cosine of whitespace-token count vectors.
#[derive(Clone, Copy, Debug, Default)]
pub struct LexicalSimilarity;

impl LexicalSimilarity {
    pub fn score(&self, a: &str, b: &str) -> f64 {
        let mut index: HashMap<&str, usize> = HashMap::new();
        for t in a.split_whitespace().chain(b.split_whitespace()) {
            let next = index.len();
            index.entry(t).or_insert(next);
        }
        let embed = |s: &str| {
            let mut v = vec![0.0; index.len()];
            for t in s.split_whitespace() {
                v[index[t]] += 1.0;
            }
            v
        };
        cosine_score(&embed(a), &embed(b))
    }
}

impl SimilarityProvider for LexicalSimilarity {
    fn name(&self) -> &str {
        "lexical"
    }

    fn similarities(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        Ok(pairs.iter().map(|(a, b)| self.score(a, b)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingServiceConfig {
    pub endpoint: String,
    pub token: Option<String>,
    /// Sentences per request.
    pub batch_size: usize,
    /// Requests allowed in flight at once.
    pub max_in_flight: usize,
    /// Extra attempts after the first failure of a request.
    pub retries: usize,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for EmbeddingServiceConfig {
    fn default() -> Self {
        EmbeddingServiceConfig {
            endpoint: String::new(),
            token: None,
            batch_size: 64,
            max_in_flight: 4,
            retries: 3,
            backoff_ms: 200,
            timeout_ms: 30_000,
        }
    }
}

impl EmbeddingServiceConfig {
    /// Endpoint and token from `SEMCOM_EMBEDDING_URL` / `SEMCOM_EMBEDDING_TOKEN`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty())?;
        Some(EmbeddingServiceConfig {
            endpoint,
            token: std::env::var(TOKEN_ENV).ok().filter(|s| !s.is_empty()),
            ..Self::default()
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Client for an HTTP embedding service: `POST {"texts": [..]}` returning
/// `{"embeddings": [[..], ..]}` in request order.
pub struct EmbeddingService {
    cfg: EmbeddingServiceConfig,
    agent: ureq::Agent,
}

impl EmbeddingService {
    pub fn new(cfg: EmbeddingServiceConfig) -> Result<Self> {
        if cfg.endpoint.is_empty() || cfg.batch_size == 0 || cfg.max_in_flight == 0 {
            return Err(Error::Config("embedding service needs an endpoint and positive batch/in-flight limits".into()));
        }
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(cfg.timeout_ms)).build();
        Ok(EmbeddingService { cfg, agent })
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(t) = &self.cfg.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = req
            .send_json(EmbedRequest { texts })
            .map_err(|e| Error::Data(format!("embedding service: {e}")))?;
        let body: EmbedResponse = resp
            .into_json()
            .map_err(|e| Error::Data(format!("embedding service returned malformed JSON: {e}")))?;
        if body.embeddings.len() != texts.len() {
            return Err(Error::Data(format!(
                "embedding service returned {} vectors for {} texts",
                body.embeddings.len(),
                texts.len()
            )));
        }
        Ok(body.embeddings)
    }

    fn request_with_retry(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut delay = self.cfg.backoff_ms;
        let mut attempt = 0;
        loop {
            match self.request(texts) {
                Ok(v) => return Ok(v),
                Err(e) if attempt >= self.cfg.retries => return Err(e),
                Err(e) => {
                    log::debug!("embedding request failed (attempt {}): {e}", attempt + 1);
                    std::thread::sleep(Duration::from_millis(delay));
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
            }
        }
    }

    /// Embeds all `texts`, `max_in_flight` requests at a time.
    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[&str]> = texts.chunks(self.cfg.batch_size).collect();
        let results: Vec<Mutex<Option<Result<Vec<Vec<f64>>>>>> = chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..self.cfg.max_in_flight.min(chunks.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = self.request_with_retry(chunks[i]);
                    let failed = r.is_err();
                    *results[i].lock().expect("result slot") = Some(r);
                    if failed {
                        next.store(chunks.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for slot in results {
            match slot.into_inner().expect("result slot") {
                Some(r) => out.extend(r?),
                None => return Err(Error::Data("embedding request abandoned after an earlier failure".into())),
            }
        }
        Ok(out)
    }
}

impl SimilarityProvider for EmbeddingService {
    fn name(&self) -> &str {
        "embedding-service"
    }

    fn similarities(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        let texts: Vec<&str> = pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
        let emb = self.embed(&texts)?;
        Ok(emb.chunks_exact(2).map(|p| cosine_score(&p[0], &p[1])).collect())
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    use super::*;

    #[test]
    fn lexical_scores() {
        let l = LexicalSimilarity;
        assert_eq!(l.score("the cat sat", "the cat sat"), 1.0);
        assert_eq!(l.score("a b", "c d"), 0.5);
        assert_eq!(l.score("a b c", "c a"), l.score("c a", "a b c"));
        assert_eq!(l.score("", ""), 1.0);
    }

    fn letter_embedding(s: &str) -> Vec<f64> {
        let mut v = vec![0.0; 26];
        for c in s.bytes().filter(u8::is_ascii_lowercase) {
            v[(c - b'a') as usize] += 1.0;
        }
        v
    }

    /// Minimal HTTP/1.1 server answering with letter-count embeddings. The
    /// first `fail_first` requests get a 503.
    fn mock_server(fail_first: usize) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let (status, payload) = if n < fail_first || !auth.ends_with("Bearer secret") {
                    ("503 Service Unavailable", "{}".to_string())
                } else {
                    let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    let embs: Vec<Vec<f64>> = req["texts"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|t| letter_embedding(t.as_str().unwrap()))
                        .collect();
                    ("200 OK", serde_json::json!({ "embeddings": embs }).to_string())
                };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            }
        });
        (format!("http://{addr}/embed"), hits)
    }

    fn service(endpoint: String) -> EmbeddingService {
        EmbeddingService::new(EmbeddingServiceConfig {
            endpoint,
            token: Some("secret".into()),
            batch_size: 3,
            max_in_flight: 2,
            retries: 2,
            backoff_ms: 1,
            timeout_ms: 5_000,
        })
        .unwrap()
    }

    #[test]
    fn service_scores_pairs_in_order() {
        let (url, hits) = mock_server(0);
        let svc = service(url);
        let pairs: Vec<(String, String)> = vec![
            ("abc".into(), "abc".into()),
            ("aaa".into(), "bbb".into()),
            ("ab".into(), "ba".into()),
            ("xyz".into(), "xy".into()),
        ];
        let got = svc.similarities(&pairs).unwrap();
        assert_eq!(got.len(), 4);
        assert!((got[0] - 1.0).abs() < 1e-12);
        assert!((got[1] - 0.5).abs() < 1e-12);
        assert!((got[2] - 1.0).abs() < 1e-12);
        let want = cosine_score(&letter_embedding("xyz"), &letter_embedding("xy"));
        assert!((got[3] - want).abs() < 1e-12);
        // 8 texts in batches of 3
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn transient_failures_are_retried() {
        let (url, hits) = mock_server(2);
        let svc = service(url);
        let got = svc.similarities(&[("ab".into(), "ab".into())]).unwrap();
        assert!((got[0] - 1.0).abs() < 1e-12);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn unreachable_service_is_an_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let svc = service(format!("http://{addr}/embed"));
        assert!(svc.similarities(&[("a".into(), "b".into())]).is_err());
    }
}
