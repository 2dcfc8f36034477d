//! Preliminary high/low labels for feature vectors: a chat-completion LLM
//! client, a deterministic threshold rule, and an operator review pass.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::classify::{Label, LabelSource};
use crate::features::FeatureVector;

pub const API_KEY_ENV: &str = "FLAREWATCH_LLM_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4";

/// Rule thresholds sit midway between the closest high and low reference rows.
pub const RULE_MAX_RATIO: f64 = 0.36;
pub const RULE_MIN_RGB_INDEX: f64 = 0.40;

const SYSTEM_PROMPT: &str =
    "You are an expert in industrial flare stack combustion. Classify combustion efficiency.";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no API key: set {API_KEY_ENV}")]
    MissingKey,
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16, transcript: Box<Transcript> },
    #[error("request rejected (HTTP {status})")]
    Rejected { status: u16, transcript: Box<Transcript> },
    #[error("service unavailable after {attempts} attempt(s): {last_error}")]
    Unavailable {
        attempts: usize,
        last_error: String,
        transcript: Box<Transcript>,
    },
    #[error("reply contains neither \"high\" nor \"low\"")]
    UnparseableReply { transcript: Box<Transcript> },
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
}

impl LlmError {
    pub fn transcript(&self) -> Option<&Transcript> {
        match self {
            LlmError::Auth { transcript, .. }
            | LlmError::Rejected { transcript, .. }
            | LlmError::Unavailable { transcript, .. }
            | LlmError::UnparseableReply { transcript } => Some(transcript),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmClientConfig {
    pub endpoint: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub model: String,
    /// Per-attempt timeout.
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_concurrent_requests: usize,
    /// First retry delay; doubles per retry.
    pub backoff_base: Duration,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            api_key: None,
            model: DEFAULT_MODEL.to_string(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            max_concurrent_requests: 4,
            backoff_base: Duration::from_millis(500),
        }
    }
}

impl LlmClientConfig {
    /// Default config with the key taken from [`API_KEY_ENV`].
    pub fn from_env() -> Self {
        Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout.is_zero() {
            return Err(LlmError::InvalidConfig("timeout must be positive".into()));
        }
        if self.max_concurrent_requests == 0 {
            return Err(LlmError::InvalidConfig(
                "max_concurrent_requests must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Upper bound on wall time spent on one sample, retries included.
    pub fn deadline(&self) -> Duration {
        self.timeout * (self.max_retries + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub status: Option<u16>,
    pub body: Option<String>,
    pub error: Option<String>,
}

/// Audit record of one labeling exchange.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt: String,
    pub request: serde_json::Value,
    pub attempts: Vec<Attempt>,
    pub reply: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub features: FeatureVector,
    pub prompt_text: String,
}

impl LabelRequest {
    pub fn new(features: FeatureVector) -> Self {
        Self {
            prompt_text: build_prompt(&features),
            features,
        }
    }
}

/// Deterministic prompt naming all three features with their units.
pub fn build_prompt(f: &FeatureVector) -> String {
    format!(
        "A flare stack flame was measured from video with three visual features:\n\
         - smoke/flame area ratio: {} (dimensionless; segmented smoke pixels divided by flame pixels)\n\
         - RGB efficiency index E: {} (dimensionless; weighted blue/yellow/red proportion, higher is bluer)\n\
         - flame angle: {} degrees (tilt of the flame axis from vertical)\n\
         Is the combustion efficiency of this flame high or low? \
         Answer with exactly one word: \"high\" or \"low\".",
        f.smoke_flame_ratio, f.rgb_index, f.flame_angle
    )
}

/// Finds the label in a free-text reply: case-insensitive substring search,
/// and when both words occur the later one wins.
pub fn parse_label(reply: &str) -> Option<Label> {
    let lower = reply.to_lowercase();
    match (lower.rfind("high"), lower.rfind("low")) {
        (Some(h), Some(l)) => Some(if h > l { Label::High } else { Label::Low }),
        (Some(_), None) => Some(Label::High),
        (None, Some(_)) => Some(Label::Low),
        (None, None) => None,
    }
}

/// High iff the ratio is at most [`RULE_MAX_RATIO`] and E is at least
/// [`RULE_MIN_RGB_INDEX`].
pub fn rule_label(f: &FeatureVector) -> Label {
    if f.smoke_flame_ratio <= RULE_MAX_RATIO && f.rgb_index >= RULE_MIN_RGB_INDEX {
        Label::High
    } else {
        Label::Low
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmLabel {
    pub label: Label,
    pub transcript: Transcript,
}

fn request_body(cfg: &LlmClientConfig, prompt: &str) -> serde_json::Value {
    json!({
        "model": cfg.model,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": prompt},
        ],
    })
}

fn reply_text(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    v.pointer("/choices/0/message/content")?
        .as_str()
        .map(str::to_string)
}

pub fn http_client() -> Result<reqwest::blocking::Client, LlmError> {
    reqwest::blocking::Client::builder()
        .build()
        .map_err(|e| LlmError::InvalidConfig(e.to_string()))
}

/// Asks the chat-completion endpoint for a label, retrying transient
/// failures (connection errors, timeouts, 429, 5xx) with exponential backoff
/// inside an overall budget of `timeout × (max_retries + 1)`.
pub fn llm_label(cfg: &LlmClientConfig, f: &FeatureVector) -> Result<LlmLabel, LlmError> {
    llm_label_with(&http_client()?, cfg, f)
}

pub fn llm_label_with(
    client: &reqwest::blocking::Client,
    cfg: &LlmClientConfig,
    f: &FeatureVector,
) -> Result<LlmLabel, LlmError> {
    cfg.validate()?;
    let key = cfg.api_key.as_deref().ok_or(LlmError::MissingKey)?;
    let prompt = build_prompt(f);
    let body = request_body(cfg, &prompt);
    let mut transcript = Transcript {
        prompt,
        request: body.clone(),
        ..Default::default()
    };
    let start = Instant::now();
    let deadline = cfg.deadline();
    let mut last_error = String::from("no attempt made");

    for attempt in 0..=cfg.max_retries {
        let remaining = deadline.saturating_sub(start.elapsed());
        if remaining.is_zero() {
            break;
        }
        let result = client
            .post(&cfg.endpoint)
            .bearer_auth(key)
            .timeout(cfg.timeout.min(remaining))
            .json(&body)
            .send()
            .and_then(|r| {
                let status = r.status().as_u16();
                r.text().map(|t| (status, t))
            });
        match result {
            Ok((status, text)) => {
                transcript.attempts.push(Attempt {
                    status: Some(status),
                    body: Some(text.clone()),
                    error: None,
                });
                match status {
                    200..=299 => {
                        let reply = reply_text(&text);
                        transcript.reply = reply.clone();
                        return match reply.as_deref().and_then(parse_label) {
                            Some(label) => Ok(LlmLabel { label, transcript }),
                            None => Err(LlmError::UnparseableReply {
                                transcript: Box::new(transcript),
                            }),
                        };
                    }
                    401 | 403 => {
                        return Err(LlmError::Auth {
                            status,
                            transcript: Box::new(transcript),
                        })
                    }
                    429 | 500..=599 => last_error = format!("HTTP {status}"),
                    _ => {
                        return Err(LlmError::Rejected {
                            status,
                            transcript: Box::new(transcript),
                        })
                    }
                }
            }
            Err(e) => {
                last_error = e.to_string();
                transcript.attempts.push(Attempt {
                    status: None,
                    body: None,
                    error: Some(last_error.clone()),
                });
            }
        }
        if attempt < cfg.max_retries {
            let backoff = cfg.backoff_base.saturating_mul(1u32 << attempt.min(16));
            let remaining = deadline.saturating_sub(start.elapsed());
            std::thread::sleep(backoff.min(remaining));
        }
    }
    Err(LlmError::Unavailable {
        attempts: transcript.attempts.len(),
        last_error,
        transcript: Box::new(transcript),
    })
}

/// Labels many samples with at most `max_concurrent_requests` calls in flight.
/// Results keep input order.
pub fn llm_label_batch(
    cfg: &LlmClientConfig,
    features: &[FeatureVector],
) -> Result<Vec<Result<LlmLabel, LlmError>>, LlmError> {
    cfg.validate()?;
    let client = http_client()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<LlmLabel, LlmError>>>> =
        Mutex::new((0..features.len()).map(|_| None).collect());
    let workers = cfg.max_concurrent_requests.min(features.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= features.len() {
                    break;
                }
                let r = llm_label_with(&client, cfg, &features[i]);
                results.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    Ok(results
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect())
}

/// One labeled feature vector as stored in label files (one JSON per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    pub features: FeatureVector,
    pub label: Label,
    pub source: LabelSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

pub fn write_label_records<W: Write>(out: &mut W, records: &[LabelRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_label_records<R: BufRead>(input: R) -> Result<Vec<LabelRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// A sample awaiting review. `label` is `None` when no preliminary label could
/// be obtained (for example an unparseable LLM reply).
#[derive(Debug, Clone, PartialEq)]
pub struct PendingLabel {
    pub frame: Option<u64>,
    pub track_id: Option<u64>,
    pub features: FeatureVector,
    pub label: Option<Label>,
    pub source: LabelSource,
    pub transcript: Option<String>,
}

impl PendingLabel {
    fn into_record(self, label: Label, source: LabelSource) -> LabelRecord {
        LabelRecord {
            frame: self.frame,
            track_id: self.track_id,
            features: self.features,
            label,
            source,
            transcript: self.transcript,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReviewOutcome {
    pub records: Vec<LabelRecord>,
    /// Samples left without any label (skipped while unlabeled).
    pub unlabeled: usize,
}

/// Sequential confirm/flip/skip pass over preliminary labels.
///
/// Keys: `c` confirm, `f` flip, `h`/`l` set high/low, `s` skip. Confirmed,
/// flipped and set labels are recorded as human; skipped ones keep their
/// source. With `accept_all` nothing is read and labels pass through. End of
/// input skips the remaining samples.
pub fn review<R: BufRead, W: Write>(
    samples: Vec<PendingLabel>,
    accept_all: bool,
    mut input: R,
    mut output: W,
) -> std::io::Result<ReviewOutcome> {
    let mut outcome = ReviewOutcome::default();
    let total = samples.len();
    let mut eof = accept_all;
    for (i, s) in samples.into_iter().enumerate() {
        let decision = if eof {
            'k'
        } else {
            let prelim = s.label.map_or("none", |l| l.as_str());
            loop {
                write!(
                    output,
                    "[{}/{}] ratio={} E={} angle={} deg  preliminary={} ({:?})  [c]onfirm [f]lip [h]igh [l]ow [s]kip: ",
                    i + 1,
                    total,
                    s.features.smoke_flame_ratio,
                    s.features.rgb_index,
                    s.features.flame_angle,
                    prelim,
                    s.source
                )?;
                output.flush()?;
                let mut line = String::new();
                if input.read_line(&mut line)? == 0 {
                    eof = true;
                    break 'k';
                }
                match line.trim().to_ascii_lowercase().chars().next() {
                    Some(c @ ('c' | 'f')) if s.label.is_some() => break c,
                    Some(c @ ('h' | 'l' | 's')) => break c,
                    _ => writeln!(output, "unrecognized choice")?,
                }
            }
        };
        match (decision, s.label) {
            ('c', Some(l)) => outcome.records.push(s.into_record(l, LabelSource::Human)),
            ('f', Some(l)) => outcome
                .records
                .push(s.into_record(l.flipped(), LabelSource::Human)),
            ('h', _) => outcome
                .records
                .push(s.into_record(Label::High, LabelSource::Human)),
            ('l', _) => outcome
                .records
                .push(s.into_record(Label::Low, LabelSource::Human)),
            (_, Some(l)) => {
                let source = s.source;
                outcome.records.push(s.into_record(l, source));
            }
            (_, None) => outcome.unlabeled += 1,
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    pub(crate) const TABLE1: [(f64, f64, f64, Label); 9] = [
        (0.22, 0.62, 52.0, Label::High),
        (0.14, 0.56, 43.0, Label::High),
        (0.32, 0.42, 23.0, Label::High),
        (0.40, 0.36, 31.0, Label::Low),
        (0.24, 0.51, 72.0, Label::High),
        (0.51, 0.31, 34.0, Label::Low),
        (0.62, 0.24, 25.0, Label::Low),
        (1.72, 0.21, 19.0, Label::Low),
        (2.42, 0.15, 12.0, Label::Low),
    ];

    #[test]
    fn prompt_contains_values_verbatim() {
        let p = build_prompt(&FeatureVector::new(0.22, 0.62, 52.0));
        for needle in ["0.22", "0.62", "52 degrees", "\"high\"", "\"low\""] {
            assert!(p.contains(needle), "missing {needle}");
        }
        assert_eq!(p, build_prompt(&FeatureVector::new(0.22, 0.62, 52.0)));
        assert!(build_prompt(&FeatureVector::new(0.1, 0.5, 0.0)).contains("angle: 0 degrees"));
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_label("high"), Some(Label::High));
        assert_eq!(parse_label("The combustion efficiency is LOW."), Some(Label::Low));
        assert_eq!(parse_label("unsure"), None);
        assert_eq!(parse_label("not high, rather low"), Some(Label::Low));
        assert_eq!(parse_label("low? no: High"), Some(Label::High));
    }

    #[test]
    fn rule_reproduces_reference_rows() {
        for (ratio, e, angle, label) in TABLE1 {
            assert_eq!(rule_label(&FeatureVector::new(ratio, e, angle)), label);
        }
    }

    #[test]
    fn missing_key() {
        let cfg = LlmClientConfig::default();
        assert!(matches!(
            llm_label(&cfg, &FeatureVector::new(0.1, 0.5, 3.0)),
            Err(LlmError::MissingKey)
        ));
    }

    fn pending(labels: &[Option<Label>]) -> Vec<PendingLabel> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| PendingLabel {
                frame: Some(i as u64),
                track_id: Some(1),
                features: FeatureVector::new(0.1 * i as f64, 0.5, 10.0),
                label: *l,
                source: LabelSource::Rule,
                transcript: None,
            })
            .collect()
    }

    #[test]
    fn review_confirm_all() {
        let s = pending(&[Some(Label::High), Some(Label::Low)]);
        let out = review(s, false, Cursor::new("c\nc\n"), Vec::new()).unwrap();
        assert_eq!(out.records.iter().map(|r| r.label).collect::<Vec<_>>(), [Label::High, Label::Low]);
        assert!(out.records.iter().all(|r| r.source == LabelSource::Human));
    }

    #[test]
    fn review_one_flip_and_skip() {
        let s = pending(&[Some(Label::High), Some(Label::Low), Some(Label::Low)]);
        let out = review(s, false, Cursor::new("c\nbogus\nf\ns\n"), Vec::new()).unwrap();
        let labels: Vec<_> = out.records.iter().map(|r| r.label).collect();
        assert_eq!(labels, [Label::High, Label::High, Label::Low]);
        assert_eq!(out.records[2].source, LabelSource::Rule);
    }

    #[test]
    fn review_accept_all_passthrough() {
        let s = pending(&[Some(Label::High), None, Some(Label::Low)]);
        let out = review(s, true, Cursor::new(""), Vec::new()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.unlabeled, 1);
        assert!(out.records.iter().all(|r| r.source == LabelSource::Rule));
    }

    #[test]
    fn review_assigns_unlabeled() {
        let s = pending(&[None]);
        let out = review(s, false, Cursor::new("f\nl\n"), Vec::new()).unwrap();
        assert_eq!(out.records[0].label, Label::Low);
        assert_eq!(out.records[0].source, LabelSource::Human);
    }

    #[test]
    fn label_records_roundtrip() {
        let recs = vec![LabelRecord {
            frame: Some(3),
            track_id: None,
            features: FeatureVector::new(0.22, 0.62, 52.0),
            label: Label::High,
            source: LabelSource::Llm,
            transcript: Some("t/00001.json".into()),
        }];
        let mut buf = Vec::new();
        write_label_records(&mut buf, &recs).unwrap();
        assert_eq!(read_label_records(Cursor::new(buf)).unwrap(), recs);
    }
}
