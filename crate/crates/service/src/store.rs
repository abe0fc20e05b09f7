//! Screening sessions and their append-only JSON-lines log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use ssd_core::dataset::{ErrorCategory, Sex};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("session log {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("unknown session {0}")]
    UnknownSession(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub age: u32,
    pub sex: Sex,
    pub vocal_organs_normal: bool,
    pub consent: bool,
    /// Keep uploaded recordings after prediction.
    #[serde(default)]
    pub donate_recordings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbability {
    pub class: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseResponse {
    pub phrase_id: String,
    pub probabilities: Vec<ClassProbability>,
    pub label: String,
    /// Error category the prediction indicates, if any.
    pub category: Option<ErrorCategory>,
    pub latency_ms: f64,
    pub model_hash: String,
    pub audio_retained: bool,
}

impl PhraseResponse {
    pub fn label_probability(&self) -> f64 {
        self.probabilities
            .iter()
            .find(|c| c.class == self.label)
            .map_or(0.0, |c| c.probability)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSession {
    pub session_id: String,
    pub questionnaire: Questionnaire,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub responses: BTreeMap<String, PhraseResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: ErrorCategory,
    pub flagged: usize,
    /// Mean probability of the flagged predictions; `None` when none flagged.
    pub mean_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseRow {
    pub phrase_id: String,
    pub label: String,
    pub probability: f64,
    pub category: Option<ErrorCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub answered: usize,
    pub categories: Vec<CategorySummary>,
    pub phrases: Vec<PhraseRow>,
}

impl ScreeningSession {
    pub fn report(&self) -> SessionReport {
        let categories = ErrorCategory::ALL
            .iter()
            .map(|&category| {
                let hits: Vec<f64> = self
                    .responses
                    .values()
                    .filter(|r| r.category == Some(category))
                    .map(PhraseResponse::label_probability)
                    .collect();
                CategorySummary {
                    category,
                    flagged: hits.len(),
                    mean_probability: (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64),
                }
            })
            .collect();
        SessionReport {
            session_id: self.session_id.clone(),
            answered: self.responses.len(),
            categories,
            phrases: self
                .responses
                .values()
                .map(|r| PhraseRow {
                    phrase_id: r.phrase_id.clone(),
                    label: r.label.clone(),
                    probability: r.label_probability(),
                    category: r.category,
                })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    SessionCreated { session: ScreeningSession },
    Response { session_id: String, response: PhraseResponse },
}

struct Inner {
    log: Option<File>,
    sessions: HashMap<String, ScreeningSession>,
}

/// Sessions in memory, mirrored to an append-only log when backed by a file.
/// All mutations go through one lock, so updates to a session are
/// linearizable.
pub struct SessionStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner {
                log: None,
                sessions: HashMap::new(),
            }),
        }
    }

    /// Opens (creating if needed) the log at `path` and replays it.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut sessions = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                };
                match serde_json::from_str::<Event>(&line) {
                    Ok(Event::SessionCreated { session }) => {
                        sessions.insert(session.session_id.clone(), session);
                    }
                    Ok(Event::Response { session_id, response }) => {
                        let s = sessions
                            .get_mut(&session_id)
                            .ok_or_else(|| corrupt(format!("response for unknown session {session_id}")))?;
                        s.responses.insert(response.phrase_id.clone(), response);
                    }
                    // a torn final line is the in-flight write of a crash
                    Err(e) if e.is_eof() => log::warn!("{}: dropping torn line {}", path.display(), i + 1),
                    Err(e) => return Err(corrupt(e.to_string())),
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                log: Some(log),
                sessions,
            }),
        })
    }

    fn append(&self, inner: &mut Inner, event: &Event) -> Result<(), StoreError> {
        if let (Some(f), Some(path)) = (inner.log.as_mut(), &self.path) {
            let mut line = serde_json::to_vec(event).expect("events serialize");
            line.push(b'\n');
            f.write_all(&line).and_then(|_| f.flush()).map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
        }
        Ok(())
    }

    pub fn create(&self, questionnaire: Questionnaire) -> Result<ScreeningSession, StoreError> {
        let session = ScreeningSession {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            questionnaire,
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            responses: BTreeMap::new(),
        };
        let mut inner = self.inner.lock().expect("store lock poisoned");
        self.append(
            &mut inner,
            &Event::SessionCreated {
                session: session.clone(),
            },
        )?;
        inner.sessions.insert(session.session_id.clone(), session.clone());
        Ok(session)
    }

    pub fn get(&self, session_id: &str) -> Option<ScreeningSession> {
        self.inner.lock().expect("store lock poisoned").sessions.get(session_id).cloned()
    }

    /// Stores `response`, replacing any earlier one for the same phrase.
    pub fn record(&self, session_id: &str, response: PhraseResponse) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().expect("store lock poisoned");
        if !inner.sessions.contains_key(session_id) {
            return Err(StoreError::UnknownSession(session_id.to_string()));
        }
        self.append(
            &mut inner,
            &Event::Response {
                session_id: session_id.to_string(),
                response: response.clone(),
            },
        )?;
        let s = inner.sessions.get_mut(session_id).expect("checked above");
        s.responses.insert(response.phrase_id.clone(), response);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock poisoned").sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
