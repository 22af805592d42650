use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use spancode_core::inference::{predict, predict_with_evidence, InferenceError, InferenceOptions};
use spancode_core::llm::Gateway;
use spancode_core::metrics::{code_set_metrics, match_evidence_local, EvalReport, MacroUniverse};
use spancode_core::{AnnotatedDocument, Code, CodeHierarchy, EvidenceAnnotation};

use crate::store::{apply_event, load_documents, Event, EventLog, ReviewSession, Revision, RevisionMode, EVENTS_FILE};
use crate::ReviewError;

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

fn wall_clock_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Clone)]
pub struct ServiceOptions {
    pub inference: InferenceOptions,
    /// Similarity threshold for the local evidence matcher used by the report.
    pub threshold: f64,
    pub universe: MacroUniverse,
    pub clock: Clock,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            inference: InferenceOptions::default(),
            threshold: 0.5,
            universe: MacroUniverse::Observed,
            clock: Arc::new(wall_clock_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionView {
    pub index: usize,
    pub sha256: String,
    #[serde(flatten)]
    pub revision: Revision,
}

impl RevisionView {
    fn new(index: usize, revision: &Revision) -> Self {
        Self {
            index,
            sha256: revision.digest(),
            revision: revision.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub id: String,
    pub gold_codes: usize,
    pub gold_evidence: usize,
    pub revisions: usize,
    pub current: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gold {
    pub codes: Vec<Code>,
    pub evidence: Vec<EvidenceAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentView {
    pub id: String,
    pub text: String,
    pub gold: Gold,
    pub revisions: Vec<RevisionView>,
    pub current: Option<usize>,
    /// Long descriptions for every known code in gold or any revision.
    pub descriptions: BTreeMap<Code, String>,
}

/// Shared state behind the REST handlers.
///
/// Each document has its own async lock so a slow model call only blocks
/// later writes to the same document. The event log append and the in-memory
/// update happen together under the session lock, so the log order is the
/// apply order and the report always sees a consistent snapshot.
pub struct ReviewService {
    documents: BTreeMap<String, AnnotatedDocument>,
    hierarchy: Arc<CodeHierarchy>,
    gateway: Arc<Gateway>,
    options: ServiceOptions,
    sessions: RwLock<BTreeMap<String, ReviewSession>>,
    writers: BTreeMap<String, tokio::sync::Mutex<()>>,
    log: Mutex<EventLog>,
}

impl ReviewService {
    /// Loads `documents/` under `data_dir` and replays `events.jsonl`.
    pub fn open(
        data_dir: impl AsRef<Path>,
        hierarchy: Arc<CodeHierarchy>,
        gateway: Arc<Gateway>,
        options: ServiceOptions,
    ) -> Result<Self, ReviewError> {
        let data_dir = data_dir.as_ref();
        let documents = load_documents(data_dir)?;
        let mut sessions: BTreeMap<String, ReviewSession> =
            documents.keys().map(|id| (id.clone(), ReviewSession::new(id.clone()))).collect();
        let (log, events) = EventLog::open(data_dir.join(EVENTS_FILE))?;
        for (idx, event) in events.iter().enumerate() {
            apply_event(&mut sessions, event).map_err(|reason| ReviewError::Log { line: idx + 1, reason })?;
        }
        tracing::info!(documents = documents.len(), events = events.len(), "review state replayed");
        let writers = documents.keys().map(|id| (id.clone(), tokio::sync::Mutex::new(()))).collect();
        Ok(Self {
            documents,
            hierarchy,
            gateway,
            options,
            sessions: RwLock::new(sessions),
            writers,
            log: Mutex::new(log),
        })
    }

    fn document_ref(&self, id: &str) -> Result<&AnnotatedDocument, ReviewError> {
        self.documents.get(id).ok_or_else(|| ReviewError::NotFound(id.to_string()))
    }

    pub fn list(&self) -> Vec<DocumentSummary> {
        let sessions = self.sessions.read().expect("session lock");
        self.documents
            .values()
            .map(|d| {
                let s = &sessions[&d.id];
                DocumentSummary {
                    id: d.id.clone(),
                    gold_codes: d.codes.len(),
                    gold_evidence: d.evidence.len(),
                    revisions: s.revisions.len(),
                    current: s.current,
                }
            })
            .collect()
    }

    pub fn document(&self, id: &str) -> Result<DocumentView, ReviewError> {
        let doc = self.document_ref(id)?;
        let session = self.session(id)?;
        let mut descriptions = BTreeMap::new();
        let mentioned = doc.codes.iter().chain(session.revisions.iter().flat_map(|r| &r.codes));
        for code in mentioned {
            if let Some(desc) = self.hierarchy.long_description(code.as_str()) {
                descriptions.insert(code.clone(), desc.to_string());
            }
        }
        Ok(DocumentView {
            id: doc.id.clone(),
            text: doc.text.clone(),
            gold: Gold {
                codes: doc.codes.clone(),
                evidence: doc.evidence.clone(),
            },
            revisions: session.revisions.iter().enumerate().map(|(i, r)| RevisionView::new(i, r)).collect(),
            current: session.current,
            descriptions,
        })
    }

    pub fn session(&self, id: &str) -> Result<ReviewSession, ReviewError> {
        self.sessions
            .read()
            .expect("session lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ReviewError::NotFound(id.to_string()))
    }

    /// Standard-mode prediction, appended as a `model` revision.
    pub async fn predict(&self, id: &str) -> Result<RevisionView, ReviewError> {
        let doc = self.document_ref(id)?;
        let _writer = self.writers[id].lock().await;
        let (text, hierarchy, gateway, options) =
            (doc.text.clone(), self.hierarchy.clone(), self.gateway.clone(), self.options.inference.clone());
        let result = tokio::task::spawn_blocking(move || predict(&text, &hierarchy, &gateway, &options))
            .await
            .expect("prediction task")?;
        self.append(id, Revision::from_prediction(result, RevisionMode::Model, (self.options.clock)()))
    }

    /// "+ Evid." re-coding with reviewer evidence, appended as a
    /// `human_evid` revision whose evidence is exactly `evidence`.
    pub async fn recode(&self, id: &str, evidence: Vec<String>) -> Result<RevisionView, ReviewError> {
        let doc = self.document_ref(id)?;
        if evidence.is_empty() {
            return Err(ReviewError::Validation("evidence list is empty".into()));
        }
        if let Some(i) = evidence.iter().position(|s| s.trim().is_empty()) {
            return Err(ReviewError::Validation(format!("evidence span {i} is blank")));
        }
        let _writer = self.writers[id].lock().await;
        let (text, hierarchy, gateway, options) =
            (doc.text.clone(), self.hierarchy.clone(), self.gateway.clone(), self.options.inference.clone());
        let spans = evidence.clone();
        let result =
            tokio::task::spawn_blocking(move || predict_with_evidence(&text, &spans, &hierarchy, &gateway, &options))
                .await
                .expect("recode task")?;
        debug_assert_eq!(result.evidence, evidence);
        self.append(id, Revision::from_prediction(result, RevisionMode::HumanEvid, (self.options.clock)()))
    }

    pub async fn set_current(&self, id: &str, revision: usize) -> Result<ReviewSession, ReviewError> {
        self.document_ref(id)?;
        let _writer = self.writers[id].lock().await;
        let event = Event::CurrentSet {
            doc_id: id.to_string(),
            revision,
        };
        let mut sessions = self.sessions.write().expect("session lock");
        let count = sessions[id].revisions.len();
        if revision >= count {
            return Err(ReviewError::Validation(format!(
                "revision {revision} does not exist ({count} revisions)"
            )));
        }
        self.commit(&mut sessions, &event)?;
        Ok(sessions[id].clone())
    }

    fn append(&self, id: &str, revision: Revision) -> Result<RevisionView, ReviewError> {
        let event = Event::RevisionAppended {
            doc_id: id.to_string(),
            revision,
        };
        let mut sessions = self.sessions.write().expect("session lock");
        self.commit(&mut sessions, &event)?;
        let s = &sessions[id];
        let index = s.revisions.len() - 1;
        Ok(RevisionView::new(index, &s.revisions[index]))
    }

    /// Log first, then memory: a failed write leaves both untouched.
    fn commit(&self, sessions: &mut BTreeMap<String, ReviewSession>, event: &Event) -> Result<(), ReviewError> {
        self.log.lock().expect("log lock").append(event)?;
        apply_event(sessions, event).expect("event validated before logging");
        Ok(())
    }

    /// Scores each document's current revision against its gold labels.
    ///
    /// Documents without gold codes or without any revision are skipped;
    /// evidence is scored only where gold evidence exists.
    pub fn report(&self) -> Result<EvalReport, ReviewError> {
        if self.documents.is_empty() {
            return Err(ReviewError::Validation("no documents loaded".into()));
        }
        if self.documents.values().all(|d| d.codes.is_empty()) {
            return Err(ReviewError::Validation("no document has gold codes".into()));
        }
        let sessions = self.sessions.read().expect("session lock");
        let mut code_pairs = Vec::new();
        let mut evidence = Vec::new();
        for doc in self.documents.values().filter(|d| !d.codes.is_empty()) {
            let Some(current) = sessions[&doc.id].current_revision() else {
                continue;
            };
            let gold: BTreeSet<Code> = doc.codes.iter().cloned().collect();
            code_pairs.push((gold, current.codes.iter().cloned().collect()));
            if !doc.evidence.is_empty() {
                evidence.push(match_evidence_local(&current.evidence, &doc.evidence_texts(), self.options.threshold));
            }
        }
        Ok(EvalReport::new(code_set_metrics(&code_pairs, self.options.universe), &evidence))
    }
}

impl From<InferenceError> for ReviewError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Gateway(g) => ReviewError::Gateway(g.to_string()),
            other => ReviewError::Validation(other.to_string()),
        }
    }
}
