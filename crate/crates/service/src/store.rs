use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use log::{info, warn};
use modelsel_core::data::{load_predictions_path, ClassNames};
use modelsel_core::PredictionMatrix;
use serde::Deserialize;

use crate::error::ServiceError;
use crate::session::{Session, Transcript};

/// A prediction matrix served for labeling, with optional per-example
/// display references and class names.
#[derive(Debug, Clone)]
pub struct Collection {
    pub id: String,
    pub matrix: PredictionMatrix,
    pub display: Option<Vec<Option<String>>>,
    pub class_names: Option<ClassNames>,
}

/// Where to find one collection on disk.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionSource {
    pub id: String,
    pub predictions: PathBuf,
    #[serde(default)]
    pub display: Option<PathBuf>,
    #[serde(default)]
    pub class_names: Option<PathBuf>,
}

impl Collection {
    pub fn new(id: impl Into<String>, matrix: PredictionMatrix) -> Self {
        Self {
            id: id.into(),
            matrix,
            display: None,
            class_names: None,
        }
    }

    pub fn load(source: &CollectionSource) -> modelsel_core::Result<Self> {
        let matrix = load_predictions_path(&source.predictions)?;
        let display = match &source.display {
            Some(path) => Some(load_display(&matrix, fs::File::open(path)?)?),
            None => None,
        };
        let class_names = match &source.class_names {
            Some(path) => Some(ClassNames::load(fs::File::open(path)?, matrix.num_classes())?),
            None => None,
        };
        Ok(Self {
            id: source.id.clone(),
            matrix,
            display,
            class_names,
        })
    }

    pub fn class_name(&self, class: u32) -> String {
        self.class_names
            .as_ref()
            .and_then(|n| n.name(class))
            .map(str::to_owned)
            .unwrap_or_else(|| class.to_string())
    }

    pub fn display(&self, example: usize) -> Option<&str> {
        self.display.as_ref()?.get(example)?.as_deref()
    }
}

/// Reads an `example_id,display` sidecar. Examples without a row get no
/// display reference.
pub fn load_display(matrix: &PredictionMatrix, source: impl std::io::Read) -> modelsel_core::Result<Vec<Option<String>>> {
    let index: HashMap<&str, usize> = matrix
        .example_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut out = vec![None; matrix.num_examples()];
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    for record in reader.records() {
        let record = record?;
        let id = record.get(0).unwrap_or("").trim();
        let i = *index
            .get(id)
            .ok_or_else(|| modelsel_core::Error::Invalid(format!("display sidecar names unknown example {id:?}")))?;
        out[i] = record.get(1).map(str::to_owned);
    }
    Ok(out)
}

type SessionHandle = Arc<Mutex<Session>>;

/// Shared service state: the served collections and the live sessions.
#[derive(Debug)]
pub struct AppState {
    collections: BTreeMap<String, Arc<Collection>>,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    checkpoint_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(collections: Vec<Collection>, checkpoint_dir: Option<PathBuf>) -> Self {
        Self {
            collections: collections.into_iter().map(|c| (c.id.clone(), Arc::new(c))).collect(),
            sessions: RwLock::new(HashMap::new()),
            checkpoint_dir,
        }
    }

    /// Like `new`, then resumes every session checkpointed in the
    /// checkpoint directory. Returns the number of restored sessions.
    pub fn restore(collections: Vec<Collection>, checkpoint_dir: PathBuf) -> std::io::Result<(Self, usize)> {
        fs::create_dir_all(&checkpoint_dir)?;
        let state = Self::new(collections, Some(checkpoint_dir.clone()));
        let mut restored = 0;
        for entry in fs::read_dir(&checkpoint_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            match state.restore_one(&path) {
                Ok(()) => restored += 1,
                Err(e) => warn!("skipping checkpoint {}: {e}", path.display()),
            }
        }
        info!("restored {restored} sessions from {}", checkpoint_dir.display());
        Ok((state, restored))
    }

    fn restore_one(&self, path: &Path) -> Result<(), ServiceError> {
        let bytes = fs::read(path).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let transcript: Transcript = serde_json::from_slice(&bytes).map_err(|e| ServiceError::invalid(e.to_string()))?;
        let collection = self.collection(&transcript.collection)?;
        let session = Session::replay(&collection.matrix, transcript)?;
        self.insert(session);
        Ok(())
    }

    pub fn collection(&self, id: &str) -> Result<Arc<Collection>, ServiceError> {
        self.collections
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownCollection(id.to_owned()))
    }

    pub fn collection_ids(&self) -> Vec<String> {
        self.collections.keys().cloned().collect()
    }

    pub fn session(&self, id: &str) -> Result<SessionHandle, ServiceError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn insert(&self, session: Session) -> SessionHandle {
        let id = session.id().to_owned();
        let handle = Arc::new(Mutex::new(session));
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, handle.clone());
        handle
    }

    /// Writes the session's transcript atomically (temp file, then rename).
    pub fn checkpoint(&self, session: &Session) -> Result<(), ServiceError> {
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(());
        };
        let io = |e: std::io::Error| ServiceError::Internal(format!("checkpoint failed: {e}"));
        fs::create_dir_all(dir).map_err(io)?;
        let path = dir.join(format!("{}.json", session.id()));
        let tmp = dir.join(format!(".{}.json.tmp", session.id()));
        let body = serde_json::to_vec_pretty(session.transcript()).map_err(|e| ServiceError::Internal(e.to_string()))?;
        fs::write(&tmp, body).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    pub fn checkpoint_all(&self) -> Result<usize, ServiceError> {
        let handles: Vec<SessionHandle> = self.sessions.read().expect("session map poisoned").values().cloned().collect();
        for handle in &handles {
            self.checkpoint(&handle.lock().expect("session poisoned"))?;
        }
        Ok(handles.len())
    }

    pub fn checkpoint_dir(&self) -> Option<&Path> {
        self.checkpoint_dir.as_deref()
    }
}
