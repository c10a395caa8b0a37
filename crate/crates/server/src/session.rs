use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use choroid_core::gpet::TraceResult;
use choroid_core::{io, BScan, RegionMask, VesselMask};
use serde::Serialize;
use tokio::sync::Mutex;

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Serialize)]
pub struct AuditEntry {
    pub seq: usize,
    pub op: &'static str,
    pub detail: serde_json::Value,
}

pub struct Session {
    pub id: String,
    pub scan: BScan,
    /// Uploaded bytes, served back verbatim.
    pub image_png: Vec<u8>,
    pub upper: Option<TraceResult>,
    pub lower: Option<TraceResult>,
    pub region: Option<RegionMask>,
    pub vessels: Option<VesselMask>,
    pub audit: Vec<AuditEntry>,
}

impl Session {
    pub fn new(id: String, scan: BScan, image_png: Vec<u8>) -> Self {
        Session {
            id,
            scan,
            image_png,
            upper: None,
            lower: None,
            region: None,
            vessels: None,
            audit: Vec::new(),
        }
    }

    pub fn log(&mut self, op: &'static str, detail: serde_json::Value) {
        let seq = self.audit.len();
        self.audit.push(AuditEntry { seq, op, detail });
    }

    /// Writes every artifact the session currently holds under `root/<id>/`.
    pub fn persist(&self, root: &Path) -> choroid_core::Result<()> {
        let dir = root.join(&self.id);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("image.png"), &self.image_png)?;
        if let Some(t) = &self.upper {
            std::fs::write(dir.join("upper.json"), io::to_json_bytes(t)?)?;
        }
        if let Some(t) = &self.lower {
            std::fs::write(dir.join("lower.json"), io::to_json_bytes(t)?)?;
        }
        if let Some(r) = &self.region {
            std::fs::write(dir.join("region.png"), io::encode_mask_png(&r.pixels)?)?;
        }
        if let Some(v) = &self.vessels {
            std::fs::write(dir.join("vessels.png"), io::encode_mask_png(&v.pixels)?)?;
        }
        std::fs::write(dir.join("audit.json"), io::to_json_bytes(&self.audit)?)?;
        Ok(())
    }
}

pub type SessionHandle = Arc<Mutex<Session>>;

#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SessionHandle>>,
    persist: Option<PathBuf>,
}

impl SessionStore {
    pub fn new(persist: Option<PathBuf>) -> Self {
        SessionStore {
            sessions: RwLock::default(),
            persist,
        }
    }

    pub fn insert(&self, session: Session) -> SessionHandle {
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        self.sessions.write().unwrap().insert(id, handle.clone());
        handle
    }

    pub fn get(&self, id: &str) -> ApiResult<SessionHandle> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    pub fn remove(&self, id: &str) -> ApiResult<()> {
        self.sessions
            .write()
            .unwrap()
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    pub fn persist_dir(&self) -> Option<&Path> {
        self.persist.as_deref()
    }

    pub fn save(&self, session: &Session) -> ApiResult<()> {
        if let Some(root) = &self.persist {
            session.persist(root)?;
        }
        Ok(())
    }
}
