use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CacheKey, ChatRequest, ChatResponse, GatewayError};

/// One file per request, named by its [`CacheKey`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredExchange {
    pub key: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// A content-addressed directory of recorded responses.
///
/// Entries are write-once: a second `put` for a key keeps the first value.
/// Files appear through an atomic link of a fully written temporary file,
/// so readers never see partial content.
#[derive(Debug, Clone)]
pub struct ResponseStore {
    dir: PathBuf,
}

fn store_err(path: &Path, err: impl std::fmt::Display) -> GatewayError {
    GatewayError::Store(format!("{}: {err}", path.display()))
}

impl ResponseStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| store_err(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<ChatResponse>, GatewayError> {
        let path = self.path(key);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let exchange: StoredExchange =
                    serde_json::from_str(&text).map_err(|e| store_err(&path, e))?;
                Ok(Some(exchange.response))
            }
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(store_err(&path, e)),
        }
    }

    /// Stores `response` unless the key already exists; returns whichever
    /// value ends up stored.
    pub fn put(&self, key: &CacheKey, req: &ChatRequest, response: &ChatResponse) -> Result<ChatResponse, GatewayError> {
        let path = self.path(key);
        let exchange = StoredExchange {
            key: key.to_string(),
            request: req.clone(),
            response: response.clone(),
        };
        let mut body = serde_json::to_string_pretty(&exchange).map_err(|e| store_err(&path, e))?;
        body.push('\n');
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| store_err(&self.dir, e))?;
        tmp.write_all(body.as_bytes()).map_err(|e| store_err(&path, e))?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(response.clone()),
            Err(e) if e.error.kind() == ErrorKind::AlreadyExists => {
                self.get(key)?.ok_or_else(|| store_err(&path, "entry vanished"))
            }
            Err(e) => Err(store_err(&path, e.error)),
        }
    }

    pub fn len(&self) -> Result<usize, GatewayError> {
        let entries = fs::read_dir(&self.dir).map_err(|e| store_err(&self.dir, e))?;
        Ok(entries
            .filter_map(Result::ok)
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count())
    }

    pub fn is_empty(&self) -> Result<bool, GatewayError> {
        Ok(self.len()? == 0)
    }
}
