//! Model lifecycle: download, verify, load.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use serde::Serialize;
use stlm_core::chat::Engine;
use stlm_core::modelfile::{fetch_model, load_manifest};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ModelStatus {
    Absent,
    Downloading { done: u64, total: u64 },
    Verifying,
    Loading,
    Ready { name: String },
    Error { message: String },
}

/// Where the model comes from.
#[derive(Clone, Debug)]
pub enum ModelSource {
    /// A manifest path or URL; the file is fetched into `dir`.
    Manifest { location: String, dir: PathBuf },
    /// An already present model file.
    File(PathBuf),
    /// Nothing configured; the status stays `Absent`.
    None,
}

#[derive(Default)]
pub struct ModelSlot {
    status: RwLock<Option<ModelStatus>>,
    engine: RwLock<Option<Arc<Engine>>>,
}

impl ModelSlot {
    pub fn status(&self) -> ModelStatus {
        self.status
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
            .unwrap_or(ModelStatus::Absent)
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        self.engine.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn set(&self, s: ModelStatus) {
        tracing::debug!(?s, "model status");
        *self.status.write().unwrap_or_else(|p| p.into_inner()) = Some(s);
    }

    /// Runs the whole pipeline on the calling (blocking) thread.
    pub fn prepare(&self, source: &ModelSource) {
        let result = match source {
            ModelSource::None => return,
            ModelSource::File(path) => self.load(path.clone()),
            ModelSource::Manifest { location, dir } => self.download(location, dir),
        };
        if let Err(e) = result {
            tracing::error!("model unavailable: {e}");
            self.set(ModelStatus::Error {
                message: e.to_string(),
            });
        }
    }

    fn download(&self, location: &str, dir: &std::path::Path) -> stlm_core::Result<()> {
        let manifest = load_manifest(location)?;
        let out = fetch_model(&manifest, dir, |done, total| {
            if done < total {
                self.set(ModelStatus::Downloading { done, total });
            } else {
                self.set(ModelStatus::Verifying);
            }
        })?;
        tracing::info!(path = %out.path.display(), cached = out.cached, "model verified");
        self.load(out.path)
    }

    fn load(&self, path: PathBuf) -> stlm_core::Result<()> {
        self.set(ModelStatus::Loading);
        let engine = Engine::load(&path)?;
        *self.engine.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(engine));
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.set(ModelStatus::Ready { name });
        Ok(())
    }
}
