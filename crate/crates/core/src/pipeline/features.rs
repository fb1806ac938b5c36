use std::collections::HashMap;
use std::sync::Arc;

use crate::audiofront::{FrontendConfig, MelFrontend, MelSpectrogram};
use crate::error::Result;
use crate::toygen::{AudioTextExample, EventRegistry};

/// Log-mel features shared by every stage of a run, computed once per
/// clip and frontend.
pub struct FeatureBank {
    registry: EventRegistry,
    frontends: HashMap<[u8; 32], MelFrontend>,
    cache: HashMap<([u8; 32], String), Arc<MelSpectrogram>>,
}

impl FeatureBank {
    pub fn new(registry: EventRegistry) -> Self {
        Self { registry, frontends: HashMap::new(), cache: HashMap::new() }
    }

    pub fn registry(&self) -> &EventRegistry {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    /// Features of `ex` under `frontend`. Clip ids must be unique across
    /// everything passed to one bank.
    pub fn mel(&mut self, frontend: &FrontendConfig, sample_rate: u32, ex: &AudioTextExample) -> Result<Arc<MelSpectrogram>> {
        let fp = frontend.fingerprint(sample_rate);
        let key = (fp, ex.clip_id.clone());
        if let Some(m) = self.cache.get(&key) {
            return Ok(m.clone());
        }
        if !self.frontends.contains_key(&fp) {
            self.frontends.insert(fp, MelFrontend::new(frontend, sample_rate)?);
        }
        let mel = Arc::new(self.frontends[&fp].compute(&ex.load_audio(&self.registry)?)?);
        self.cache.insert(key, mel.clone());
        Ok(mel)
    }
}
