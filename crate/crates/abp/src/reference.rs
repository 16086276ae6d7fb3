//! Cached reference marginals, keyed by model hash and tolerance.

use std::fs;
use std::io;
use std::path::Path;

use abp_core::oracle::reference_marginals;
use abp_core::{FactorGraph, OracleError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Update cap for reference runs.
pub const REFERENCE_MAX_UPDATES: u64 = 50_000_000;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("reference computation failed: {0}")]
    Oracle(#[from] OracleError),
    #[error("reference cache {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("reference cache {path}: {source}")]
    Format { path: String, source: serde_json::Error },
}

/// SHA-256 over domain sizes, scopes and the bit patterns of every table.
pub fn model_hash(graph: &FactorGraph) -> String {
    let mut h = Sha256::new();
    h.update((graph.num_variables() as u64).to_le_bytes());
    for &d in graph.domain_sizes() {
        h.update((d as u64).to_le_bytes());
    }
    h.update((graph.num_factors() as u64).to_le_bytes());
    for f in graph.factors() {
        h.update((f.arity() as u64).to_le_bytes());
        for v in f.neighbors() {
            h.update((v.0 as u64).to_le_bytes());
        }
        for x in f.log_potentials() {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub model_hash: String,
    pub epsilon: f64,
    pub marginals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCache {
    pub entries: Vec<ReferenceEntry>,
}

impl ReferenceCache {
    /// Load `path`, or an empty cache if it does not exist.
    pub fn load(path: &Path) -> Result<Self, ReferenceError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(source) => {
                return Err(ReferenceError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        serde_json::from_str(&text).map_err(|source| ReferenceError::Format {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ReferenceError> {
        let text = serde_json::to_string(self).expect("cache serializes");
        fs::write(path, text).map_err(|source| ReferenceError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn get(&self, hash: &str, epsilon: f64) -> Option<&[Vec<f64>]> {
        self.entries
            .iter()
            .find(|e| e.model_hash == hash && e.epsilon == epsilon)
            .map(|e| e.marginals.as_slice())
    }

    pub fn insert(&mut self, hash: String, epsilon: f64, marginals: Vec<Vec<f64>>) {
        self.entries.retain(|e| !(e.model_hash == hash && e.epsilon == epsilon));
        self.entries.push(ReferenceEntry {
            model_hash: hash,
            epsilon,
            marginals,
        });
    }
}

/// Reference marginals for `graph`, read from and written back to the cache
/// at `cache` when given.
pub fn cached_reference(
    graph: &FactorGraph,
    epsilon: f64,
    cache: Option<&Path>,
) -> Result<Vec<Vec<f64>>, ReferenceError> {
    let Some(path) = cache else {
        return Ok(reference_marginals(graph, epsilon, REFERENCE_MAX_UPDATES)?);
    };
    let mut store = ReferenceCache::load(path)?;
    let hash = model_hash(graph);
    if let Some(m) = store.get(&hash, epsilon) {
        return Ok(m.to_vec());
    }
    let m = reference_marginals(graph, epsilon, REFERENCE_MAX_UPDATES)?;
    store.insert(hash, epsilon, m.clone());
    store.save(path)?;
    Ok(m)
}
