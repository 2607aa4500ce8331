//! Service configuration file.
//!
//! ```json
//! {
//!   "port": 8080,
//!   "store": "store.femb",
//!   "autoencoder_weights": "autoencoder.fnnw",
//!   "catalog_manifest": "manifest.json",
//!   "classifiers": [{ "weights": "article.fnnw", "manifest": "article.json" }],
//!   "default_k": 5,
//!   "max_upload_bytes": 5242880,
//!   "cors_origin": "*"
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_MAX_UPLOAD: usize = 5 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub weights: PathBuf,
    /// Manifest the classifier was trained on; supplies scheme and vocabulary.
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_port")]
    pub port: u16,
    pub store: PathBuf,
    pub autoencoder_weights: PathBuf,
    /// Catalog metadata and image directory for result rows.
    pub catalog_manifest: PathBuf,
    #[serde(default)]
    pub classifiers: Vec<ClassifierConfig>,
    #[serde(default = "default_k")]
    pub default_k: usize,
    #[serde(default = "default_max_upload")]
    pub max_upload_bytes: usize,
    /// Allowed CORS origin; `*` or absent allows any.
    #[serde(default)]
    pub cors_origin: Option<String>,
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_max_upload() -> usize {
    DEFAULT_MAX_UPLOAD
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        anyhow::ensure!(config.default_k >= 1, "default_k must be at least 1");
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store);
        fix(&mut self.autoencoder_weights);
        fix(&mut self.catalog_manifest);
        for c in &mut self.classifiers {
            fix(&mut c.weights);
            fix(&mut c.manifest);
        }
    }
}
