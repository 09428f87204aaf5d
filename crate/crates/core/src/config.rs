//! Declarative pipeline configuration (TOML).
//!
//! ```toml
//! duration_cap_secs = 1800
//! adapter = "canonical"          # omit to pick by file suffix
//! orphan_page_type = "lecture"
//! key_file = "/secure/moocdb.key"
//! jitter = false
//! statistics_file = "stats.toml"
//!
//! [resource_types]               # raw type name -> resource type
//! html = "lecture"
//! sequential = "lecture"
//! discussion = "forums"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::schema::ResourceKind;
use crate::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub duration_cap_secs: u64,
    pub adapter: Option<String>,
    pub resource_types: BTreeMap<String, ResourceKind>,
    /// Type given to page-view uris that the structure does not declare.
    pub orphan_page_type: ResourceKind,
    pub key_file: Option<PathBuf>,
    /// Shift every exported timestamp by one keyed offset (order preserving).
    pub jitter: bool,
    pub jitter_range_secs: u64,
    pub statistics_file: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            duration_cap_secs: 1800,
            adapter: None,
            resource_types: BTreeMap::new(),
            orphan_page_type: ResourceKind::Lecture,
            key_file: None,
            jitter: false,
            jitter_range_secs: 7 * 24 * 3600,
            statistics_file: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        // Relative paths inside the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.key_file, &mut cfg.statistics_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn duration_cap(&self) -> Duration {
        Duration::from_secs(self.duration_cap_secs)
    }

    /// Raw resource type name → closed resource type. Never invents a type.
    pub fn resolve_resource_kind(&self, raw: &str) -> Option<ResourceKind> {
        self.resource_types
            .get(raw)
            .copied()
            .or_else(|| raw.parse().ok())
    }
}
