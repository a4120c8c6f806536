use std::net::SocketAddr;
use std::path::PathBuf;

use fhirflow::process::{MaskKey, MASK_KEY_ENV};

use crate::ServiceError;

pub const STORE_PATH_ENV: &str = "FHIRFLOW_STORE_PATH";
pub const BIND_ADDR_ENV: &str = "FHIRFLOW_BIND_ADDR";
pub const REGISTRY_PATH_ENV: &str = "FHIRFLOW_REGISTRY_PATH";
/// Comma-separated list of allowed browser origins; unset allows any.
pub const CORS_ORIGIN_ENV: &str = "FHIRFLOW_CORS_ORIGIN";
pub const DEFAULT_BIND_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store_path: PathBuf,
    pub mask_key: MaskKey,
    pub bind_addr: SocketAddr,
    pub registry_path: Option<PathBuf>,
    pub cors_origins: Vec<String>,
    /// Defaults to `annotations.ndjson` inside the store directory.
    pub annotation_log: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(store_path: impl Into<PathBuf>, mask_key: MaskKey) -> Self {
        Self {
            store_path: store_path.into(),
            mask_key,
            bind_addr: DEFAULT_BIND_ADDR.parse().expect("valid default address"),
            registry_path: None,
            cors_origins: Vec::new(),
            annotation_log: None,
        }
    }

    pub fn from_env() -> Result<Self, ServiceError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let store = var(STORE_PATH_ENV)
            .ok_or(ServiceError::Config(format!("{STORE_PATH_ENV} is not set")))?;
        let key = MaskKey::from_env()
            .map_err(|e| ServiceError::Config(format!("{MASK_KEY_ENV}: {e}")))?;
        let mut config = Self::new(store, key);
        if let Some(addr) = var(BIND_ADDR_ENV) {
            config.bind_addr = addr
                .parse()
                .map_err(|e| ServiceError::Config(format!("{BIND_ADDR_ENV}={addr}: {e}")))?;
        }
        config.registry_path = var(REGISTRY_PATH_ENV).map(PathBuf::from);
        if let Some(origins) = var(CORS_ORIGIN_ENV) {
            config.cors_origins = origins.split(',').map(|o| o.trim().to_string()).collect();
        }
        Ok(config)
    }

    pub fn annotation_log_path(&self) -> PathBuf {
        self.annotation_log
            .clone()
            .unwrap_or_else(|| self.store_path.join(crate::annotation::LOG_FILE))
    }
}
