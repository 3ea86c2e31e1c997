//! Helpers shared by the command-line programs.

use std::path::{Path, PathBuf};

use crate::model::HarnessConfig;
use crate::netproto::PeerId;
use crate::storage::{read_config, StorageError};

/// Environment variable naming a default configuration file.
pub const CONFIG_ENV: &str = "FINJ_CONFIG";

pub fn init_logging(verbose: bool) {
    let default = if verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp_secs()
        .try_init();
}

/// Reads the configuration from `explicit`, else from `$FINJ_CONFIG`,
/// else returns the defaults.
pub fn load_config(explicit: Option<&Path>) -> Result<HarnessConfig, StorageError> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    match path {
        Some(p) => read_config(&p),
        None => Ok(HarnessConfig::default()),
    }
}

/// Parses a comma-separated `host:port` list.
pub fn parse_targets(list: &str) -> Result<Vec<PeerId>, String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}
