//! Listen address, store directory and engine config path.
//!
//! Each value comes from the command-line flag if given, else from the
//! environment, else from the built-in default.

use std::net::SocketAddr;
use std::path::PathBuf;

pub const ENV_LISTEN: &str = "TRIAGE_LISTEN";
pub const ENV_STORE: &str = "TRIAGE_STORE";
pub const ENV_CONFIG: &str = "TRIAGE_CONFIG";

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_STORE: &str = "triage-store";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub listen: SocketAddr,
    pub store: PathBuf,
    /// `None` runs with the default engine config.
    pub config: Option<PathBuf>,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub listen: Option<String>,
    pub store: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(flags: Flags, env: impl Fn(&str) -> Option<String>) -> Result<Settings, String> {
        let env = |name: &str| env(name).filter(|v| !v.is_empty());
        let listen_raw = flags
            .listen
            .or_else(|| env(ENV_LISTEN))
            .unwrap_or_else(|| DEFAULT_LISTEN.to_owned());
        let listen = listen_raw
            .parse()
            .map_err(|e| format!("invalid listen address `{listen_raw}`: {e}"))?;
        let store = flags
            .store
            .or_else(|| env(ENV_STORE).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE));
        let config = flags.config.or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        Ok(Settings { listen, store, config })
    }

    pub fn from_env(flags: Flags) -> Result<Settings, String> {
        Self::resolve(flags, |name| std::env::var(name).ok())
    }
}
