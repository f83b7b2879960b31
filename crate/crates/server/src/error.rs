use std::net::SocketAddr;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("address {0} is already in use")]
    AddrInUse(SocketAddr),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("log directory {path}: {source}")]
    LogDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid server options: {0}")]
    Options(String),
    #[error(transparent)]
    Config(#[from] slalom_core::Error),
    #[error("server failed: {0}")]
    Serve(#[source] std::io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum CreateError {
    #[error("{0}")]
    Config(#[source] slalom_core::Error),
    #[error("session `{0}` already exists")]
    Duplicate(String),
    #[error("session id `{0}` must be 1-64 characters of [A-Za-z0-9_-]")]
    BadId(String),
    #[error("cannot open session log: {0}")]
    Log(#[source] slalom_core::Error),
}
