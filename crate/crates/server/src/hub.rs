//! Session registry and the per-session owning loop.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use slalom_core::config::Config;
use slalom_core::log::LOG_EXTENSION;
use slalom_core::session::{
    parse_client_message, project_view, ClientError, Role, ServerMessage, Session,
};
use tokio::sync::{mpsc, oneshot, Mutex};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::error::CreateError;

/// Frames buffered per connection before views start being dropped.
pub(crate) const OUTBOX: usize = 256;

pub(crate) enum LoopMsg {
    Join {
        requested: Role,
        outbox: mpsc::Sender<String>,
        reply: oneshot::Sender<(u64, Role)>,
    },
    Leave {
        conn: u64,
    },
    /// `None` for a binary frame, which the protocol does not use.
    Client {
        conn: u64,
        text: Option<String>,
    },
}

struct Entry {
    tx: mpsc::UnboundedSender<LoopMsg>,
    close: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

#[derive(Debug, Clone)]
pub struct HubOptions {
    pub config: Config,
    pub log_dir: PathBuf,
    /// Ticks per wall-clock second; simulated time always advances `dt` per tick.
    pub tick_rate: f64,
    /// Sessions created without an explicit seed use `base_seed + n`.
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct CreatedSession {
    pub id: String,
    pub seed: u64,
    pub log: PathBuf,
}

pub struct Hub {
    options: HubOptions,
    sessions: Mutex<HashMap<String, Entry>>,
    created: AtomicU64,
}

fn valid_id(id: &str) -> bool {
    (1..=64).contains(&id.len())
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Hub {
    pub fn new(options: HubOptions) -> Arc<Self> {
        Arc::new(Self {
            options,
            sessions: Mutex::new(HashMap::new()),
            created: AtomicU64::new(0),
        })
    }

    pub fn options(&self) -> &HubOptions {
        &self.options
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.options.log_dir.join(format!("{id}.{LOG_EXTENSION}"))
    }

    /// Validates, opens the log and starts the session loop.
    pub async fn create(
        &self,
        id: Option<String>,
        seed: Option<u64>,
        config: Option<Config>,
    ) -> Result<CreatedSession, CreateError> {
        let config = config.unwrap_or_else(|| self.options.config.clone());
        config.validate().map_err(CreateError::Config)?;
        let n = self.created.fetch_add(1, Ordering::Relaxed);
        let seed = seed.unwrap_or(self.options.base_seed.wrapping_add(n));
        let id = match id {
            Some(id) if valid_id(&id) => id,
            Some(id) => return Err(CreateError::BadId(id)),
            None => format!("s{seed}-{n}"),
        };

        let mut sessions = self.sessions.lock().await;
        if sessions.contains_key(&id) {
            return Err(CreateError::Duplicate(id));
        }
        let path = self.log_path(&id);
        let session =
            Session::create(id.clone(), config, seed, || open_log(&path)).map_err(|e| match e {
                slalom_core::Error::Io { source, .. }
                    if source.kind() == std::io::ErrorKind::AlreadyExists =>
                {
                    CreateError::Duplicate(id.clone())
                }
                other => CreateError::Log(other),
            })?;
        let (tx, rx) = mpsc::unbounded_channel();
        let (close_tx, close_rx) = oneshot::channel();
        let period = Duration::from_secs_f64(1.0 / self.options.tick_rate);
        let task = tokio::spawn(run_session(session, rx, close_rx, period));
        sessions.insert(
            id.clone(),
            Entry {
                tx,
                close: Some(close_tx),
                task,
            },
        );
        tracing::info!(session = %id, seed, log = %path.display(), "session created");
        Ok(CreatedSession {
            id,
            seed,
            log: path,
        })
    }

    pub(crate) async fn sender(&self, id: &str) -> Option<mpsc::UnboundedSender<LoopMsg>> {
        self.sessions.lock().await.get(id).map(|e| e.tx.clone())
    }

    /// Ends one session, writing its end marker. Returns false if unknown.
    pub async fn close(&self, id: &str) -> bool {
        let entry = self.sessions.lock().await.remove(id);
        match entry {
            Some(entry) => {
                finish(entry).await;
                true
            }
            None => false,
        }
    }

    /// Ends every session; used on shutdown.
    pub async fn close_all(&self) {
        let entries: Vec<Entry> = self.sessions.lock().await.drain().map(|(_, e)| e).collect();
        for entry in entries {
            finish(entry).await;
        }
    }
}

async fn finish(mut entry: Entry) {
    if let Some(close) = entry.close.take() {
        let _ = close.send(());
    }
    let _ = entry.task.await;
}

fn open_log(path: &Path) -> slalom_core::Result<File> {
    OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|source| slalom_core::Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

struct Conn {
    id: u64,
    role: Role,
    outbox: mpsc::Sender<String>,
}

fn send(conn: &Conn, frame: String) {
    // A full outbox means a stalled client; it will catch up from the next view.
    let _ = conn.outbox.try_send(frame);
}

/// The single owner of a session's mutable state.
async fn run_session(
    mut session: Session<File>,
    mut rx: mpsc::UnboundedReceiver<LoopMsg>,
    mut close: oneshot::Receiver<()>,
    period: Duration,
) {
    let mut conns: Vec<Conn> = Vec::new();
    let mut next_conn = 0u64;
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            biased;
            _ = &mut close => break,
            msg = rx.recv() => match msg {
                Some(LoopMsg::Join { requested, outbox, reply }) => {
                    let role = session.join(requested);
                    next_conn += 1;
                    let conn = Conn { id: next_conn, role, outbox };
                    let view = ServerMessage::view(session.tick_index(), project_view(session.engine(), role));
                    send(&conn, view.to_json());
                    tracing::info!(session = session.id(), role = role.name(), "joined");
                    let _ = reply.send((conn.id, role));
                    conns.push(conn);
                }
                Some(LoopMsg::Leave { conn }) => {
                    if let Some(pos) = conns.iter().position(|c| c.id == conn) {
                        let c = conns.remove(pos);
                        session.leave(c.role);
                        tracing::info!(session = session.id(), role = c.role.name(), "left");
                    }
                }
                Some(LoopMsg::Client { conn, text }) => {
                    let Some(c) = conns.iter().find(|c| c.id == conn) else { continue };
                    let tick = session.tick_index();
                    let parsed = match text {
                        Some(text) => parse_client_message(&text),
                        None => Err(ClientError::Protocol { field: "$".into(), message: "binary frames are not supported".into() }),
                    };
                    let reply = match parsed.and_then(|m| session.handle(c.role, m)) {
                        Ok(ack) => ServerMessage::ack(tick, ack),
                        Err(err) => ServerMessage::error(tick, &err),
                    };
                    send(c, reply.to_json());
                }
                None => break,
            },
            _ = ticker.tick() => {
                match session.tick() {
                    Ok(Some(out)) => {
                        let influencer: Vec<String> = out.messages_for(Role::Influencer).iter().map(ServerMessage::to_json).collect();
                        let coach: Vec<String> = out.messages_for(Role::Coach).iter().map(ServerMessage::to_json).collect();
                        for c in &conns {
                            let frames = if c.role == Role::Influencer { &influencer } else { &coach };
                            for f in frames {
                                send(c, f.clone());
                            }
                        }
                    }
                    Ok(None) => {}
                    Err(err) => {
                        tracing::error!(session = session.id(), %err, "tick failed; ending session");
                        break;
                    }
                }
            }
        }
    }
    match session.close() {
        Ok(Some(event)) => {
            for c in &conns {
                if let Some(msg) = ServerMessage::event_for(c.role, &event) {
                    send(c, msg.to_json());
                }
            }
        }
        Ok(None) => {}
        Err(err) => tracing::error!(session = session.id(), %err, "failed to write end marker"),
    }
    tracing::info!(
        session = session.id(),
        ticks = session.tick_index(),
        "session ended"
    );
}
