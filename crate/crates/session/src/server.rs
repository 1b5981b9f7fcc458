//! Fixed-tick simulation loop behind a WebSocket endpoint.
//!
//! One task owns the simulator state. Connections talk to it only through
//! channels: a newest-wins command mailbox, a control queue for recording,
//! and a broadcast of pre-encoded frames.

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tokio_tungstenite::tungstenite::http::StatusCode;
use tokio_tungstenite::tungstenite::{Message, Utf8Bytes};

use vitac_core::config::{ConfigError, PipelineConfig};
use vitac_core::dataset::{export_episode, raw::write_raw_dir};
use vitac_core::model::{TactileFrame, Timestamp, TAXEL_COLS, TAXEL_ROWS};
use vitac_core::pipeline::process;
use vitac_core::simulator::{
    initial_state, live_tactile, step, LiveRecorder, SimCommand, SimConfig, SimError, SimState, StepParams,
};

use crate::protocol::*;

pub const SESSION_PATH: &str = "/session";
/// Largest accepted episode id length.
pub const MAX_EPISODE_ID: usize = 64;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("tick rate {0} must be positive and finite")]
    BadTickRate(f64),
    #[error("cannot bind {addr}: {err}")]
    BindFailure { addr: String, err: std::io::Error },
    #[error("rig and devices of the simulator and pipeline configs differ")]
    ConfigMismatch,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation loop stopped: {0}")]
    Loop(String),
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub sim: SimConfig,
    pub pipeline: PipelineConfig,
    pub tick_hz: f64,
    /// Recordings go to `<record_dir>/<episode_id>/{raw,episode}`.
    pub record_dir: PathBuf,
}

impl SessionConfig {
    /// Simulator rig and devices are taken from the pipeline config.
    pub fn new(mut sim: SimConfig, pipeline: PipelineConfig, tick_hz: f64, record_dir: PathBuf) -> Self {
        sim.rig = pipeline.rig.clone();
        sim.devices = pipeline.devices;
        Self {
            sim,
            pipeline,
            tick_hz,
            record_dir,
        }
    }

    pub fn check(&self) -> Result<(), SessionError> {
        if !(self.tick_hz.is_finite() && self.tick_hz > 0.0) {
            return Err(SessionError::BadTickRate(self.tick_hz));
        }
        self.sim.check()?;
        self.pipeline.check()?;
        if self.sim.rig != self.pipeline.rig || self.sim.devices != self.pipeline.devices {
            return Err(SessionError::ConfigMismatch);
        }
        Ok(())
    }

    pub fn hello(&self) -> SessionMsg {
        let r = self.sim.rates;
        let rig = &self.sim.rig;
        SessionMsg::Hello {
            protocol_version: PROTOCOL_VERSION,
            rates: WireRates {
                tick_hz: self.tick_hz,
                pose: r.pose,
                tactile: r.tactile,
                marker: r.marker,
            },
            geometry: WireGeometry {
                rows: TAXEL_ROWS,
                cols: TAXEL_COLS,
                pad_size: rig.tactile.geometry.pad_size,
                width_max: rig.width_calib.width_max,
                count_ceiling: rig.tactile.count_ceiling,
            },
        }
    }
}

pub fn valid_episode_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_EPISODE_ID
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b))
}

type ConnId = u64;

enum Control {
    Start {
        conn: ConnId,
        episode_id: String,
        reply: oneshot::Sender<Result<(), Box<SessionMsg>>>,
    },
    Stop {
        conn: ConnId,
        reply: mpsc::UnboundedSender<SessionMsg>,
    },
    Disconnect {
        conn: ConnId,
    },
}

struct Recording {
    owner: ConnId,
    episode_id: String,
    log: LiveRecorder,
}

struct Shared {
    hello: Utf8Bytes,
    commands: watch::Sender<SimCommand>,
    control: mpsc::Sender<Control>,
    frames: broadcast::Sender<Utf8Bytes>,
    controller: Mutex<Option<ConnId>>,
    shutdown: watch::Receiver<bool>,
}

impl Shared {
    /// Claim command rights if nobody holds them.
    fn claim(&self, conn: ConnId) -> bool {
        let mut c = self.controller.lock().unwrap();
        match *c {
            Some(owner) => owner == conn,
            None => {
                *c = Some(conn);
                info!("connection {conn} is now the controller");
                true
            }
        }
    }

    fn release(&self, conn: ConnId) {
        let mut c = self.controller.lock().unwrap();
        if *c == Some(conn) {
            *c = None;
            self.commands.send_replace(SimCommand::default());
            info!("controller {conn} left");
        }
    }
}

/// A bound, not yet serving, session endpoint.
pub struct Session {
    listener: TcpListener,
    cfg: SessionConfig,
}

impl Session {
    pub async fn bind(addr: &str, cfg: SessionConfig) -> Result<Self, SessionError> {
        cfg.check()?;
        let listener = TcpListener::bind(addr).await.map_err(|err| SessionError::BindFailure {
            addr: addr.to_string(),
            err,
        })?;
        Ok(Self { listener, cfg })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Serve until `shutdown` resolves. An active recording is finalized
    /// before this returns.
    pub async fn serve(self, shutdown: impl Future<Output = ()>) -> Result<(), SessionError> {
        let cfg = Arc::new(self.cfg);
        let (cmd_tx, cmd_rx) = watch::channel(SimCommand::default());
        let (ctl_tx, ctl_rx) = mpsc::channel(16);
        let (frame_tx, _) = broadcast::channel(256);
        let (stop_tx, stop_rx) = watch::channel(false);
        let shared = Arc::new(Shared {
            hello: encode_msg(&cfg.hello()).into(),
            commands: cmd_tx,
            control: ctl_tx,
            frames: frame_tx.clone(),
            controller: Mutex::new(None),
            shutdown: stop_rx.clone(),
        });
        let mut sim = tokio::spawn(sim_loop(cfg.clone(), cmd_rx, ctl_rx, frame_tx, stop_rx));
        tokio::pin!(shutdown);
        let mut next_id: ConnId = 0;
        let early = loop {
            tokio::select! {
                _ = &mut shutdown => break None,
                r = &mut sim => break Some(r),
                acc = self.listener.accept() => match acc {
                    Ok((stream, peer)) => {
                        next_id += 1;
                        debug!("connection {next_id} from {peer}");
                        tokio::spawn(serve_conn(stream, next_id, shared.clone()));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                },
            }
        };
        let _ = stop_tx.send(true);
        let res = match early {
            Some(r) => r,
            None => sim.await,
        };
        res.map_err(|e| SessionError::Loop(e.to_string()))?
    }
}

/// Bind `listen` and serve until `shutdown` resolves.
pub async fn run_session(cfg: SessionConfig, listen: &str, shutdown: impl Future<Output = ()>) -> Result<(), SessionError> {
    let s = Session::bind(listen, cfg).await?;
    info!("session listening on ws://{}{SESSION_PATH}", s.local_addr());
    s.serve(shutdown).await
}

async fn sim_loop(
    cfg: Arc<SessionConfig>,
    mut commands: watch::Receiver<SimCommand>,
    mut control: mpsc::Receiver<Control>,
    frames: broadcast::Sender<Utf8Bytes>,
    mut shutdown: watch::Receiver<bool>,
) -> Result<(), SessionError> {
    let params = StepParams::from_config(&cfg.sim);
    let dt = 1.0 / cfg.tick_hz;
    let mut state = initial_state(&cfg.sim);
    let mut tick: u64 = 0;
    let mut rec: Option<Recording> = None;
    let mut jobs: Vec<JoinHandle<()>> = Vec::new();
    let mut interval = tokio::time::interval(Duration::from_secs_f64(dt));
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let result = loop {
        tokio::select! {
            _ = interval.tick() => {
                let cmd = *commands.borrow_and_update();
                let tactile = step(&state, &cmd, dt, &params)
                    .and_then(|s| {
                        state = s;
                        live_tactile(&cfg.sim, &state, Timestamp::master(state.clock)?)
                    });
                let (left, right) = match tactile {
                    Ok(lr) => lr,
                    Err(e) => break Err(SessionError::Sim(e)),
                };
                if let Some(r) = rec.as_mut() {
                    if let Err(e) = r.log.record(&state, &left, &right) {
                        warn!("recording {} dropped: {e}", r.episode_id);
                        rec = None;
                    }
                }
                let _ = frames.send(encode_msg(&SessionMsg::frame(tick, &state, cells(&left), cells(&right))).into());
                tick += 1;
            }
            Some(ctl) = control.recv() => match ctl {
                Control::Start { conn, episode_id, reply } => {
                    let r = start_recording(&cfg, &state, &rec, conn, episode_id);
                    let _ = reply.send(r.map(|new| {
                        info!("recording {} started at tick {tick}", new.episode_id);
                        rec = Some(new);
                    }));
                }
                Control::Stop { conn, reply } => match rec.take() {
                    Some(r) if r.owner == conn => {
                        jobs.retain(|j| !j.is_finished());
                        jobs.push(finalize(cfg.clone(), r, Some(reply)));
                    }
                    other => {
                        rec = other;
                        let _ = reply.send(SessionMsg::error(ERR_NOT_RECORDING, "no recording owned by this connection"));
                    }
                },
                Control::Disconnect { conn } => {
                    if rec.as_ref().is_some_and(|r| r.owner == conn) {
                        jobs.push(finalize(cfg.clone(), rec.take().unwrap(), None));
                    }
                }
            },
            _ = shutdown.changed() => break Ok(()),
        }
    };
    if let Some(r) = rec.take() {
        jobs.push(finalize(cfg.clone(), r, None));
    }
    for j in jobs {
        let _ = j.await;
    }
    result
}

fn cells(f: &TactileFrame) -> &[u16; vitac_core::model::TAXELS] {
    f.grid().cells()
}

fn start_recording(
    cfg: &SessionConfig,
    state: &SimState,
    current: &Option<Recording>,
    conn: ConnId,
    episode_id: String,
) -> Result<Recording, Box<SessionMsg>> {
    if current.is_some() {
        return Err(Box::new(SessionMsg::error(ERR_RECORDING_ACTIVE, "a recording is already running")));
    }
    if !valid_episode_id(&episode_id) {
        return Err(Box::new(SessionMsg::error(
            ERR_BAD_EPISODE_ID,
            format!("episode id {episode_id:?} must be 1-{MAX_EPISODE_ID} characters of [A-Za-z0-9._-]"),
        )));
    }
    if cfg.record_dir.join(&episode_id).exists() {
        return Err(Box::new(SessionMsg::error(ERR_BAD_EPISODE_ID, format!("episode {episode_id} already exists"))));
    }
    let log = LiveRecorder::new(&cfg.sim, state).map_err(|e| Box::new(SessionMsg::error(ERR_RECORD_FAILED, e.to_string())))?;
    Ok(Recording {
        owner: conn,
        episode_id,
        log,
    })
}

/// Write raw logs, run the pipeline and export, off the loop thread.
fn finalize(cfg: Arc<SessionConfig>, rec: Recording, reply: Option<mpsc::UnboundedSender<SessionMsg>>) -> JoinHandle<()> {
    tokio::task::spawn_blocking(move || {
        let id = rec.episode_id;
        let ticks = rec.log.ticks();
        let msg = match write_recording(&cfg, &id, rec.log) {
            Ok((dir, n_ticks)) => {
                info!("recording {id}: {ticks} live ticks -> {n_ticks} episode ticks in {}", dir.display());
                SessionMsg::Recorded {
                    dir: dir.display().to_string(),
                    n_ticks,
                }
            }
            Err(e) => {
                warn!("recording {id} failed: {e}");
                SessionMsg::error(ERR_RECORD_FAILED, e)
            }
        };
        if let Some(r) = reply {
            let _ = r.send(msg);
        }
    })
}

fn write_recording(cfg: &SessionConfig, id: &str, log: LiveRecorder) -> Result<(PathBuf, usize), String> {
    let root = cfg.record_dir.join(id);
    let raw = log.finish();
    let raw_dir = root.join("raw");
    write_raw_dir(&raw, &raw_dir).map_err(|e| format!("{}: {e}", raw_dir.display()))?;
    let ep = process(&raw, &cfg.pipeline, id).map_err(|e| e.to_string())?;
    let out = root.join("episode");
    export_episode(&ep, &out).map_err(|e| e.to_string())?;
    Ok((out, ep.n_ticks()))
}

#[allow(clippy::result_large_err)]
fn check_path(req: &Request, resp: Response) -> Result<Response, ErrorResponse> {
    if req.uri().path() == SESSION_PATH {
        Ok(resp)
    } else {
        let mut e = ErrorResponse::new(Some(format!("no endpoint at {}", req.uri().path())));
        *e.status_mut() = StatusCode::NOT_FOUND;
        Err(e)
    }
}

async fn serve_conn(stream: TcpStream, conn: ConnId, shared: Arc<Shared>) {
    let ws = match tokio_tungstenite::accept_hdr_async(stream, check_path).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!("connection {conn}: handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let mut frames = shared.frames.subscribe();
    let mut shutdown = shared.shutdown.clone();
    let (reply_tx, mut replies) = mpsc::unbounded_channel::<SessionMsg>();
    if sink.send(Message::Text(shared.hello.clone())).await.is_err() {
        return;
    }
    loop {
        let out: Option<Utf8Bytes> = tokio::select! {
            f = frames.recv() => match f {
                Ok(text) => Some(text),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    warn!("connection {conn} lagged by {n} frames");
                    None
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(m) = replies.recv() => Some(encode_msg(&m).into()),
            msg = source.next() => match msg {
                Some(Ok(Message::Text(t))) => handle(conn, t.as_bytes(), &shared, &reply_tx).await.map(|m| encode_msg(&m).into()),
                Some(Ok(Message::Binary(b))) => handle(conn, &b, &shared, &reply_tx).await.map(|m| encode_msg(&m).into()),
                Some(Ok(Message::Close(_))) | None => break,
                Some(Ok(_)) => None,
                Some(Err(e)) => {
                    debug!("connection {conn}: {e}");
                    break;
                }
            },
            _ = shutdown.changed() => {
                let _ = sink.send(Message::Close(None)).await;
                break;
            }
        };
        if let Some(text) = out {
            if sink.send(Message::Text(text)).await.is_err() {
                break;
            }
        }
    }
    shared.release(conn);
    let _ = shared.control.send(Control::Disconnect { conn }).await;
    debug!("connection {conn} closed");
}

/// Handle one client message; returns an immediate reply, if any.
async fn handle(conn: ConnId, bytes: &[u8], shared: &Shared, replies: &mpsc::UnboundedSender<SessionMsg>) -> Option<SessionMsg> {
    let msg = match decode_msg(bytes) {
        Ok(m) => m,
        Err(e) => return Some(SessionMsg::error(ERR_BAD_MESSAGE, e.to_string())),
    };
    if msg == SessionMsg::Ping {
        return Some(SessionMsg::Pong);
    }
    if !msg.from_client() {
        return Some(SessionMsg::error(ERR_UNEXPECTED, format!("{} is a server message", msg.kind())));
    }
    if !shared.claim(conn) {
        return Some(SessionMsg::error(ERR_NOT_CONTROLLER, "another connection holds command rights"));
    }
    match msg {
        SessionMsg::RecordStart { episode_id } => {
            let (tx, rx) = oneshot::channel();
            let sent = shared.control.send(Control::Start { conn, episode_id, reply: tx }).await;
            match (sent, rx.await) {
                (Ok(()), Ok(Ok(()))) => None,
                (Ok(()), Ok(Err(m))) => Some(*m),
                _ => Some(SessionMsg::error(ERR_RECORD_FAILED, "session is shutting down")),
            }
        }
        SessionMsg::RecordStop => {
            let stop = Control::Stop {
                conn,
                reply: replies.clone(),
            };
            match shared.control.send(stop).await {
                Ok(()) => None,
                Err(_) => Some(SessionMsg::error(ERR_RECORD_FAILED, "session is shutting down")),
            }
        }
        m => {
            let cmd = m.as_command().expect("remaining client message is a command");
            shared.commands.send_replace(cmd);
            None
        }
    }
}

/// Directory of a finished recording's episode.
pub fn episode_dir(record_dir: &Path, episode_id: &str) -> PathBuf {
    record_dir.join(episode_id).join("episode")
}
