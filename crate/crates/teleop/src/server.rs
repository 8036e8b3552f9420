//! HTTP and WebSocket front end around [`Sim`].
//!
//! The simulation runs in one task and owns all world state. Connection
//! handlers talk to it through channels: client events in, messages out.
//! Frames go out over a broadcast channel of depth 2, so a slow client skips
//! the oldest frames instead of stalling the simulation.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{CloseFrame, Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::protocol::{TeleopMessage, SUBPROTOCOL};
use crate::sim::{ConnId, Outgoing, Sim};
use crate::{Result, TeleopError};

const FRAME_QUEUE_DEPTH: usize = 2;
const DIRECT_QUEUE_DEPTH: usize = 64;
/// WebSocket close codes.
const CLOSE_PROTOCOL_ERROR: u16 = 1002;
const CLOSE_UNSUPPORTED_DATA: u16 = 1003;

const INDEX_HTML: &str = include_str!("index.html");

enum Event {
    Connect(ConnId, mpsc::Sender<Utf8Bytes>),
    Message(ConnId, TeleopMessage),
    Disconnect(ConnId),
}

#[derive(Clone)]
struct AppState {
    events: mpsc::Sender<Event>,
    frames: broadcast::Sender<Utf8Bytes>,
    next_id: Arc<AtomicU64>,
}

/// A running service. Dropping it leaves the service running; call
/// [`ServiceHandle::shutdown`] to stop it and get the simulation back.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: oneshot::Sender<()>,
    sim_task: JoinHandle<Result<Sim>>,
    http_task: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the loop and the HTTP server, closing any open recording.
    pub async fn shutdown(self) -> Result<Sim> {
        let _ = self.stop.send(());
        let mut sim = self.sim_task.await.map_err(|e| TeleopError::Task(e.to_string()))??;
        self.http_task.abort();
        sim.stop_recording()?;
        Ok(sim)
    }

    /// Runs until the simulation task ends (on error) or forever.
    pub async fn wait(self) -> Result<()> {
        self.sim_task.await.map_err(|e| TeleopError::Task(e.to_string()))??;
        Ok(())
    }
}

pub async fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr).await.map_err(|e| TeleopError::Bind {
        addr: addr.to_string(),
        source: e,
    })
}

/// Starts the simulation loop at its configured rate and serves `GET /`,
/// `GET /healthz` and the `/ws` endpoint on `listener`.
pub fn serve(sim: Sim, rate_hz: f64, listener: TcpListener) -> Result<ServiceHandle> {
    let addr = listener.local_addr().map_err(|e| TeleopError::Bind {
        addr: "listener".into(),
        source: e,
    })?;
    let (events_tx, events_rx) = mpsc::channel(1024);
    let (frames_tx, _) = broadcast::channel(FRAME_QUEUE_DEPTH);
    let (stop_tx, stop_rx) = oneshot::channel();

    let sim_task = tokio::spawn(sim_loop(sim, rate_hz, events_rx, frames_tx.clone(), stop_rx));
    let state = AppState {
        events: events_tx,
        frames: frames_tx,
        next_id: Arc::new(AtomicU64::new(1)),
    };
    let app = Router::new()
        .route("/", get(|| async { Html(INDEX_HTML) }))
        .route("/healthz", get(|| async { "ok" }))
        .route("/ws", get(ws_upgrade))
        .with_state(state);
    let http_task = tokio::spawn(async move { axum::serve(listener, app).await });
    log::info!("teleop service on http://{addr}");
    Ok(ServiceHandle {
        addr,
        stop: stop_tx,
        sim_task,
        http_task,
    })
}

async fn sim_loop(
    mut sim: Sim,
    rate_hz: f64,
    mut events: mpsc::Receiver<Event>,
    frames: broadcast::Sender<Utf8Bytes>,
    mut stop: oneshot::Receiver<()>,
) -> Result<Sim> {
    let mut clients: std::collections::HashMap<ConnId, mpsc::Sender<Utf8Bytes>> = Default::default();
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / rate_hz));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Burst);
    loop {
        let out = tokio::select! {
            _ = &mut stop => break,
            _ = ticker.tick() => sim.tick()?,
            ev = events.recv() => match ev {
                Some(Event::Connect(id, tx)) => {
                    clients.insert(id, tx);
                    sim.connect(id)
                }
                Some(Event::Message(id, msg)) => sim.handle(id, msg),
                Some(Event::Disconnect(id)) => {
                    clients.remove(&id);
                    sim.disconnect(id)
                }
                None => break,
            },
        };
        for o in out {
            match o {
                Outgoing::To(id, msg) => {
                    if let Some(tx) = clients.get(&id) {
                        if tx.try_send(msg.to_json().into()).is_err() {
                            log::warn!("connection {id} is not draining its queue; message dropped");
                        }
                    }
                }
                Outgoing::Broadcast(msg) => {
                    if frames.receiver_count() > 0 {
                        let _ = frames.send(msg.to_json().into());
                    }
                }
            }
        }
    }
    Ok(sim)
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.protocols([SUBPROTOCOL]).on_upgrade(move |socket| connection(socket, state))
}

/// Messages a client may send.
fn client_message(text: &str) -> std::result::Result<TeleopMessage, String> {
    let msg = TeleopMessage::from_json(text).map_err(|e| format!("malformed message: {e}"))?;
    match msg {
        TeleopMessage::Command { .. } | TeleopMessage::RecordToggle { .. } | TeleopMessage::ModeSwitch { .. } => Ok(msg),
        _ => Err("server-to-client message type sent by client".into()),
    }
}

async fn close(socket: &mut WebSocket, code: u16, mut reason: String) {
    // Control frame payloads are capped at 125 bytes, two of them the code.
    if reason.len() > 123 {
        let mut cut = 123;
        while !reason.is_char_boundary(cut) {
            cut -= 1;
        }
        reason.truncate(cut);
    }
    let frame = CloseFrame {
        code,
        reason: reason.into(),
    };
    let _ = socket.send(Message::Close(Some(frame))).await;
}

async fn connection(mut socket: WebSocket, state: AppState) {
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let mut frames = state.frames.subscribe();
    let (tx, mut direct) = mpsc::channel(DIRECT_QUEUE_DEPTH);
    if state.events.send(Event::Connect(id, tx)).await.is_err() {
        return;
    }
    // Status goes out before any frame.
    if let Some(status) = direct.recv().await {
        if socket.send(Message::Text(status)).await.is_err() {
            let _ = state.events.send(Event::Disconnect(id)).await;
            return;
        }
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => match client_message(text.as_str()) {
                    Ok(msg) => {
                        if state.events.send(Event::Message(id, msg)).await.is_err() {
                            break;
                        }
                    }
                    Err(reason) => {
                        close(&mut socket, CLOSE_PROTOCOL_ERROR, reason).await;
                        break;
                    }
                },
                Some(Ok(Message::Binary(_))) => {
                    close(&mut socket, CLOSE_UNSUPPORTED_DATA, "binary frames are not part of the protocol".into()).await;
                    break;
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            Some(msg) = direct.recv() => {
                if socket.send(Message::Text(msg)).await.is_err() {
                    break;
                }
            }
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if socket.send(Message::Text(text)).await.is_err() {
                        break;
                    }
                }
                // Older frames were overwritten; carry on with the newest.
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    let _ = state.events.send(Event::Disconnect(id)).await;
}
