//! WebSocket transport: gateway endpoint `/bus` and a matching client.
//!
//! Each text frame carries one envelope. Clients additionally send control
//! frames `{"op": "subscribe" | "unsubscribe", "subject": ..}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite;

use super::client::{BusClient, ClientFrame, Inbox, Link, SUBSCRIPTION_QUEUE};
use super::local::LocalBus;
use super::router::{Router, RouterStats, Sink};
use super::BusError;
use crate::protocol::Envelope;

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ControlOp {
    Subscribe,
    Unsubscribe,
}

#[derive(Debug, Serialize, Deserialize)]
struct ControlFrame {
    op: ControlOp,
    subject: String,
}

/// Running WebSocket gateway.
pub struct GatewayHandle {
    local_addr: SocketAddr,
    router: Arc<Router>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl GatewayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// `ws://` URL of the `/bus` endpoint.
    pub fn url(&self) -> String {
        format!("ws://{}/bus", self.local_addr)
    }

    pub fn stats(&self) -> RouterStats {
        self.router.stats()
    }

    /// In-process client attached to the same router.
    pub fn local_bus(&self) -> LocalBus {
        LocalBus::with_router(self.router.clone())
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Serve until the task ends (normally never).
    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

/// Bind `listen` and serve the bus endpoint.
pub async fn serve_gateway(listen: &str) -> Result<GatewayHandle, BusError> {
    let listener = TcpListener::bind(listen)
        .await
        .map_err(|e| BusError::Bind(format!("{listen}: {e}")))?;
    let local_addr = listener.local_addr().map_err(|e| BusError::Bind(e.to_string()))?;
    let router = Arc::new(Router::default());
    let app = axum::Router::new()
        .route("/bus", get(upgrade))
        .with_state(router.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let served = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = served {
            tracing::error!(error = %e, "bus gateway stopped");
        }
    });
    tracing::info!(%local_addr, "bus gateway listening");
    Ok(GatewayHandle {
        local_addr,
        router,
        shutdown: Some(tx),
        task,
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(router): State<Arc<Router>>) -> impl IntoResponse {
    ws.max_message_size(64 << 20)
        .on_upgrade(move |socket| serve_connection(socket, router))
}

struct QueueSink {
    tx: mpsc::Sender<Envelope>,
}

impl Sink for QueueSink {
    fn deliver(&self, envelope: Envelope) {
        if let Err(mpsc::error::TrySendError::Full(env)) = self.tx.try_send(envelope) {
            tracing::warn!(subject = %env.subject, "client outbound queue full, dropping envelope");
        }
    }
}

async fn serve_connection(socket: WebSocket, router: Arc<Router>) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::channel::<Envelope>(SUBSCRIPTION_QUEUE);
    let conn = router.connect(Arc::new(QueueSink { tx }));
    let writer = tokio::spawn(async move {
        while let Some(env) = rx.recv().await {
            let Ok(frame) = env.to_frame() else { continue };
            if sink.send(Message::Text(frame.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        if let Ok(ctl) = serde_json::from_str::<ControlFrame>(&text) {
            match ctl.op {
                ControlOp::Subscribe => router.subscribe(conn, &ctl.subject),
                ControlOp::Unsubscribe => router.unsubscribe(conn, &ctl.subject),
            }
            continue;
        }
        match Envelope::from_frame(&text) {
            Ok(env) => router.route(conn, env),
            Err(e) => tracing::warn!(error = %e, "ignoring malformed frame"),
        }
    }
    router.disconnect(conn);
    writer.abort();
}

struct WsLink {
    tx: mpsc::UnboundedSender<Option<String>>,
}

impl Link for WsLink {
    fn send(&self, frame: ClientFrame) -> Result<(), BusError> {
        let text = match frame {
            ClientFrame::Envelope(env) => env.to_frame().map_err(|e| BusError::InvalidPayload(e.to_string()))?,
            ClientFrame::Subscribe(subject) => control(ControlOp::Subscribe, subject),
            ClientFrame::Unsubscribe(subject) => control(ControlOp::Unsubscribe, subject),
        };
        self.tx.send(Some(text)).map_err(|_| BusError::Disconnected)
    }

    fn close(&self) {
        let _ = self.tx.send(None);
    }
}

fn control(op: ControlOp, subject: String) -> String {
    serde_json::to_string(&ControlFrame { op, subject }).expect("control frame serializes")
}

/// Connect to a gateway at `url` (e.g. `ws://127.0.0.1:7000/bus`).
pub async fn connect_ws(url: &str) -> Result<BusClient, BusError> {
    let (socket, _) = tokio_tungstenite::connect_async(url)
        .await
        .map_err(|e| BusError::Connect(format!("{url}: {e}")))?;
    let (mut sink, mut stream) = socket.split();
    let inbox = Arc::new(Inbox::default());
    let (tx, mut rx) = mpsc::unbounded_channel::<Option<String>>();
    tokio::spawn(async move {
        while let Some(Some(text)) = rx.recv().await {
            if sink.send(tungstenite::Message::Text(text.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });
    let client = BusClient::new(Box::new(WsLink { tx }), inbox.clone());
    let watcher = client.clone_weak();
    tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            if let tungstenite::Message::Text(text) = msg {
                match Envelope::from_frame(&text) {
                    Ok(env) => inbox.dispatch(env),
                    Err(e) => tracing::warn!(error = %e, "ignoring malformed frame"),
                }
            }
        }
        inbox.close();
        watcher.mark_closed();
    });
    Ok(client)
}
