//! WebSocket endpoint `/frontend` exposing a client to a debugger page.
//!
//! On connect the page receives the current `stateChanged` and
//! `catalogChanged`, then every event as it happens. Each text frame it
//! sends is one command; each command is answered with a `commandResult`.

use std::net::SocketAddr;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;

use super::api::{ClientError, CommandResult, FrontendCommand, FrontendEvent, FrontendEventRecord};
use super::ClientHandle;

pub struct FrontendServer {
    local_addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl FrontendServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}/frontend", self.local_addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

pub async fn serve_frontend(listen: &str, client: ClientHandle) -> std::io::Result<FrontendServer> {
    let listener = TcpListener::bind(listen).await?;
    let local_addr = listener.local_addr()?;
    let app = axum::Router::new().route("/frontend", get(upgrade)).with_state(client);
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let served = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = served {
            tracing::error!(error = %e, "frontend server stopped");
        }
    });
    tracing::info!(%local_addr, "frontend API listening");
    Ok(FrontendServer {
        local_addr,
        shutdown: Some(tx),
        task,
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(client): State<ClientHandle>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| serve_page(socket, client))
}

fn to_text<T: serde::Serialize>(v: &T) -> Message {
    Message::Text(serde_json::to_string(v).expect("frontend messages serialize").into())
}

async fn serve_page(socket: WebSocket, client: ClientHandle) {
    let (mut sink, mut stream) = socket.split();
    let mut events = client.events();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Message>();
    let at_ms = client.event_log().last().map(|r| r.at_ms).unwrap_or(0);
    let greeting = [
        FrontendEvent::StateChanged {
            state: Box::new(client.state()),
        },
        FrontendEvent::CatalogChanged {
            entries: client.catalog(),
        },
    ];
    for event in greeting {
        let _ = out_tx.send(to_text(&FrontendEventRecord { at_ms, event }));
    }
    let forward_tx = out_tx.clone();
    let forward = tokio::spawn(async move {
        loop {
            match events.recv().await {
                Ok(record) => {
                    if forward_tx.send(to_text(&record)).is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "frontend page lagging; events skipped");
                }
                Err(broadcast::error::RecvError::Closed) => break,
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            if sink.send(msg).await.is_err() {
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
        let result = match serde_json::from_str::<FrontendCommand>(&text) {
            Ok(cmd) => client.command(cmd).await,
            Err(e) => Err(ClientError::InvalidState(format!("bad command: {e}"))),
        };
        if out_tx.send(to_text(&CommandResult::of(result))).is_err() {
            break;
        }
    }
    forward.abort();
    writer.abort();
}
