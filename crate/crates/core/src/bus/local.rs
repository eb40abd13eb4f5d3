use std::sync::Arc;

use super::client::{BusClient, ClientFrame, Inbox, Link};
use super::router::{ConnId, Router, RouterStats};
use super::BusError;

/// In-process gateway with the same routing semantics as the WebSocket one.
#[derive(Clone, Default)]
pub struct LocalBus {
    router: Arc<Router>,
}

impl LocalBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn with_router(router: Arc<Router>) -> Self {
        LocalBus { router }
    }

    pub fn connect(&self) -> BusClient {
        let inbox = Arc::new(Inbox::default());
        let conn = self.router.connect(inbox.clone());
        BusClient::new(
            Box::new(LocalLink {
                router: self.router.clone(),
                conn,
            }),
            inbox,
        )
    }

    pub fn stats(&self) -> RouterStats {
        self.router.stats()
    }
}

struct LocalLink {
    router: Arc<Router>,
    conn: ConnId,
}

impl Link for LocalLink {
    fn send(&self, frame: ClientFrame) -> Result<(), BusError> {
        match frame {
            ClientFrame::Envelope(env) => self.router.route(self.conn, env),
            ClientFrame::Subscribe(subject) => self.router.subscribe(self.conn, &subject),
            ClientFrame::Unsubscribe(subject) => self.router.unsubscribe(self.conn, &subject),
        }
        Ok(())
    }

    fn close(&self) {
        self.router.disconnect(self.conn);
    }
}
