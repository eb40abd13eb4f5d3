use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use tokio::sync::{mpsc, oneshot};

use super::router::Sink;
use super::BusError;
use crate::protocol::{Envelope, EnvelopeKind};

/// Per-subscription queue bound; newer envelopes are dropped when full.
pub const SUBSCRIPTION_QUEUE: usize = 10_000;

pub(crate) enum ClientFrame {
    Envelope(Envelope),
    Subscribe(String),
    Unsubscribe(String),
}

/// Outbound half of a client connection.
pub(crate) trait Link: Send + Sync {
    fn send(&self, frame: ClientFrame) -> Result<(), BusError>;
    fn close(&self);
}

#[derive(Default)]
struct InboxState {
    subs: HashMap<String, Vec<(u64, mpsc::Sender<Envelope>)>>,
    waiters: HashMap<String, oneshot::Sender<Envelope>>,
    next_sub: u64,
    closed: bool,
}

/// Inbound dispatch for one client: subscriptions and reply waiters.
#[derive(Default)]
pub(crate) struct Inbox {
    state: Mutex<InboxState>,
}

impl Inbox {
    pub(crate) fn dispatch(&self, envelope: Envelope) {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            return;
        }
        match envelope.kind {
            EnvelopeKind::Reply => {
                let waiter = envelope.correlation_id.as_ref().and_then(|c| st.waiters.remove(c));
                match waiter {
                    // A waiter that already timed out drops the reply here.
                    Some(tx) => {
                        let _ = tx.send(envelope);
                    }
                    None => tracing::debug!(subject = %envelope.subject, "late or unknown reply dropped"),
                }
            }
            EnvelopeKind::Publish | EnvelopeKind::Request => {
                let Some(list) = st.subs.get_mut(&envelope.subject) else { return };
                list.retain(|(_, tx)| !tx.is_closed());
                for (_, tx) in list.iter() {
                    if let Err(mpsc::error::TrySendError::Full(_)) = tx.try_send(envelope.clone()) {
                        tracing::warn!(subject = %envelope.subject, "subscriber queue full, dropping envelope");
                    }
                }
            }
        }
    }

    pub(crate) fn close(&self) {
        let mut st = self.state.lock().unwrap();
        st.closed = true;
        st.subs.clear();
        st.waiters.clear();
    }
}

impl Sink for Inbox {
    fn deliver(&self, envelope: Envelope) {
        self.dispatch(envelope);
    }
}

struct ClientInner {
    link: Box<dyn Link>,
    inbox: Arc<Inbox>,
    tag: String,
    next_corr: AtomicU64,
    closed: AtomicBool,
}

impl Drop for ClientInner {
    fn drop(&mut self) {
        self.link.close();
        self.inbox.close();
    }
}

/// A connection to the message bus gateway.
///
/// Clones share the connection; it closes when the last clone is dropped or
/// on [`BusClient::disconnect`].
#[derive(Clone)]
pub struct BusClient {
    inner: Arc<ClientInner>,
}

impl BusClient {
    pub(crate) fn new(link: Box<dyn Link>, inbox: Arc<Inbox>) -> Self {
        BusClient {
            inner: Arc::new(ClientInner {
                link,
                inbox,
                tag: uuid::Uuid::new_v4().simple().to_string(),
                next_corr: AtomicU64::new(0),
                closed: AtomicBool::new(false),
            }),
        }
    }

    fn check_open(&self) -> Result<(), BusError> {
        if self.inner.closed.load(Ordering::Acquire) {
            Err(BusError::Disconnected)
        } else {
            Ok(())
        }
    }

    pub fn is_connected(&self) -> bool {
        !self.inner.closed.load(Ordering::Acquire)
    }

    /// Fire-and-forget delivery to every subscriber of `subject`.
    pub fn publish(&self, subject: &str, payload: Vec<u8>) -> Result<(), BusError> {
        self.check_open()?;
        check_json(&payload)?;
        self.inner.link.send(ClientFrame::Envelope(Envelope {
            subject: subject.to_string(),
            kind: EnvelopeKind::Publish,
            correlation_id: None,
            payload,
        }))
    }

    /// Send a request and wait for the first correlated reply.
    pub async fn send_request(&self, subject: &str, payload: Vec<u8>, timeout: Duration) -> Result<Vec<u8>, BusError> {
        self.check_open()?;
        check_json(&payload)?;
        let n = self.inner.next_corr.fetch_add(1, Ordering::Relaxed);
        let corr = format!("{}-{n}", self.inner.tag);
        let (tx, rx) = oneshot::channel();
        {
            let mut st = self.inner.inbox.state.lock().unwrap();
            if st.closed {
                return Err(BusError::Disconnected);
            }
            st.waiters.insert(corr.clone(), tx);
        }
        self.inner.link.send(ClientFrame::Envelope(Envelope {
            subject: subject.to_string(),
            kind: EnvelopeKind::Request,
            correlation_id: Some(corr.clone()),
            payload,
        }))?;
        match tokio::time::timeout(timeout, rx).await {
            Ok(Ok(reply)) => Ok(reply.payload),
            Ok(Err(_)) => Err(BusError::Disconnected),
            Err(_) => {
                self.inner.inbox.state.lock().unwrap().waiters.remove(&corr);
                Err(BusError::Timeout)
            }
        }
    }

    /// Answer a request envelope received through a subscription.
    pub fn reply(&self, request: &Envelope, payload: Vec<u8>) -> Result<(), BusError> {
        self.check_open()?;
        check_json(&payload)?;
        if request.kind != EnvelopeKind::Request {
            return Err(BusError::NotARequest);
        }
        self.inner.link.send(ClientFrame::Envelope(Envelope {
            subject: request.subject.clone(),
            kind: EnvelopeKind::Reply,
            correlation_id: request.correlation_id.clone(),
            payload,
        }))
    }

    /// Subscribe with a private queue; read it with [`Subscription::recv`].
    pub fn subscribe(&self, subject: &str) -> Result<Subscription, BusError> {
        let (tx, rx) = mpsc::channel(SUBSCRIPTION_QUEUE);
        let mut sub = self.subscribe_into(subject, tx)?;
        sub.rx = Some(rx);
        Ok(sub)
    }

    /// Subscribe, forwarding envelopes into a shared queue.
    pub fn subscribe_into(&self, subject: &str, tx: mpsc::Sender<Envelope>) -> Result<Subscription, BusError> {
        self.check_open()?;
        let (id, first) = {
            let mut st = self.inner.inbox.state.lock().unwrap();
            if st.closed {
                return Err(BusError::Disconnected);
            }
            st.next_sub += 1;
            let id = st.next_sub;
            let list = st.subs.entry(subject.to_string()).or_default();
            let first = list.is_empty();
            list.push((id, tx));
            (id, first)
        };
        if first {
            self.inner.link.send(ClientFrame::Subscribe(subject.to_string()))?;
        }
        Ok(Subscription {
            subject: subject.to_string(),
            id,
            client: Arc::downgrade(&self.inner),
            rx: None,
        })
    }

    pub(crate) fn clone_weak(&self) -> WeakBusClient {
        WeakBusClient(Arc::downgrade(&self.inner))
    }

    /// Close the connection. Gateway-side subscriptions go with it.
    pub fn disconnect(&self) {
        if !self.inner.closed.swap(true, Ordering::AcqRel) {
            self.inner.link.close();
            self.inner.inbox.close();
        }
    }
}

pub(crate) struct WeakBusClient(Weak<ClientInner>);

impl WeakBusClient {
    /// The transport died underneath the client.
    pub(crate) fn mark_closed(&self) {
        if let Some(inner) = self.0.upgrade() {
            inner.closed.store(true, Ordering::Release);
        }
    }
}

fn check_json(payload: &[u8]) -> Result<(), BusError> {
    serde_json::from_slice::<serde::de::IgnoredAny>(payload)
        .map(|_| ())
        .map_err(|e| BusError::InvalidPayload(e.to_string()))
}

/// Live subscription; dropping it unsubscribes.
pub struct Subscription {
    subject: String,
    id: u64,
    client: Weak<ClientInner>,
    rx: Option<mpsc::Receiver<Envelope>>,
}

impl Subscription {
    pub fn subject(&self) -> &str {
        &self.subject
    }

    /// Next envelope on a private-queue subscription; `None` once the
    /// connection closes (or for `subscribe_into` subscriptions).
    pub async fn recv(&mut self) -> Option<Envelope> {
        match &mut self.rx {
            Some(rx) => rx.recv().await,
            None => None,
        }
    }

    pub fn try_recv(&mut self) -> Option<Envelope> {
        self.rx.as_mut().and_then(|rx| rx.try_recv().ok())
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        let Some(inner) = self.client.upgrade() else { return };
        let last = {
            let mut st = inner.inbox.state.lock().unwrap();
            match st.subs.get_mut(&self.subject) {
                Some(list) => {
                    list.retain(|(id, _)| *id != self.id);
                    let empty = list.is_empty();
                    if empty {
                        st.subs.remove(&self.subject);
                    }
                    empty
                }
                None => false,
            }
        };
        if last && !inner.closed.load(Ordering::Acquire) {
            let _ = inner.link.send(ClientFrame::Unsubscribe(self.subject.clone()));
        }
    }
}
