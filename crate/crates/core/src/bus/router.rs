use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;
use tokio::time::Instant;

use crate::protocol::{Envelope, EnvelopeKind};

/// Unanswered request correlations older than this are forgotten.
const PENDING_TTL: Duration = Duration::from_secs(600);

pub type ConnId = u64;

/// Where the gateway pushes envelopes for one connection. Must not block.
pub(crate) trait Sink: Send + Sync {
    fn deliver(&self, envelope: Envelope);
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RouterStats {
    pub connections: usize,
    pub subscriptions: usize,
    pub pending_requests: usize,
}

struct Conn {
    sink: Arc<dyn Sink>,
    subjects: HashSet<String>,
}

#[derive(Default)]
struct State {
    next_id: ConnId,
    conns: HashMap<ConnId, Conn>,
    subs: HashMap<String, BTreeSet<ConnId>>,
    pending: HashMap<String, (ConnId, Instant)>,
}

/// Gateway routing core shared by the in-process and WebSocket transports.
#[derive(Default)]
pub struct Router {
    state: Mutex<State>,
}

impl Router {
    pub(crate) fn connect(&self, sink: Arc<dyn Sink>) -> ConnId {
        let mut st = self.state.lock().unwrap();
        st.next_id += 1;
        let id = st.next_id;
        st.conns.insert(
            id,
            Conn {
                sink,
                subjects: HashSet::new(),
            },
        );
        id
    }

    pub(crate) fn disconnect(&self, id: ConnId) {
        let mut st = self.state.lock().unwrap();
        let Some(conn) = st.conns.remove(&id) else { return };
        for subject in conn.subjects {
            if let Some(set) = st.subs.get_mut(&subject) {
                set.remove(&id);
                if set.is_empty() {
                    st.subs.remove(&subject);
                }
            }
        }
        st.pending.retain(|_, (requester, _)| *requester != id);
    }

    pub(crate) fn subscribe(&self, id: ConnId, subject: &str) {
        let mut st = self.state.lock().unwrap();
        let Some(conn) = st.conns.get_mut(&id) else { return };
        conn.subjects.insert(subject.to_string());
        st.subs.entry(subject.to_string()).or_default().insert(id);
    }

    pub(crate) fn unsubscribe(&self, id: ConnId, subject: &str) {
        let mut st = self.state.lock().unwrap();
        if let Some(conn) = st.conns.get_mut(&id) {
            conn.subjects.remove(subject);
        }
        if let Some(set) = st.subs.get_mut(subject) {
            set.remove(&id);
            if set.is_empty() {
                st.subs.remove(subject);
            }
        }
    }

    /// Route one envelope sent by connection `from`.
    pub(crate) fn route(&self, from: ConnId, envelope: Envelope) {
        let mut st = self.state.lock().unwrap();
        if !st.conns.contains_key(&from) {
            return;
        }
        match envelope.kind {
            EnvelopeKind::Publish | EnvelopeKind::Request => {
                let targets: Vec<Arc<dyn Sink>> = st
                    .subs
                    .get(&envelope.subject)
                    .into_iter()
                    .flatten()
                    .filter_map(|id| st.conns.get(id).map(|c| c.sink.clone()))
                    .collect();
                if envelope.kind == EnvelopeKind::Request && !targets.is_empty() {
                    if let Some(corr) = &envelope.correlation_id {
                        let now = Instant::now();
                        st.pending.retain(|_, (_, at)| now.duration_since(*at) < PENDING_TTL);
                        st.pending.insert(corr.clone(), (from, now));
                    }
                }
                for sink in targets {
                    sink.deliver(envelope.clone());
                }
            }
            EnvelopeKind::Reply => {
                let Some(corr) = &envelope.correlation_id else { return };
                // At most one reply per correlation id reaches the requester.
                let Some((requester, _)) = st.pending.remove(corr) else {
                    tracing::debug!(%corr, "dropping reply without a pending request");
                    return;
                };
                if let Some(conn) = st.conns.get(&requester) {
                    conn.sink.deliver(envelope);
                }
            }
        }
    }

    pub fn stats(&self) -> RouterStats {
        let st = self.state.lock().unwrap();
        RouterStats {
            connections: st.conns.len(),
            subscriptions: st.subs.values().map(BTreeSet::len).sum(),
            pending_requests: st.pending.len(),
        }
    }
}
