//! Message bus: publish, request/reply and exact-subject subscriptions.

mod client;
mod local;
mod router;
mod ws;

use thiserror::Error;

pub use client::{BusClient, Subscription, SUBSCRIPTION_QUEUE};
pub use local::LocalBus;
pub use router::RouterStats;
pub use ws::{connect_ws, serve_gateway, GatewayHandle};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("cannot bind gateway: {0}")]
    Bind(String),
    #[error("cannot connect to gateway: {0}")]
    Connect(String),
    #[error("disconnected from the bus")]
    Disconnected,
    #[error("request timed out")]
    Timeout,
    #[error("reply target is not a request envelope")]
    NotARequest,
    #[error("payload is not JSON: {0}")]
    InvalidPayload(String),
}
