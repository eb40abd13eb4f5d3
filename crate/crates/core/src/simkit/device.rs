//! Scripted equipment: timed value changes pushed into event sources.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::{sleep_until, Duration, Instant};

use crate::workflow::{EngineError, EngineHandle, VariableValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeviceStep {
    /// Offset from the start of the run.
    pub at_ms: u64,
    pub task_id: String,
    pub port_id: String,
    pub value: VariableValue,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceScript {
    pub steps: Vec<DeviceStep>,
}

impl DeviceScript {
    pub fn new(steps: Vec<DeviceStep>) -> Self {
        DeviceScript { steps }
    }

    /// Index of the first step scheduled before its predecessor.
    pub fn first_unordered(&self) -> Option<usize> {
        self.steps.windows(2).position(|w| w[1].at_ms < w[0].at_ms).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InjectionRecord {
    /// Milliseconds since the start of the run.
    pub at_ms: u64,
    pub task_id: String,
    pub port_id: String,
    pub context_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("step {0} is scheduled before the step preceding it")]
    Unordered(usize),
    #[error("step {step}: {source}")]
    Engine { step: usize, source: EngineError },
}

/// Inject every step at its offset; steps sharing an offset go in list order.
pub async fn run_device(script: &DeviceScript, engine: &EngineHandle) -> Result<Vec<InjectionRecord>, DeviceError> {
    if let Some(i) = script.first_unordered() {
        return Err(DeviceError::Unordered(i));
    }
    let start = Instant::now();
    let mut log = Vec::with_capacity(script.steps.len());
    for (i, step) in script.steps.iter().enumerate() {
        sleep_until(start + Duration::from_millis(step.at_ms)).await;
        let ctx = engine
            .inject(&step.task_id, &step.port_id, step.value.clone())
            .await
            .map_err(|source| DeviceError::Engine { step: i, source })?;
        log.push(InjectionRecord {
            at_ms: start.elapsed().as_millis() as u64,
            task_id: step.task_id.clone(),
            port_id: step.port_id.clone(),
            context_id: ctx.context_id.clone(),
        });
    }
    Ok(log)
}
