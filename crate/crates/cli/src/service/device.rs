//! Single owner of the device link. API handlers queue closures; the worker
//! runs them one at a time, so two transactions never interleave on the
//! wire. Between jobs it drains unsolicited lines into the event streams.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::Serialize;
use tinyvis_core::protocol::{ClientError, DeviceClient, DeviceEvent, HeatmapFrame};
use tokio::sync::{broadcast, oneshot};

use super::ApiError;
use crate::render::{frame_rgb, DISPLAY_SCALE};

type Job = Box<dyn FnOnce(&mut DeviceClient) + Send>;

const IDLE_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapEvent {
    pub rows: usize,
    pub cols: usize,
    pub bytes: Vec<u8>,
    pub rgb: Vec<[u8; 3]>,
    pub scale: u32,
}

impl From<&HeatmapFrame> for HeatmapEvent {
    fn from(f: &HeatmapFrame) -> Self {
        Self { rows: f.rows, cols: f.cols, bytes: f.bytes.clone(), rgb: frame_rgb(f), scale: DISPLAY_SCALE }
    }
}

#[derive(Clone)]
pub struct DeviceStreams {
    pub heatmaps: broadcast::Sender<HeatmapEvent>,
    pub latest_heatmap: Arc<Mutex<Option<HeatmapEvent>>>,
    pub log: broadcast::Sender<String>,
}

impl DeviceStreams {
    pub fn new() -> Self {
        Self {
            heatmaps: broadcast::channel(64).0,
            latest_heatmap: Arc::new(Mutex::new(None)),
            log: broadcast::channel(256).0,
        }
    }

    fn publish(&self, ev: DeviceEvent) {
        match ev {
            DeviceEvent::HeatmapFrame(f) => {
                let ev = HeatmapEvent::from(&f);
                *self.latest_heatmap.lock().expect("heatmap lock") = Some(ev.clone());
                let _ = self.heatmaps.send(ev);
            }
            DeviceEvent::FreeText(line) => {
                let _ = self.log.send(line);
            }
            other => log::debug!("unsolicited {other:?}"),
        }
    }
}

impl Default for DeviceStreams {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone)]
pub struct DeviceHandle {
    jobs: mpsc::Sender<Job>,
}

impl DeviceHandle {
    pub fn spawn(mut client: DeviceClient, streams: DeviceStreams) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        thread::Builder::new()
            .name("device-worker".into())
            .spawn(move || loop {
                match rx.recv_timeout(IDLE_POLL) {
                    Ok(job) => job(&mut client),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
                while let Ok(Some(ev)) = client.poll(Duration::ZERO) {
                    streams.publish(ev);
                }
            })
            .expect("spawn device worker");
        Self { jobs: tx }
    }

    pub async fn call<T: Send + 'static>(
        &self,
        f: impl FnOnce(&mut DeviceClient) -> Result<T, ClientError> + Send + 'static,
    ) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.jobs
            .send(Box::new(move |c| {
                let _ = tx.send(f(c));
            }))
            .map_err(|_| ApiError::from(ClientError::Disconnected))?;
        rx.await.map_err(|_| ApiError::from(ClientError::Disconnected))?.map_err(ApiError::from)
    }
}
