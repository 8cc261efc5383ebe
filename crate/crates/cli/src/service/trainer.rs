//! Training worker: owns the [`TrainState`] on its own thread, takes
//! pause/resume/stop requests over a channel and publishes snapshots.

use std::sync::mpsc::{self, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde::Serialize;
use tinyvis_core::dataset::ProjectFolder;
use tinyvis_core::model::StepReport;
use tokio::sync::broadcast;

use crate::project::{accuracy, save_checkpoint, TrainingSetup, REPORT_EVERY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Idle,
    Running,
    Paused,
    Finished,
    Stopped,
    Failed,
}

impl Phase {
    pub fn is_active(self) -> bool {
        matches!(self, Phase::Running | Phase::Paused)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainSnapshot {
    pub phase: Phase,
    pub batch: u64,
    pub epoch: u64,
    pub target_epochs: u64,
    pub loss: Option<f32>,
    pub avg_loss: Option<f32>,
    pub status: Option<String>,
    pub epoch_losses: Vec<f32>,
    pub train_images: usize,
    pub validation_images: usize,
    pub train_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub message: Option<String>,
}

impl Default for TrainSnapshot {
    fn default() -> Self {
        Self {
            phase: Phase::Idle,
            batch: 0,
            epoch: 0,
            target_epochs: 0,
            loss: None,
            avg_loss: None,
            status: None,
            epoch_losses: Vec::new(),
            train_images: 0,
            validation_images: 0,
            train_accuracy: None,
            validation_accuracy: None,
            message: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Pause,
    Resume,
    Stop,
}

pub struct Trainer {
    ctl: mpsc::Sender<Control>,
    join: Option<JoinHandle<()>>,
}

struct Publisher {
    shared: Arc<Mutex<TrainSnapshot>>,
    events: broadcast::Sender<TrainSnapshot>,
}

impl Publisher {
    fn update(&self, notify: bool, f: impl FnOnce(&mut TrainSnapshot)) {
        let snap = {
            let mut s = self.shared.lock().expect("snapshot lock");
            f(&mut s);
            s.clone()
        };
        if notify {
            let _ = self.events.send(snap);
        }
    }
}

impl Trainer {
    pub fn start(
        setup: TrainingSetup,
        project: ProjectFolder,
        shared: Arc<Mutex<TrainSnapshot>>,
        events: broadcast::Sender<TrainSnapshot>,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        let publisher = Publisher { shared, events };
        publisher.update(true, |s| {
            *s = TrainSnapshot {
                phase: Phase::Running,
                target_epochs: setup.epochs,
                train_images: setup.train.len(),
                validation_images: setup.validation.len(),
                ..TrainSnapshot::default()
            }
        });
        let join = thread::Builder::new()
            .name("trainer".into())
            .spawn(move || run(setup, project, publisher, rx))
            .expect("spawn trainer");
        Self { ctl: tx, join: Some(join) }
    }

    pub fn send(&self, c: Control) -> bool {
        self.ctl.send(c).is_ok()
    }

    /// Stops the worker and waits for it to save its checkpoint.
    pub fn stop(mut self) {
        let _ = self.ctl.send(Control::Stop);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

fn record(s: &mut TrainSnapshot, r: &StepReport) {
    s.batch = r.batch;
    s.epoch = r.epoch;
    s.loss = Some(r.loss);
    s.avg_loss = Some(r.recent_loss);
    s.status = Some(r.status.to_string());
    if let Some(l) = r.epoch_completed {
        s.epoch_losses.push(l);
    }
}

fn run(mut setup: TrainingSetup, project: ProjectFolder, out: Publisher, ctl: mpsc::Receiver<Control>) {
    let target = setup.state.epoch_counter + setup.epochs;
    let mut stopped = false;
    'train: while setup.state.epoch_counter < target {
        loop {
            let msg = if setup.state.paused {
                match ctl.recv() {
                    Ok(m) => m,
                    Err(_) => {
                        stopped = true;
                        break 'train;
                    }
                }
            } else {
                match ctl.try_recv() {
                    Ok(m) => m,
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => {
                        stopped = true;
                        break 'train;
                    }
                }
            };
            match msg {
                Control::Pause => {
                    setup.state.pause();
                    out.update(true, |s| s.phase = Phase::Paused);
                }
                Control::Resume => {
                    setup.state.resume();
                    out.update(true, |s| s.phase = Phase::Running);
                }
                Control::Stop => {
                    stopped = true;
                    break 'train;
                }
            }
        }
        match setup.state.step(&setup.train) {
            Ok(Some(r)) => {
                let notify = r.batch % REPORT_EVERY == 0 || r.epoch_completed.is_some();
                out.update(notify, |s| record(s, &r));
            }
            Ok(None) => {}
            Err(e) => {
                out.update(true, |s| {
                    s.phase = Phase::Failed;
                    s.message = Some(e.to_string());
                });
                return;
            }
        }
    }

    let weights = &setup.state.weights;
    let result = save_checkpoint(&project, weights, &setup.config.class_labels).and_then(|path| {
        let train = accuracy(weights, &setup.train)?;
        let val = accuracy(weights, &setup.validation)?;
        Ok((path, train, val))
    });
    out.update(true, |s| match result {
        Ok((path, train, val)) => {
            s.phase = if stopped { Phase::Stopped } else { Phase::Finished };
            s.train_accuracy = train;
            s.validation_accuracy = val;
            s.message = Some(format!("checkpoint saved to {}", path.display()));
        }
        Err(e) => {
            s.phase = Phase::Failed;
            s.message = Some(format!("{e:#}"));
        }
    });
}
