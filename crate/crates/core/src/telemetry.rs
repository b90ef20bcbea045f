//! Append-only telemetry log with live fan-out.
//!
//! The world and the controller append [`TelemetryFrame`]s; readers take
//! snapshots (always a consistent prefix) or subscribe to receive every frame
//! appended after the subscription, in append order. On the wire each frame
//! is one JSON object per line, e.g.
//!
//! ```text
//! {"t":12.5,"type":"segment","t0":11.5,"t1":12.5,"freq_khz":9,"mode":"RIGHT"}
//! ```

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::controller::{ModeName, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Pose {
        x_c: f64,
        y_c: f64,
        theta: f64,
    },
    Segment {
        t0: f64,
        t1: f64,
        freq_khz: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<ModeName>,
    },
    Capture {
        t0: f64,
        t1: f64,
    },
    Classification {
        label: u8,
        mode: ModeName,
    },
    /// The robot hit the arena boundary and was clamped.
    Contact {
        x_c: f64,
        y_c: f64,
    },
    /// Acknowledgement of a command received on the command channel.
    Command {
        code: u8,
        accepted: bool,
        detail: String,
    },
    /// Current registry slot after a registration or duration change.
    Registry {
        mode: ModeName,
        #[serde(default)]
        freq_khz: Option<u32>,
        #[serde(default)]
        duration_ms: Option<u32>,
    },
    Phase {
        phase: Phase,
    },
    Target {
        index: usize,
        x: f64,
        y: f64,
    },
    Mission {
        outcome: String,
        cycles: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t: f64,
    #[serde(flatten)]
    pub event: Event,
}

impl TelemetryFrame {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("telemetry frames always serialize");
        s.push('\n');
        s
    }

    pub fn from_json_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line.trim_end())
    }
}

#[derive(Debug, Default)]
struct LogInner {
    frames: Vec<TelemetryFrame>,
    subscribers: Vec<Sender<TelemetryFrame>>,
    last_t: f64,
}

/// Shared handle to a telemetry log. Clones refer to the same log.
#[derive(Debug, Clone, Default)]
pub struct TelemetryLog {
    inner: Arc<Mutex<LogInner>>,
}

impl TelemetryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a frame. Timestamps are clamped so the stream never goes back
    /// in time.
    pub fn append(&self, t: f64, event: Event) {
        let mut inner = self.inner.lock().expect("telemetry lock poisoned");
        let t = t.max(inner.last_t);
        inner.last_t = t;
        let frame = TelemetryFrame { t, event };
        inner.subscribers.retain(|s| s.send(frame.clone()).is_ok());
        inner.frames.push(frame);
    }

    /// Append at the latest timestamp seen so far, for events that happen
    /// outside the simulation clock (transport errors and the like).
    pub fn append_latest(&self, event: Event) {
        self.append(f64::NEG_INFINITY, event);
    }

    /// Receive every frame appended from now on.
    pub fn subscribe(&self) -> Receiver<TelemetryFrame> {
        let (tx, rx) = channel();
        self.inner.lock().expect("telemetry lock poisoned").subscribers.push(tx);
        rx
    }

    /// Every frame so far plus a receiver for every later frame, with no
    /// gap or overlap between the two.
    pub fn subscribe_with_history(&self) -> (Vec<TelemetryFrame>, Receiver<TelemetryFrame>) {
        let (tx, rx) = channel();
        let mut inner = self.inner.lock().expect("telemetry lock poisoned");
        inner.subscribers.push(tx);
        (inner.frames.clone(), rx)
    }

    pub fn snapshot(&self) -> Vec<TelemetryFrame> {
        self.inner.lock().expect("telemetry lock poisoned").frames.clone()
    }

    pub fn frames_since(&self, start: usize) -> Vec<TelemetryFrame> {
        let inner = self.inner.lock().expect("telemetry lock poisoned");
        inner.frames.get(start..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("telemetry lock poisoned").frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_shape() {
        let f = TelemetryFrame {
            t: 2.0,
            event: Event::Segment {
                t0: 1.0,
                t1: 2.0,
                freq_khz: 9,
                mode: Some(ModeName::Right),
            },
        };
        let line = f.to_json_line();
        assert_eq!(
            line,
            "{\"t\":2.0,\"type\":\"segment\",\"t0\":1.0,\"t1\":2.0,\"freq_khz\":9,\"mode\":\"RIGHT\"}\n"
        );
        assert_eq!(TelemetryFrame::from_json_line(&line).unwrap(), f);
    }

    #[test]
    fn timestamps_never_decrease() {
        let log = TelemetryLog::new();
        log.append(5.0, Event::Capture { t0: 4.0, t1: 5.0 });
        log.append(3.0, Event::Pose { x_c: 0.0, y_c: 0.0, theta: 0.0 });
        let frames = log.snapshot();
        assert_eq!(frames[1].t, 5.0);
    }

    #[test]
    fn subscribers_see_identical_sequences() {
        let log = TelemetryLog::new();
        log.append(0.0, Event::Phase { phase: Phase::Characterization });
        let a = log.subscribe();
        let b = log.subscribe();
        for i in 0..5 {
            log.append(i as f64, Event::Pose { x_c: i as f64, y_c: 0.0, theta: 0.0 });
        }
        drop(log);
        let fa: Vec<_> = a.iter().collect();
        let fb: Vec<_> = b.iter().collect();
        assert_eq!(fa.len(), 5);
        assert_eq!(fa, fb);
    }

    #[test]
    fn dropped_subscribers_are_pruned() {
        let log = TelemetryLog::new();
        drop(log.subscribe());
        log.append(0.0, Event::Capture { t0: 0.0, t1: 0.0 });
        assert_eq!(log.inner.lock().unwrap().subscribers.len(), 0);
        assert_eq!(log.frames_since(0).len(), 1);
        assert!(log.frames_since(7).is_empty());
    }
}
