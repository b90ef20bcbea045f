//! Bounded command queue between protocol sessions and the controller.
//!
//! A frequency command (1..=100) pushed directly behind another queued
//! frequency command replaces it, so a burst of slider moves costs one
//! slot. Duration arguments (the code after 203..=206) are never merged.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum QueueError {
    #[error("command queue full")]
    Full,
    #[error("command queue closed")]
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    code: u8,
    is_argument: bool,
}

#[derive(Debug, Default)]
struct Inner {
    items: VecDeque<Entry>,
    /// The most recently pushed code was an arm code.
    after_arm: bool,
    closed: bool,
    coalesced: usize,
}

#[derive(Debug)]
pub struct CommandQueue {
    inner: Mutex<Inner>,
    ready: Condvar,
    capacity: usize,
}

fn is_frequency(code: u8) -> bool {
    (1..=100).contains(&code)
}

fn is_arm(code: u8) -> bool {
    (203..=206).contains(&code)
}

impl CommandQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            inner: Mutex::new(Inner::default()),
            ready: Condvar::new(),
            capacity,
        }
    }

    pub fn push(&self, code: u8) -> Result<(), QueueError> {
        let mut g = self.inner.lock().expect("queue lock poisoned");
        if g.closed {
            return Err(QueueError::Closed);
        }
        let is_argument = g.after_arm;
        let entry = Entry { code, is_argument };
        let merge = is_frequency(code)
            && !is_argument
            && g.items.back().is_some_and(|t| is_frequency(t.code) && !t.is_argument);
        if merge {
            *g.items.back_mut().expect("checked non-empty") = entry;
            g.coalesced += 1;
        } else {
            if g.items.len() >= self.capacity {
                return Err(QueueError::Full);
            }
            g.items.push_back(entry);
        }
        g.after_arm = is_arm(code);
        drop(g);
        self.ready.notify_one();
        Ok(())
    }

    pub fn try_pop(&self) -> Option<u8> {
        self.inner.lock().expect("queue lock poisoned").items.pop_front().map(|e| e.code)
    }

    /// Wait up to `timeout` for a command.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<u8> {
        let g = self.inner.lock().expect("queue lock poisoned");
        let (mut g, _) = self
            .ready
            .wait_timeout_while(g, timeout, |i| i.items.is_empty() && !i.closed)
            .expect("queue lock poisoned");
        g.items.pop_front().map(|e| e.code)
    }

    pub fn drain(&self) -> Vec<u8> {
        self.inner
            .lock()
            .expect("queue lock poisoned")
            .items
            .drain(..)
            .map(|e| e.code)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue lock poisoned").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of frequency commands replaced by a newer one.
    pub fn coalesced(&self) -> usize {
        self.inner.lock().expect("queue lock poisoned").coalesced
    }

    pub fn close(&self) {
        self.inner.lock().expect("queue lock poisoned").closed = true;
        self.ready.notify_all();
    }
}
