//! Timestamps, validity intervals and the engine clock.
//!
//! Time is kept as signed microseconds since the Unix epoch (UTC). Validity
//! intervals are half-open: a fact valid on `[from, to)` is true at `from` and
//! no longer true at `to`.

use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const EPOCH: Timestamp = Timestamp(0);
    pub const MAX: Timestamp = Timestamp(i64::MAX);

    pub fn from_micros(us: i64) -> Self {
        Timestamp(us)
    }

    pub fn from_secs(s: i64) -> Self {
        Timestamp(s.saturating_mul(1_000_000))
    }

    pub fn micros(self) -> i64 {
        self.0
    }

    pub fn saturating_add_secs(self, s: i64) -> Self {
        Timestamp(self.0.saturating_add(s.saturating_mul(1_000_000)))
    }

    pub fn now() -> Self {
        let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Timestamp(d.as_micros() as i64)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// When a fact is true in the world. `to == None` means still open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValidityInterval {
    pub from: Timestamp,
    #[serde(default)]
    pub to: Option<Timestamp>,
}

impl ValidityInterval {
    pub fn open(from: Timestamp) -> Self {
        Self { from, to: None }
    }

    pub fn closed(from: Timestamp, to: Timestamp) -> Result<Self> {
        if to < from {
            return Err(Error::InvalidInterval { from, to });
        }
        Ok(Self { from, to: Some(to) })
    }

    pub fn validate(&self) -> Result<()> {
        match self.to {
            Some(to) if to < self.from => Err(Error::InvalidInterval { from: self.from, to }),
            _ => Ok(()),
        }
    }

    pub fn is_open(&self) -> bool {
        self.to.is_none()
    }

    /// `from <= at < to`.
    pub fn contains(&self, at: Timestamp) -> bool {
        self.from <= at && self.to.map_or(true, |to| at < to)
    }

    /// Closed relative to `now`: the upper bound has been reached.
    pub fn is_closed_at(&self, now: Timestamp) -> bool {
        self.to.is_some_and(|to| to <= now)
    }

    pub fn overlaps(&self, from: Timestamp, to: Option<Timestamp>) -> bool {
        let starts_before_end = to.map_or(true, |end| self.from < end);
        let ends_after_start = self.to.map_or(true, |mine| mine > from);
        starts_before_end && ends_after_start
    }

    /// Tighten the upper bound to `min(to, at)`. Never extends, never reopens.
    pub fn tighten(&mut self, at: Timestamp) -> Result<bool> {
        if at < self.from {
            return Err(Error::BeforeValidFrom { at, from: self.from });
        }
        match self.to {
            Some(to) if to <= at => Ok(false),
            _ => {
                self.to = Some(at);
                Ok(true)
            }
        }
    }
}

pub trait Clock: Send + Sync + fmt::Debug {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

/// Test and benchmark clock. Each read returns the current value and then
/// advances by `step` microseconds (zero keeps it frozen).
#[derive(Debug)]
pub struct ManualClock {
    now: AtomicI64,
    step: i64,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self::stepping(start, 0)
    }

    pub fn stepping(start: Timestamp, step_micros: i64) -> Self {
        Self { now: AtomicI64::new(start.0), step: step_micros }
    }

    pub fn set(&self, at: Timestamp) {
        self.now.store(at.0, Ordering::SeqCst);
    }

    /// Current value without stepping.
    pub fn peek(&self) -> Timestamp {
        Timestamp(self.now.load(Ordering::SeqCst))
    }

    pub fn advance_secs(&self, secs: i64) {
        self.now.fetch_add(secs * 1_000_000, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.now.fetch_add(self.step, Ordering::SeqCst))
    }
}
