//! Process-wide time source shared by the graph runtime, the tracer and the
//! simulated device.
//!
//! Two modes exist. In [`ClockMode::Real`] time is the monotonic wall clock
//! and every modeled cost is enforced as a busy-wait floor: the charged
//! operation runs, then the thread spins until `start + cost`. When the
//! thread is descheduled across that deadline, the late exit is credited
//! against the next charge in the same callback, so a host preemption is not
//! counted as modeled work. A charge still never ends before the previous
//! deadline plus its own cost, and work that outruns its cost earns no
//! credit. In
//! [`ClockMode::Model`] no waiting happens; each thread carries a virtual
//! cursor that charged operations advance, and the executor seeds the cursor
//! from the ready time of the message it is about to deliver. Model-mode
//! latencies are therefore exact sums of the charged costs.

use std::cell::Cell;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Real,
    Model,
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(ClockMode::Real),
            "model" => Ok(ClockMode::Model),
            other => Err(format!("unknown mode '{other}' (expected real|model)")),
        }
    }
}

impl std::fmt::Display for ClockMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClockMode::Real => "real",
            ClockMode::Model => "model",
        })
    }
}

#[derive(Debug)]
pub struct Clock {
    mode: ClockMode,
    epoch: Instant,
}

pub type SharedClock = Arc<Clock>;

impl Clock {
    pub fn new(mode: ClockMode) -> SharedClock {
        Arc::new(Clock {
            mode,
            epoch: Instant::now(),
        })
    }

    pub fn real() -> SharedClock {
        Self::new(ClockMode::Real)
    }

    pub fn model() -> SharedClock {
        Self::new(ClockMode::Model)
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn is_model(&self) -> bool {
        self.mode == ClockMode::Model
    }

    /// Current time in nanoseconds. Wall time since the clock epoch in real
    /// mode, the calling thread's virtual cursor in model mode.
    #[inline]
    pub fn now(&self) -> u64 {
        match self.mode {
            ClockMode::Real => self.epoch.elapsed().as_nanos() as u64,
            ClockMode::Model => CURSOR.with(|c| c.get()),
        }
    }

    /// Runs `work` and accounts `cost_ns` for it.
    pub fn charge<R>(&self, cost_ns: u64, work: impl FnOnce() -> R) -> R {
        match self.mode {
            ClockMode::Real => {
                let start = Instant::now();
                let credit = CREDIT.with(|c| c.get()).min(cost_ns);
                let deadline = start + Duration::from_nanos(cost_ns - credit);
                let out = work();
                let mut late = 0;
                if Instant::now() < deadline {
                    spin_until(deadline);
                    late = Instant::now().saturating_duration_since(deadline).as_nanos() as u64;
                }
                CREDIT.with(|c| c.set(c.get() - credit + late));
                out
            }
            ClockMode::Model => {
                let out = work();
                advance(cost_ns);
                out
            }
        }
    }

    /// Moves the calling thread's virtual cursor. No-op in real mode.
    pub fn set_cursor(&self, ts: u64) {
        if self.mode == ClockMode::Model {
            CURSOR.with(|c| c.set(ts));
        }
    }

    /// Moves the virtual cursor forward to `ts` if it is behind.
    pub fn advance_to(&self, ts: u64) {
        if self.mode == ClockMode::Model {
            CURSOR.with(|c| c.set(c.get().max(ts)));
        }
    }
}

fn advance(ns: u64) {
    CURSOR.with(|c| c.set(c.get().saturating_add(ns)));
}

fn spin_until(deadline: Instant) {
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
}

thread_local! {
    static CURSOR: Cell<u64> = const { Cell::new(0) };
    /// Real mode: nanoseconds by which this callback's busy-waits overshot
    /// their deadlines and that later charges may absorb.
    static CREDIT: Cell<u64> = const { Cell::new(0) };
    static CURRENT: Cell<Option<CallbackScope>> = const { Cell::new(None) };
    static THREAD_ID: u32 = next_thread_id();
}

fn next_thread_id() -> u32 {
    use std::sync::atomic::{AtomicU32, Ordering};
    static NEXT: AtomicU32 = AtomicU32::new(1);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

/// Small dense id of the calling thread, stable for the thread's lifetime.
pub fn thread_id() -> u32 {
    THREAD_ID.with(|t| *t)
}

/// Identity of the callback currently executing on this thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallbackScope {
    pub node: u32,
    pub topic: u32,
    pub seq: u64,
    /// Timestamp at which the frame this callback belongs to entered the graph.
    pub origin_ts: u64,
}

pub fn current_scope() -> Option<CallbackScope> {
    CURRENT.with(|c| c.get())
}

/// Installs `scope` for the duration of `f`, restoring the previous scope
/// afterwards.
pub fn with_scope<R>(scope: CallbackScope, f: impl FnOnce() -> R) -> R {
    struct Restore(Option<CallbackScope>);
    impl Drop for Restore {
        fn drop(&mut self) {
            CURRENT.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(CURRENT.with(|c| c.replace(Some(scope))));
    CREDIT.with(|c| c.set(0));
    let out = f();
    CREDIT.with(|c| c.set(0));
    out
}
