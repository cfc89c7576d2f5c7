//! Monotonic time source shared by every pipeline layer.
//!
//! All timestamps in the crate are `f64` seconds measured from the clock's
//! origin. Two implementations exist:
//!
//! * [`MonotonicClock`] follows wall time. Sleeping yields to the runtime,
//!   busy work spins the calling thread.
//! * [`VirtualClock`] must run on a tokio runtime with paused time
//!   (`start_paused(true)`). Time only moves when every task is waiting on a
//!   timer, so spans measured in tests equal the injected latencies exactly.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use futures::future::BoxFuture;
use futures::FutureExt;
use tokio::time::Instant;

pub type SharedClock = Arc<dyn Clock>;

pub trait Clock: Send + Sync + fmt::Debug {
    /// Seconds elapsed since the clock origin.
    fn now(&self) -> f64;

    /// Suspends the calling task until `now() >= deadline`.
    fn sleep_until(&self, deadline: f64) -> BoxFuture<'static, ()>;

    /// Models CPU-bound work of the given length.
    fn busy(&self, duration: Duration) -> BoxFuture<'static, ()>;

    /// `true` when time is simulated rather than observed.
    fn is_virtual(&self) -> bool;

    fn sleep(&self, duration: Duration) -> BoxFuture<'static, ()> {
        self.sleep_until(self.now() + duration.as_secs_f64())
    }
}

fn instant_at(origin: Instant, secs: f64) -> Instant {
    if secs <= 0.0 {
        origin
    } else {
        origin + Duration::from_secs_f64(secs)
    }
}

#[derive(Debug, Clone)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }

    pub fn shared() -> SharedClock {
        Arc::new(Self::new())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep_until(&self, deadline: f64) -> BoxFuture<'static, ()> {
        tokio::time::sleep_until(instant_at(self.origin, deadline)).boxed()
    }

    fn busy(&self, duration: Duration) -> BoxFuture<'static, ()> {
        async move {
            let until = std::time::Instant::now() + duration;
            while std::time::Instant::now() < until {
                std::hint::spin_loop();
            }
        }
        .boxed()
    }

    fn is_virtual(&self) -> bool {
        false
    }
}

/// Clock driven by tokio's paused time. Busy work is modeled as a timed
/// wait so that it advances simulated time instead of burning CPU.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    origin: Instant,
}

impl VirtualClock {
    /// Must be called from within a runtime whose time is paused.
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }

    pub fn shared() -> SharedClock {
        Arc::new(Self::new())
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep_until(&self, deadline: f64) -> BoxFuture<'static, ()> {
        tokio::time::sleep_until(instant_at(self.origin, deadline)).boxed()
    }

    fn busy(&self, duration: Duration) -> BoxFuture<'static, ()> {
        tokio::time::sleep(duration).boxed()
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

/// Builds a runtime matching the clock kind: a paused single-threaded
/// runtime for virtual time, a multi-threaded one otherwise.
pub fn runtime_for(virtual_time: bool) -> std::io::Result<tokio::runtime::Runtime> {
    if virtual_time {
        tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .start_paused(true)
            .build()
    } else {
        tokio::runtime::Builder::new_multi_thread().enable_all().build()
    }
}
