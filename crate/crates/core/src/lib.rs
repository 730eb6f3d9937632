//! Simulator and profiler for spiking-network object detection.
//!
//! The pipeline mirrors a neuromorphic deployment flow: event streams are
//! encoded into tensors ([`event`]), executed over discrete timesteps by a
//! hardware-constrained LIF runtime ([`runtime`]) on a validated network
//! ([`model`]), optionally rewritten by deployment transforms ([`transform`]),
//! decoded into detections ([`detect`]), and profiled for energy, latency and
//! spike sparsity ([`profiler`]). The [`losses`] module pins the training-side
//! loss formulas as forward-value computations so every equation is
//! numerically checkable.
//!
//! All kernels are pure functions of their inputs. With the default
//! `parallel` feature the hot loops run on rayon; disabling it yields a
//! sequential build with identical outputs.

pub mod detect;
pub mod event;
pub mod losses;
pub mod model;
pub mod profiler;
pub mod runtime;
pub mod tensor;
pub mod transform;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Caps the rayon worker pool; call once, before any parallel work. A no-op
/// in sequential builds.
#[cfg(feature = "parallel")]
pub fn configure_thread_pool(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn configure_thread_pool(_threads: usize) -> Result<()> {
    Ok(())
}
