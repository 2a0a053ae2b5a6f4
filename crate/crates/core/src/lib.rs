//! Pub/sub dataflow runtime with layered tracing and a simulated accelerator,
//! for locating and removing message-passing bottlenecks in perception
//! pipelines.

pub mod bench;
pub mod clock;
pub mod device;
pub mod graph;
pub mod hash;
pub mod kernels;
pub mod pipeline;
pub mod tracer;
