use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{TraceConfig, Tracer, Tp};
use crate::clock::Clock;

const BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitCost {
    pub median_ns: f64,
    pub p99_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub iterations: usize,
    pub enabled: EmitCost,
    pub disabled: EmitCost,
}

/// Measures the per-call cost of [`Tracer::emit`] with an enabled and a
/// disabled session. Emits are timed in batches of 64 so the cost of reading
/// the clock does not dominate; each batch yields one per-emit sample.
pub fn overhead_probe(iterations: usize) -> OverheadReport {
    let iterations = iterations.max(BATCH);
    OverheadReport {
        iterations,
        enabled: measure(iterations, true),
        disabled: measure(iterations, false),
    }
}

fn measure(iterations: usize, enabled: bool) -> EmitCost {
    let tracer = Tracer::new(Clock::real());
    tracer
        .start(TraceConfig {
            enabled,
            // Overwrites after the first lap keep memory bounded.
            ring_capacity: 1 << 14,
        })
        .expect("fresh tracer");
    let batches = iterations / BATCH;
    let mut samples = Vec::with_capacity(batches);
    let mut seq = 0u64;
    for _ in 0..batches {
        let t0 = Instant::now();
        for _ in 0..BATCH {
            tracer.emit(Tp::ClientPublish, 0, 0, seq, 0);
            seq += 1;
        }
        samples.push(t0.elapsed().as_nanos() as f64 / BATCH as f64);
    }
    let _ = tracer.stop();
    samples.sort_by(|a, b| a.total_cmp(b));
    let at = |q: f64| samples[((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len()) - 1];
    EmitCost {
        median_ns: at(0.5),
        p99_ns: at(0.99),
    }
}
