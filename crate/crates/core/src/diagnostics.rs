use serde::{Deserialize, Serialize};

/// Iteration summary attached to every iterative solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Seconds; always zero on targets without a monotonic clock.
    pub wall_time: f64,
}

#[cfg(not(target_arch = "wasm32"))]
pub(crate) struct Stopwatch(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    pub(crate) fn start() -> Self {
        Stopwatch(std::time::Instant::now())
    }

    pub(crate) fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(target_arch = "wasm32")]
pub(crate) struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    pub(crate) fn start() -> Self {
        Stopwatch
    }

    pub(crate) fn seconds(&self) -> f64 {
        0.0
    }
}

impl SolveDiagnostics {
    pub(crate) fn finish(
        clock: &Stopwatch,
        iterations: usize,
        final_residual: f64,
        converged: bool,
    ) -> Self {
        SolveDiagnostics {
            iterations,
            final_residual,
            converged,
            wall_time: clock.seconds(),
        }
    }
}
