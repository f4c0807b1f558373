//! Certified lower bounds for a bilinear elliptic optimal control problem.
//!
//! The state equation `-u'' + w u = f` on `(0, 1)` is discretized with P1
//! elements. McCormick relaxations of the bilinear term, pointwise or
//! averaged on a coarse partition, are solved as sparse convex QPs and
//! tightened by bound tightening; a-priori error constants turn the relaxed
//! optima into validated lower bounds.

pub mod certificates;
pub mod cli;
pub mod convex;
pub mod error;
pub mod fem1d;
pub mod functions;
pub mod grid;
pub mod invariants;
pub mod linalg;
pub mod obbt;
pub mod oracle;
pub mod relaxation;
pub mod upper_bounds;

pub use error::{Error, Result};

/// Runs `f` on a thread pool capped by the `MCCPDE_THREADS` environment
/// variable, or on the global pool when it is unset.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let cap = std::env::var("MCCPDE_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    match cap.filter(|&n| n > 0) {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}
