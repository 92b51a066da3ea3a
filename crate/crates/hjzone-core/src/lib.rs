//! Safety-zone evaluation for obstacle detection stacks.
//!
//! The crate builds a backward reachable tube for an ego vehicle / contender
//! vehicle pair over a 5-D relative state grid, stores the result in a
//! versioned binary artifact, and uses it online to decide whether a detection
//! failure (a false-positive box, say) sits inside the interaction-aware
//! safety zone of the ego vehicle. A trajectory-rollout oracle provides an
//! independent ground truth for validating the zone, and the eval module
//! scores recorded detection logs against both the zone and a circular
//! stopping-distance baseline.
//!
//! Pipeline:
//!
//! 1. [`solver::solve_two_phase`] integrates the freezing-type
//!    Hamilton-Jacobi equation over a braking phase (ego pinned to its
//!    fallback deceleration) and a reaction phase (both agents free), starting
//!    from the signed-distance collision field of [`terminal`].
//! 2. [`zone::ZoneArtifact`] persists the final value function plus the solve
//!    parameters; [`zone::ZoneArtifact::classify`] answers point queries in
//!    microseconds by multilinear interpolation.
//! 3. [`eval::evaluate`] replays a detection log, matches detections to
//!    ground truth, and classifies every false positive against the zone and
//!    the circular baseline.
//! 4. [`oracle`] searches piecewise-constant control schedules by forward
//!    rollout to certify states as collision-capable, independently of the
//!    PDE machinery.

pub mod dynamics;
pub mod eval;
pub mod grid;
pub mod oracle;
pub mod params;
pub mod solver;
pub mod terminal;
pub mod zone;

pub use dynamics::{ControlBounds, PhaseSpec, RelativeState, VehicleGeometry, VehicleState};
pub use grid::{GridSpec, ScalarField};
pub use params::Params;
pub use solver::{SolveOptions, ValueFunction};
pub use zone::ZoneArtifact;

/// Runs `f` on a dedicated rayon pool with `workers` threads (0 = one thread
/// per available core). Every parallel loop in the crate produces results
/// that are a pure function of its inputs, so outputs are identical for any
/// worker count; this knob exists for benchmarking and for the determinism
/// tests that prove that claim.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("failed to build worker pool");
    pool.install(f)
}
